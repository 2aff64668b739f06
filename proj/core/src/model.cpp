#include "mars/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace mars {

namespace {

// Box-Muller over the raw 64-bit stream; avoids the implementation-defined
// behavior of std::normal_distribution.
class GaussianRng {
public:
    explicit GaussianRng(uint64_t seed) : gen_(seed) {}

    double uniform01() {  // [0, 1)
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586477 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

Tensor init_weight(GaussianRng& rng, std::vector<int> shape, double std_dev) {
    Tensor t(std::move(shape), true);
    double* d = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) d[i] = rng.normal() * std_dev;
    return t;
}

constexpr char kMagic[8] = {'M', 'A', 'R', 'S', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& os, T value) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

void write_string(std::ostream& os, const std::string& s) {
    write_le<uint32_t>(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    const uint32_t n = read_le<uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("checkpoint: truncated string");
    return s;
}

} // namespace

void ModelConfig::validate() const {
    if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1) {
        throw std::invalid_argument("config: sizes must be positive");
    }
    if (d_model % n_heads != 0) throw std::invalid_argument("config: d_model must divide by n_heads");
    if (head_dim() % 2 != 0) throw std::invalid_argument("config: head_dim must be even for rotation");
    const int ids[4] = {mask_token_id, bos_id, eos_id, pad_id};
    for (int i = 0; i < 4; ++i) {
        if (ids[i] < 0 || ids[i] >= vocab_size) throw std::invalid_argument("config: special id out of range");
        for (int j = i + 1; j < 4; ++j) {
            if (ids[i] == ids[j]) throw std::invalid_argument("config: special ids must be distinct");
        }
    }
    if (max_positions < 1) throw std::invalid_argument("config: max_positions must be positive");
}

KVCache::KVCache(const ModelConfig& config)
    : k_(static_cast<std::size_t>(config.n_layers)),
      v_(static_cast<std::size_t>(config.n_layers)),
      d_model_(config.d_model) {}

void KVCache::trim(int new_len) {
    if (new_len < 0 || new_len > committed_) throw std::invalid_argument("cache: bad trim length");
    committed_ = new_len;
    for (auto& kl : k_) kl.resize(static_cast<std::size_t>(new_len) * d_model_);
    for (auto& vl : v_) vl.resize(static_cast<std::size_t>(new_len) * d_model_);
}

void cache_extend(KVCache& cache, const PendingKV& pending, int count, int skip) {
    if (count < 0 || skip < 0 || skip + count > pending.n_new) {
        throw std::invalid_argument("cache_extend: bad range");
    }
    if (count == 0) return;
    if (pending.d_model != cache.d_model_) throw std::invalid_argument("cache_extend: width mismatch");
    const std::size_t d = static_cast<std::size_t>(cache.d_model_);
    for (std::size_t l = 0; l < cache.k_.size(); ++l) {
        const auto& pk = pending.k[l];
        const auto& pv = pending.v[l];
        cache.k_[l].insert(cache.k_[l].end(), pk.begin() + static_cast<std::ptrdiff_t>(skip * d),
                           pk.begin() + static_cast<std::ptrdiff_t>((skip + count) * d));
        cache.v_[l].insert(cache.v_[l].end(), pv.begin() + static_cast<std::ptrdiff_t>(skip * d),
                           pv.begin() + static_cast<std::ptrdiff_t>((skip + count) * d));
    }
    cache.committed_ += count;
}

Model::Model(const ModelConfig& config) : config_(config) {
    config_.validate();
    GaussianRng rng(config_.seed);
    const int d = config_.d_model, ff = config_.d_ff, v = config_.vocab_size;
    const double w_std = 0.02;

    params_.emplace_back("embed.weight", init_weight(rng, {v, d}, w_std));
    for (int l = 0; l < config_.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        params_.emplace_back(p + "attn_norm.gain", Tensor::full({d}, 1.0, true));
        params_.emplace_back(p + "attn.wq", init_weight(rng, {d, d}, w_std));
        params_.emplace_back(p + "attn.wk", init_weight(rng, {d, d}, w_std));
        params_.emplace_back(p + "attn.wv", init_weight(rng, {d, d}, w_std));
        params_.emplace_back(p + "attn.wo", init_weight(rng, {d, d}, w_std));
        params_.emplace_back(p + "mlp_norm.gain", Tensor::full({d}, 1.0, true));
        params_.emplace_back(p + "mlp.w1", init_weight(rng, {d, ff}, w_std));
        params_.emplace_back(p + "mlp.w2", init_weight(rng, {ff, d}, w_std));
    }
    params_.emplace_back("final_norm.gain", Tensor::full({d}, 1.0, true));
    if (!config_.tie_embeddings) {
        params_.emplace_back("head.weight", init_weight(rng, {d, v}, w_std));
    }
}

long Model::param_count() const {
    long n = 0;
    for (const auto& [name, t] : params_) n += static_cast<long>(t.numel());
    return n;
}

Tensor Model::param(const std::string& name) const {
    for (const auto& [n, t] : params_) {
        if (n == name) return t;
    }
    throw std::runtime_error("model: no parameter named " + name);
}

Model Model::clone() const {
    Model copy;
    copy.config_ = config_;
    for (const auto& [name, t] : params_) {
        std::vector<double> values(t.data(), t.data() + t.numel());
        copy.params_.emplace_back(name, Tensor::from(t.shape(), std::move(values), true));
    }
    return copy;
}

ForwardResult Model::forward(const ForwardRequest& request) const {
    const int n_new = static_cast<int>(request.tokens.size());
    if (n_new == 0) throw std::invalid_argument("forward: empty token list");
    if (request.positions.size() != request.tokens.size()) {
        throw std::invalid_argument("forward: positions/tokens length mismatch");
    }
    for (int p : request.positions) {
        if (p < 0 || p >= config_.max_positions) throw std::runtime_error("forward: position overflow");
    }
    const int cached = request.cache ? request.cache->committed_len() : 0;
    if (request.mask == nullptr || request.mask->rows != n_new ||
        request.mask->cols != cached + n_new) {
        throw std::invalid_argument("forward: mask shape mismatch");
    }

    const int d = config_.d_model;
    const int heads = config_.n_heads;
    const int dh = config_.head_dim();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::vector<int> positions(request.positions.begin(), request.positions.end());
    const std::vector<int> tokens(request.tokens.begin(), request.tokens.end());

    const Tensor embed = param("embed.weight");
    Tensor mask_add = request.mask->additive();

    ForwardResult result;
    result.pending.n_new = n_new;
    result.pending.d_model = d;
    result.pending.k.resize(static_cast<std::size_t>(config_.n_layers));
    result.pending.v.resize(static_cast<std::size_t>(config_.n_layers));

    Tensor x = embedding(embed, tokens);
    for (int l = 0; l < config_.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        Tensor h = rms_norm(x, param(p + "attn_norm.gain"));
        Tensor q = matmul(h, param(p + "attn.wq"));
        Tensor k = matmul(h, param(p + "attn.wk"));
        Tensor v = matmul(h, param(p + "attn.wv"));

        std::vector<Tensor> ctx_heads;
        std::vector<Tensor> k_heads, v_heads;
        ctx_heads.reserve(static_cast<std::size_t>(heads));
        for (int hd = 0; hd < heads; ++hd) {
            Tensor qh = rope(slice_cols(q, hd * dh, dh), positions);
            Tensor kh_new = rope(slice_cols(k, hd * dh, dh), positions);
            Tensor vh_new = slice_cols(v, hd * dh, dh);
            k_heads.push_back(kh_new);
            v_heads.push_back(vh_new);

            Tensor kh = kh_new, vh = vh_new;
            if (cached > 0) {
                // cached rows are constants: no gradient flows into history
                Tensor kc({cached, dh}, false), vc({cached, dh}, false);
                const auto& ck = request.cache->keys(l);
                const auto& cv = request.cache->values(l);
                for (int r = 0; r < cached; ++r) {
                    for (int c = 0; c < dh; ++c) {
                        kc.data()[static_cast<std::size_t>(r) * dh + c] =
                            ck[static_cast<std::size_t>(r) * d + hd * dh + c];
                        vc.data()[static_cast<std::size_t>(r) * dh + c] =
                            cv[static_cast<std::size_t>(r) * d + hd * dh + c];
                    }
                }
                kh = concat_rows({kc, kh_new});
                vh = concat_rows({vc, vh_new});
            }

            Tensor scores = scale(matmul(qh, transpose(kh)), att_scale);
            Tensor probs = masked_softmax(scores, mask_add);
            ctx_heads.push_back(matmul(probs, vh));
        }

        // stash this layer's new K/V for possible cache commits
        {
            Tensor k_all = concat_cols(k_heads);
            Tensor v_all = concat_cols(v_heads);
            result.pending.k[static_cast<std::size_t>(l)]
                .assign(k_all.data(), k_all.data() + k_all.numel());
            result.pending.v[static_cast<std::size_t>(l)]
                .assign(v_all.data(), v_all.data() + v_all.numel());
        }

        Tensor attn_out = matmul(concat_cols(ctx_heads), param(p + "attn.wo"));
        x = add(x, attn_out);
        Tensor h2 = rms_norm(x, param(p + "mlp_norm.gain"));
        Tensor mlp = matmul(gelu(matmul(h2, param(p + "mlp.w1"))), param(p + "mlp.w2"));
        x = add(x, mlp);
    }

    Tensor xf = rms_norm(x, param("final_norm.gain"));
    result.logits = config_.tie_embeddings ? matmul(xf, transpose(embed))
                                           : matmul(xf, param("head.weight"));
    return result;
}

void save_checkpoint(const std::string& path, const Model& model, const CheckpointMeta& meta) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    os.write(kMagic, sizeof(kMagic));
    write_le<uint32_t>(os, kVersion);

    const ModelConfig& c = model.config();
    write_le<int32_t>(os, c.n_layers);
    write_le<int32_t>(os, c.n_heads);
    write_le<int32_t>(os, c.d_model);
    write_le<int32_t>(os, c.d_ff);
    write_le<int32_t>(os, c.vocab_size);
    write_le<int32_t>(os, c.max_positions);
    write_le<int32_t>(os, c.mask_token_id);
    write_le<int32_t>(os, c.bos_id);
    write_le<int32_t>(os, c.eos_id);
    write_le<int32_t>(os, c.pad_id);
    write_le<uint8_t>(os, c.tie_embeddings ? 1 : 0);
    write_le<uint64_t>(os, c.seed);

    write_le<uint32_t>(os, static_cast<uint32_t>(model.parameters().size()));
    for (const auto& [name, t] : model.parameters()) {
        write_string(os, name);
        write_le<uint32_t>(os, static_cast<uint32_t>(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i) write_le<int32_t>(os, t.dim(i));
        for (std::size_t i = 0; i < t.numel(); ++i) {
            write_le<float>(os, static_cast<float>(t.data()[i]));
        }
    }

    write_string(os, meta.stage);
    write_le<int32_t>(os, meta.block_size);
    write_le<uint64_t>(os, meta.train_step);
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

std::pair<Model, CheckpointMeta> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("checkpoint: bad magic: " + path);
    }
    const uint32_t version = read_le<uint32_t>(is);
    if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version");

    ModelConfig c;
    c.n_layers = read_le<int32_t>(is);
    c.n_heads = read_le<int32_t>(is);
    c.d_model = read_le<int32_t>(is);
    c.d_ff = read_le<int32_t>(is);
    c.vocab_size = read_le<int32_t>(is);
    c.max_positions = read_le<int32_t>(is);
    c.mask_token_id = read_le<int32_t>(is);
    c.bos_id = read_le<int32_t>(is);
    c.eos_id = read_le<int32_t>(is);
    c.pad_id = read_le<int32_t>(is);
    c.tie_embeddings = read_le<uint8_t>(is) != 0;
    c.seed = read_le<uint64_t>(is);

    Model model(c);
    const uint32_t n_params = read_le<uint32_t>(is);
    if (n_params != model.parameters().size()) {
        throw std::runtime_error("checkpoint: parameter count mismatch");
    }
    for (auto& [name, t] : model.parameters()) {
        const std::string stored = read_string(is);
        if (stored != name) throw std::runtime_error("checkpoint: unexpected parameter " + stored);
        const uint32_t ndim = read_le<uint32_t>(is);
        if (static_cast<int>(ndim) != t.ndim()) throw std::runtime_error("checkpoint: rank mismatch");
        for (int i = 0; i < t.ndim(); ++i) {
            if (read_le<int32_t>(is) != t.dim(i)) throw std::runtime_error("checkpoint: shape mismatch");
        }
        for (std::size_t i = 0; i < t.numel(); ++i) {
            t.data()[i] = static_cast<double>(read_le<float>(is));
        }
    }

    CheckpointMeta meta;
    meta.stage = read_string(is);
    meta.block_size = read_le<int32_t>(is);
    meta.train_step = read_le<uint64_t>(is);
    return {std::move(model), std::move(meta)};
}

} // namespace mars

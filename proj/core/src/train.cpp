#include "mars/train.hpp"

#include "mars/blockmask.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace mars {

namespace {

// Per-sample CE means combined into one batch-level per-term mean:
// sum_i ce_i * n_i / sum_i n_i, built from recorded scalars so gradients
// distribute with the right weights.
Tensor weighted_mean(const std::vector<Tensor>& losses, const std::vector<int>& counts) {
    long total = 0;
    for (int c : counts) total += c;
    Tensor acc;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        if (counts[i] == 0) continue;
        Tensor term = scale(losses[i], static_cast<double>(counts[i]) / static_cast<double>(total));
        acc = acc.defined() ? add(acc, term) : term;
    }
    if (!acc.defined()) throw std::runtime_error("loss: no terms in batch");
    return acc;
}

std::vector<int> ar_target_vector(const Sample& s) {
    const int P = static_cast<int>(s.prompt.size());
    const int R = static_cast<int>(s.response.size());
    const int n = P + R;
    std::vector<int> targets(static_cast<std::size_t>(n), kIgnoreTarget);
    for (int t = 1; t <= R; ++t) {
        const int pos = P + t - 2;  // logit row predicting response token t
        if (pos >= 0) targets[static_cast<std::size_t>(pos)] = s.response[static_cast<std::size_t>(t - 1)];
    }
    return targets;
}

} // namespace

Stage parse_stage(const std::string& name) {
    if (name == "ar-sft") return Stage::ar_sft;
    if (name == "mars") return Stage::mars;
    if (name == "mars-no-sft") return Stage::mars_no_sft;
    throw std::runtime_error("train: unknown stage '" + name + "'");
}

std::string stage_name(Stage stage) {
    switch (stage) {
        case Stage::ar_sft: return "ar-sft";
        case Stage::mars: return "mars";
        case Stage::mars_no_sft: return "mars-no-sft";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) {
        throw std::invalid_argument("train: warmup_ratio must be in [0,1)");
    }
    if (B < 1) throw std::invalid_argument("train: B must be >= 1");
    if (batch_size < 1 || grad_accum < 1) throw std::invalid_argument("train: bad batch settings");
    if (max_seq_len < 2) throw std::invalid_argument("train: max_seq_len too small");
}

Sample encode_sample(const CorpusRecord& record) {
    Sample s;
    s.prompt = CharVocab::encode_prompt(record.prompt);
    s.response = CharVocab::encode_response(record.response);
    return s;
}

std::vector<Sample> encode_corpus(const Corpus& corpus) {
    std::vector<Sample> out;
    out.reserve(corpus.records.size());
    for (const auto& r : corpus.records) out.push_back(encode_sample(r));
    return out;
}

LossBundle ar_loss(const Model& model, std::span<const Sample> batch) {
    if (batch.empty()) throw std::runtime_error("ar_loss: empty batch");
    std::vector<Tensor> losses;
    std::vector<int> counts;
    for (const Sample& s : batch) {
        std::vector<int> tokens = s.prompt;
        tokens.insert(tokens.end(), s.response.begin(), s.response.end());
        const int n = static_cast<int>(tokens.size());
        std::vector<int> positions(static_cast<std::size_t>(n));
        std::iota(positions.begin(), positions.end(), 0);
        AttnMask mask = AttnMask::causal(n);
        ForwardRequest req{tokens, positions, &mask, nullptr};
        ForwardResult fwd = model.forward(req);
        std::vector<int> targets = ar_target_vector(s);
        int n_terms = 0;
        for (int t : targets) n_terms += (t != kIgnoreTarget);
        losses.push_back(cross_entropy(fwd.logits, targets, kIgnoreTarget));
        counts.push_back(n_terms);
    }
    LossBundle bundle;
    bundle.loss_ar = weighted_mean(losses, counts);
    bundle.loss_mask = Tensor::scalar(0.0);
    bundle.total = bundle.loss_ar;
    for (int c : counts) bundle.ar_terms += c;
    return bundle;
}

LossBundle mars_loss(const Model& model, std::span<const Sample> batch, int B, bool include_sft) {
    if (batch.empty()) throw std::runtime_error("mars_loss: empty batch");
    std::vector<Tensor> mask_losses, ar_losses;
    std::vector<int> mask_counts, ar_counts;
    for (const Sample& s : batch) {
        BlockLayout lay = build_training_batch(s.prompt, s.response, B, model.config());
        AttnMask mask = build_training_mask(lay.prompt_len, lay.L, B, MaskVariant::mars_causal);
        ForwardRequest req{lay.z_tokens, lay.position_ids, &mask, nullptr};
        ForwardResult fwd = model.forward(req);
        mask_losses.push_back(cross_entropy(fwd.logits, lay.mask_targets, kIgnoreTarget));
        mask_counts.push_back(lay.mask_term_count());
        ar_losses.push_back(cross_entropy(fwd.logits, lay.ar_targets, kIgnoreTarget));
        ar_counts.push_back(lay.ar_term_count());
    }
    LossBundle bundle;
    bundle.loss_mask = weighted_mean(mask_losses, mask_counts);
    bundle.loss_ar = weighted_mean(ar_losses, ar_counts);
    bundle.total = include_sft ? add(bundle.loss_mask, bundle.loss_ar) : bundle.loss_mask;
    for (int c : mask_counts) bundle.mask_terms += c;
    for (int c : ar_counts) bundle.ar_terms += c;
    return bundle;
}

double lr_at(long step, long total_steps, const TrainConfig& config) {
    if (step < 0 || step > total_steps) throw std::invalid_argument("lr_at: step out of range");
    const long warmup = static_cast<long>(config.warmup_ratio * static_cast<double>(total_steps));
    if (warmup > 0 && step <= warmup) {
        return config.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    }
    if (total_steps == warmup) return config.peak_lr;
    const double progress =
        static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
    return config.peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

AdamW::AdamW(std::vector<Tensor> params, double beta1, double beta2, double eps,
             double weight_decay)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps),
      weight_decay_(weight_decay) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        double* w = p.data();
        const double* g = p.grad();
        double* m = m_[pi].data();
        double* v = v_[pi].data();
        const std::size_t n = p.numel();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * w[i]);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

TrainResult train(Model& model, const Corpus& corpus, const TrainConfig& config,
                  const std::string& checkpoint_out, const std::string& log_path) {
    config.validate();
    if (corpus.records.empty()) throw std::runtime_error("train: corpus is empty");
    std::vector<Sample> samples = encode_corpus(corpus);

    // Layout length per sample under this stage; batches are packed by token
    // budget so doubled mars layouts halve the records per batch.
    const bool masked_stage = config.stage != Stage::ar_sft;
    auto layout_len = [&](const Sample& s) {
        const int P = static_cast<int>(s.prompt.size());
        const int R = static_cast<int>(s.response.size());
        if (!masked_stage) return P + R;
        const int L = ((R + config.B - 1) / config.B) * config.B;
        return P + 2 * L;
    };
    int longest_plain = 0;
    for (const auto& s : samples) {
        const int plain = static_cast<int>(s.prompt.size() + s.response.size());
        longest_plain = std::max(longest_plain, plain);
        if (layout_len(s) > config.max_seq_len) {
            throw std::runtime_error("train: record exceeds max_seq_len after layout construction");
        }
    }
    const long token_budget = static_cast<long>(config.batch_size) * longest_plain;

    // Pre-plan every epoch's shuffle and packing so total_steps is known
    // before the first update (the schedule needs it).
    std::mt19937_64 rng(config.seed);
    std::vector<std::vector<std::vector<int>>> plan;  // epoch -> batch -> sample index
    for (int e = 0; e < config.epochs; ++e) {
        std::vector<int> order(samples.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::vector<int>> batches;
        std::vector<int> current;
        long used = 0;
        for (int idx : order) {
            const long len = layout_len(samples[static_cast<std::size_t>(idx)]);
            if (!current.empty() && used + len > token_budget) {
                batches.push_back(std::move(current));
                current.clear();
                used = 0;
            }
            current.push_back(idx);
            used += len;
        }
        if (!current.empty()) batches.push_back(std::move(current));
        plan.push_back(std::move(batches));
    }
    long total_steps = 0;
    for (const auto& batches : plan) {
        total_steps += (static_cast<long>(batches.size()) + config.grad_accum - 1) / config.grad_accum;
    }

    std::vector<Tensor> params;
    for (auto& [name, t] : model.parameters()) params.push_back(t);
    AdamW opt(params, config.adam_beta1, config.adam_beta2, config.adam_eps, config.weight_decay);

    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path, std::ios::app);
        if (!log) throw std::runtime_error("train: cannot open log: " + log_path);
    }

    Graph::active().clear();
    opt.zero_grad();
    TrainResult result;
    long step = 0;
    for (const auto& batches : plan) {
        std::size_t bi = 0;
        while (bi < batches.size()) {
            const int accum = static_cast<int>(
                std::min<std::size_t>(config.grad_accum, batches.size() - bi));
            LossBundle last;
            for (int a = 0; a < accum; ++a, ++bi) {
                std::vector<Sample> batch;
                for (int idx : batches[bi]) batch.push_back(samples[static_cast<std::size_t>(idx)]);
                LossBundle bundle;
                switch (config.stage) {
                    case Stage::ar_sft: bundle = ar_loss(model, batch); break;
                    case Stage::mars: bundle = mars_loss(model, batch, config.B, true); break;
                    case Stage::mars_no_sft: bundle = mars_loss(model, batch, config.B, false); break;
                }
                Tensor objective = accum > 1 ? scale(bundle.total, 1.0 / accum) : bundle.total;
                backward(objective);
                last = bundle;
            }
            ++step;
            const double lr = lr_at(step, total_steps, config);
            opt.step(lr);
            opt.zero_grad();

            result.steps = step;
            result.final_total = last.total.item();
            result.final_loss_ar = last.loss_ar.item();
            result.final_loss_mask = last.loss_mask.item();
            if (log.is_open()) {
                nlohmann::ordered_json j;
                j["step"] = step;
                j["lr"] = lr;
                j["loss_ar"] = result.final_loss_ar;
                j["loss_mask"] = result.final_loss_mask;
                j["total"] = result.final_total;
                log << j.dump() << "\n";
            }
        }
    }

    if (!checkpoint_out.empty()) {
        CheckpointMeta meta;
        meta.stage = stage_name(config.stage);
        meta.block_size = masked_stage ? config.B : 0;
        meta.train_step = static_cast<uint64_t>(step);
        save_checkpoint(checkpoint_out, model, meta);
    }
    return result;
}

double corpus_perplexity(const Model& model, std::span<const Sample> samples) {
    NoGradGuard ng;
    double total_nll = 0.0;
    long total_terms = 0;
    for (const Sample& s : samples) {
        std::vector<Sample> one{s};
        LossBundle b = ar_loss(model, one);
        total_nll += b.loss_ar.item() * b.ar_terms;
        total_terms += b.ar_terms;
    }
    if (total_terms == 0) throw std::runtime_error("perplexity: no loss terms");
    return std::exp(total_nll / static_cast<double>(total_terms));
}

} // namespace mars

#pragma once

#include "mars/blockmask.hpp"
#include "mars/tensor.hpp"
#include "mars/vocab.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mars {

struct ModelConfig {
    int n_layers = 4;
    int n_heads = 4;
    int d_model = 128;
    int d_ff = 512;
    int vocab_size = CharVocab::size();
    int max_positions = 512;
    int mask_token_id = CharVocab::mask_id;
    int bos_id = CharVocab::bos_id;
    int eos_id = CharVocab::eos_id;
    int pad_id = CharVocab::pad_id;
    bool tie_embeddings = true;
    uint64_t seed = 1;

    int head_dim() const { return d_model / n_heads; }
    void validate() const;  // throws on divisibility / id-range violations
};

// Per-layer append-only key/value store. Keys are stored post-rotation
// (rotation depends only on the position, fixed at commit time), values raw.
// Rows are [len x d_model] with heads concatenated.
class KVCache {
public:
    explicit KVCache(const ModelConfig& config);

    int committed_len() const { return committed_; }
    int n_layers() const { return static_cast<int>(k_.size()); }
    const std::vector<double>& keys(int layer) const { return k_[static_cast<std::size_t>(layer)]; }
    const std::vector<double>& values(int layer) const { return v_[static_cast<std::size_t>(layer)]; }
    int d_model() const { return d_model_; }

    // trim is explicit and only ever shrinks
    void trim(int new_len);

private:
    friend void cache_extend(KVCache&, const struct PendingKV&, int count, int skip);
    std::vector<std::vector<double>> k_, v_;
    int committed_ = 0;
    int d_model_ = 0;
};

// K/V computed for the new positions of one forward pass; nothing is in the
// cache until cache_extend commits it.
struct PendingKV {
    int n_new = 0;
    int d_model = 0;
    std::vector<std::vector<double>> k, v;  // per layer, [n_new x d_model]
};

// Commits `count` positions of `pending` (starting at row `skip`) onto the
// cache. committed_len grows by count; prior entries never change.
void cache_extend(KVCache& cache, const PendingKV& pending, int count, int skip = 0);

struct ForwardRequest {
    std::span<const int> tokens;
    std::span<const int> positions;           // explicit; never inferred
    const AttnMask* mask = nullptr;           // n_new x (cached + n_new)
    const KVCache* cache = nullptr;           // optional, read-only here
};

struct ForwardResult {
    Tensor logits;     // n_new x vocab_size, right-shift convention
    PendingKV pending;
};

class Model {
public:
    explicit Model(const ModelConfig& config);  // deterministic init from config.seed

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const ModelConfig& config() const { return config_; }
    ForwardResult forward(const ForwardRequest& request) const;

    long param_count() const;
    std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
    const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
    Tensor param(const std::string& name) const;  // throws if missing
    Model clone() const;                          // deep copy

private:
    Model() = default;
    ModelConfig config_;
    std::vector<std::pair<std::string, Tensor>> params_;
};

// Versioned binary checkpoint ("MARSCKPT"). Parameter payloads are stored as
// little-endian f32; see docs/checkpoint-format.md for the exact byte layout.
struct CheckpointMeta {
    std::string stage;        // "ar-sft" | "mars" | "mars-no-sft"
    int block_size = 0;
    uint64_t train_step = 0;
};

void save_checkpoint(const std::string& path, const Model& model, const CheckpointMeta& meta);
std::pair<Model, CheckpointMeta> load_checkpoint(const std::string& path);

} // namespace mars

#pragma once

#include "mars/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace mars {

struct ModelConfig;

// Query-major visibility matrix. Entry (q, k) says whether query row q may
// attend to key column k; additive() lowers it to the 0 / kMaskedScore tensor
// the attention primitive consumes.
struct AttnMask {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> vis;

    AttnMask() = default;
    AttnMask(int r, int c) : rows(r), cols(c), vis(static_cast<std::size_t>(r) * c, 0) {}

    static AttnMask causal(int n);
    // n_new query rows over (n_cached + n_new) keys: every cached key visible,
    // causal among the new rows.
    static AttnMask decode_step(int n_new, int n_cached);

    bool visible(int q, int k) const { return vis[static_cast<std::size_t>(q) * cols + k] != 0; }
    void set(int q, int k, bool v) { vis[static_cast<std::size_t>(q) * cols + k] = v ? 1 : 0; }
    Tensor additive() const;

    bool operator==(const AttnMask& other) const = default;
};

// 1-based block index within a stream of block size B: ceil(t / B).
int block_index(int t, int B);

enum class MaskVariant {
    mars_causal,   // causal within each noisy block
    bidir_intra,   // noisy positions see their whole block (ablation)
};

// Visibility over [prompt; clean response; noisy response] of padded response
// length L (B must divide L). Prompt keys are causal for the prompt and clean
// streams and fully visible to every noisy position; clean is causal and never
// sees noisy; a noisy position sees clean blocks strictly before its own block
// and its own noisy block causally (or fully, under bidir_intra).
AttnMask build_training_mask(int prompt_len, int L, int B, MaskVariant variant);

// One training sample laid out as the concatenated z sequence. Targets are
// per-z-position token ids with kIgnoreTarget where no loss term reads.
inline constexpr int kIgnoreTarget = -1;

struct BlockLayout {
    int prompt_len = 0;
    int L = 0;        // padded response length (multiple of B)
    int L_real = 0;   // response length before padding
    int B = 0;
    std::vector<int> z_tokens;      // [prompt; x padded; MASK * L]
    std::vector<int> position_ids;  // noisy position t reuses clean position t's index
    std::vector<int> ar_targets;    // next-token targets on the clean stream
    std::vector<int> mask_targets;  // block prediction targets; block-first read clean-side
    std::vector<int> block_of;      // 0 for prompt, beta(t) for both streams

    int z_len() const { return static_cast<int>(z_tokens.size()); }
    int clean_begin() const { return prompt_len; }
    int noisy_begin() const { return prompt_len + L; }
    int mask_term_count() const;
    int ar_term_count() const;
};

BlockLayout build_training_batch(std::span<const int> prompt, std::span<const int> response,
                                 int B, const ModelConfig& config);

// AR-equivalent fraction of training signal, as exact rationals.
struct SignalRatioReport {
    int B = 0;
    long long mask_only_num = 0, mask_only_den = 1;  // 1/B
    long long combined_num = 0, combined_den = 1;    // (B+1)/(2B)
    double r_mask_only = 0.0;
    double r_combined = 0.0;
};

SignalRatioReport signal_ratios(int B);

} // namespace mars

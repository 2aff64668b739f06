#include "mars/blockmask.hpp"

#include "mars/model.hpp"

#include <numeric>
#include <stdexcept>

namespace mars {

AttnMask AttnMask::causal(int n) {
    AttnMask m(n, n);
    for (int q = 0; q < n; ++q) {
        for (int k = 0; k <= q; ++k) m.set(q, k, true);
    }
    return m;
}

AttnMask AttnMask::decode_step(int n_new, int n_cached) {
    AttnMask m(n_new, n_cached + n_new);
    for (int q = 0; q < n_new; ++q) {
        for (int k = 0; k < n_cached + q + 1; ++k) m.set(q, k, true);
    }
    return m;
}

Tensor AttnMask::additive() const {
    Tensor t({rows, cols}, false);
    double* d = t.data();
    for (std::size_t i = 0; i < vis.size(); ++i) d[i] = vis[i] ? 0.0 : kMaskedScore;
    return t;
}

int block_index(int t, int B) {
    if (t < 1 || B < 1) throw std::invalid_argument("block_index: t and B must be >= 1");
    return (t + B - 1) / B;
}

AttnMask build_training_mask(int prompt_len, int L, int B, MaskVariant variant) {
    if (prompt_len < 0 || L < 0 || B < 1) throw std::invalid_argument("build_training_mask: bad sizes");
    if (L % B != 0) throw std::invalid_argument("build_training_mask: B must divide padded L");
    const int P = prompt_len;
    const int n = P + 2 * L;
    AttnMask m(n, n);

    // prompt and clean stream: plain causal, clean never sees noisy
    for (int q = 0; q < P + L; ++q) {
        for (int k = 0; k <= q && k < P + L; ++k) m.set(q, k, true);
    }
    // noisy stream: 1-based response position t at row P + L + t - 1
    for (int t = 1; t <= L; ++t) {
        const int q = P + L + t - 1;
        const int bt = block_index(t, B);
        for (int k = 0; k < P; ++k) m.set(q, k, true);           // prompt precedes all blocks
        for (int s = 1; s <= L; ++s) {
            if (block_index(s, B) < bt) m.set(q, P + s - 1, true);  // clean cross-stream
        }
        for (int s = 1; s <= L; ++s) {
            if (block_index(s, B) != bt) continue;
            const bool ok = (variant == MaskVariant::bidir_intra) || s <= t;
            if (ok) m.set(q, P + L + s - 1, true);               // intra-block
        }
    }
    return m;
}

int BlockLayout::mask_term_count() const {
    int c = 0;
    for (int t : mask_targets) c += (t != kIgnoreTarget);
    return c;
}

int BlockLayout::ar_term_count() const {
    int c = 0;
    for (int t : ar_targets) c += (t != kIgnoreTarget);
    return c;
}

BlockLayout build_training_batch(std::span<const int> prompt, std::span<const int> response,
                                 int B, const ModelConfig& config) {
    if (B < 1) throw std::invalid_argument("build_training_batch: B must be >= 1");
    const int P = static_cast<int>(prompt.size());
    const int L_real = static_cast<int>(response.size());
    const int L = ((L_real + B - 1) / B) * B;
    const int z_len = P + 2 * L;
    if (z_len > config.max_positions || P + L > config.max_positions) {
        throw std::runtime_error("build_training_batch: layout exceeds max_positions");
    }

    BlockLayout lay;
    lay.prompt_len = P;
    lay.L = L;
    lay.L_real = L_real;
    lay.B = B;
    lay.z_tokens.assign(static_cast<std::size_t>(z_len), 0);
    lay.position_ids.assign(static_cast<std::size_t>(z_len), 0);
    lay.ar_targets.assign(static_cast<std::size_t>(z_len), kIgnoreTarget);
    lay.mask_targets.assign(static_cast<std::size_t>(z_len), kIgnoreTarget);
    lay.block_of.assign(static_cast<std::size_t>(z_len), 0);

    for (int i = 0; i < P; ++i) {
        lay.z_tokens[static_cast<std::size_t>(i)] = prompt[static_cast<std::size_t>(i)];
        lay.position_ids[static_cast<std::size_t>(i)] = i;
    }
    for (int t = 1; t <= L; ++t) {
        const int clean = P + t - 1;
        const int noisy = P + L + t - 1;
        lay.z_tokens[static_cast<std::size_t>(clean)] =
            t <= L_real ? response[static_cast<std::size_t>(t - 1)] : config.pad_id;
        lay.z_tokens[static_cast<std::size_t>(noisy)] = config.mask_token_id;
        lay.position_ids[static_cast<std::size_t>(clean)] = P + t - 1;
        lay.position_ids[static_cast<std::size_t>(noisy)] = P + t - 1;  // duplicated on purpose
        lay.block_of[static_cast<std::size_t>(clean)] = block_index(t, B);
        lay.block_of[static_cast<std::size_t>(noisy)] = block_index(t, B);
    }

    // Right-shift targets. The logit row for response token x_t sits at the
    // position directly before it: clean t-1 for the AR loss (prompt end for
    // t == 1). Mask-loss targets read from the clean side when t opens a block
    // (its context there is fully clean) and from the noisy copy of t-1
    // otherwise.
    for (int t = 1; t <= L_real; ++t) {
        const int x_t = response[static_cast<std::size_t>(t - 1)];
        const int prev_clean = P + t - 2;  // == P - 1 when t == 1
        if (prev_clean >= 0) {
            lay.ar_targets[static_cast<std::size_t>(prev_clean)] = x_t;
        }
        const bool block_first = (t - 1) % B == 0;
        if (block_first) {
            if (prev_clean >= 0) {
                lay.mask_targets[static_cast<std::size_t>(prev_clean)] = x_t;
            }
        } else {
            const int prev_noisy = P + L + t - 2;
            lay.mask_targets[static_cast<std::size_t>(prev_noisy)] = x_t;
        }
    }
    return lay;
}

SignalRatioReport signal_ratios(int B) {
    if (B < 1) throw std::invalid_argument("signal_ratios: B must be >= 1");
    SignalRatioReport r;
    r.B = B;
    r.mask_only_num = 1;
    r.mask_only_den = B;
    long long num = B + 1, den = 2LL * B;
    const long long g = std::gcd(num, den);
    r.combined_num = num / g;
    r.combined_den = den / g;
    r.r_mask_only = static_cast<double>(r.mask_only_num) / static_cast<double>(r.mask_only_den);
    r.r_combined = static_cast<double>(r.combined_num) / static_cast<double>(r.combined_den);
    return r;
}

} // namespace mars

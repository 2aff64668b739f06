#pragma once

#include "mars/model.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mars {

enum class Metric { prob, entropy, margin };

Metric parse_metric(const std::string& name);  // throws on unknown name
std::string metric_name(Metric metric);

struct DecodeParams {
    int B = 4;                 // window size
    double tau = 0.95;         // accept while score >= tau (prob/margin) or <= tau (entropy)
    Metric metric = Metric::prob;
    int max_new_tokens = 256;
    int B_cache = 16;          // batch engine cache sync granularity, must be >= B
    bool stop_at_eos = true;   // benchmarks pin generation length by clearing this

    void validate() const;
};

struct StepOutcome {
    std::vector<int> candidates;   // window-size candidate list
    std::vector<double> scores;    // per-candidate confidence
    int accepted_n = 0;            // tokens actually appended this step
    bool stopped = false;          // accepted an EOS
};

struct DecodeStats {
    long tokens_generated = 0;
    long forward_passes = 0;  // generation-phase forwards only; prompt prefill excluded
    double seconds = 0.0;     // wall-clock of the generation loop, prefill excluded
    std::vector<StepOutcome> steps;

    double tok_per_fwd() const {
        return forward_passes > 0 ? static_cast<double>(tokens_generated) / forward_passes : 0.0;
    }
};

struct DecodeResult {
    std::vector<int> tokens;
    DecodeStats stats;
};

// prob -> max entry; entropy -> Shannon entropy (natural log, 0 log 0 := 0);
// margin -> top1 - top2.
double confidence(std::span<const double> probs, Metric metric);

// Largest n such that scores[0..n) all pass the metric's accept rule,
// clamped to [1, scores.size()]: at least one token is always accepted.
int accept_prefix(std::span<const double> scores, const DecodeParams& params);

// One token per forward, greedy argmax (lowest id wins ties). Cached and
// uncached paths produce identical tokens.
DecodeResult ar_greedy(const Model& model, std::span<const int> prompt, int max_new,
                       bool use_cache, bool stop_at_eos = true);

// Sliding-window confidence decoding: forward [prefix; B masks] per step with
// pure causal attention, accept a confident prefix of the window, slide.
DecodeResult mars_decode(const Model& model, std::span<const int> prompt,
                         const DecodeParams& params);

// Fixed-point iteration over a window of random drafts; finalizes exactly the
// positions whose computation used already-correct context, so the output is
// token-identical to ar_greedy for any seed.
DecodeResult jacobi_decode(const Model& model, std::span<const int> prompt, int window_n,
                           int max_new, uint64_t seed, bool stop_at_eos = true);

// Logical commit rule of the block-level cache: the minimum accepted length
// across live samples, clamped to be monotone and to the current block end.
long block_cache_commit(const std::vector<long>& live_accepted, long committed, long block_end);

struct BatchStepTrace {
    std::vector<long> accepted_total;  // per sample, generated tokens so far
    long committed_after = 0;          // generated tokens committed by the protocol
};

struct BatchResult {
    std::vector<std::vector<int>> tokens;
    std::vector<DecodeStats> stats;
    std::vector<BatchStepTrace> trace;
    double seconds = 0.0;  // wall-clock of the shared generation loop
};

// Batched sliding-window decoding over a shared-committed-length KV cache.
// Each inner step forwards a sample's not-yet-cached accepted tokens plus B
// masks against its cache; the committed length advances by the minimum
// accepted across live samples and whole blocks commit when every live sample
// has filled the current B_cache block (faster samples idle at the boundary).
// Per-sample outputs are token-identical to mars_decode with the same params.
BatchResult batch_block_decode(const Model& model, const std::vector<std::vector<int>>& prompts,
                               const DecodeParams& params);

} // namespace mars

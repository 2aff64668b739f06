#pragma once

#include "mars/corpus.hpp"
#include "mars/decode.hpp"
#include "mars/report.hpp"

#include <string>
#include <vector>

namespace mars {

enum class EngineKind { ar, ar_nocache, mars, jacobi, batch };

EngineKind parse_engine(const std::string& name);  // throws on unknown name
std::string engine_name(EngineKind engine);

// Accuracy by exact match of the template-extracted answer span, plus the
// token accounting of the run. Wall-clock covers the generation loops only.
struct EvalCell {
    int records = 0;
    int correct = 0;
    double accuracy = 0.0;
    long tokens = 0;
    long forwards = 0;
    double tok_per_fwd = 0.0;
    double seconds = 0.0;
    double tok_per_sec = 0.0;
};

EvalCell eval_engine(const Model& model, const Corpus& corpus, EngineKind engine,
                     const DecodeParams& params, uint64_t jacobi_seed = 1, int jacobi_window = 4);

// Decode one prompt and render the generated text (specials dropped).
std::string decode_text(const Model& model, const std::string& prompt, EngineKind engine,
                        const DecodeParams& params, DecodeStats* stats_out = nullptr,
                        uint64_t jacobi_seed = 1, int jacobi_window = 4);

struct SweepSpec {
    std::vector<double> taus = {1.0, 0.95, 0.9, 0.8, 0.7, 0.6, 0.5};
    std::vector<Metric> metrics = {Metric::prob};
    std::vector<int> block_sizes = {4};
    std::vector<std::string> checkpoints;
    std::string eval_corpus;
    int max_new_tokens = 64;
};

// Grid of (tau, metric, B) x checkpoint: accuracy and tokens-per-forward per
// cell, as a CSV report.
BenchReport run_sweep(const SweepSpec& spec);

struct BenchSpec {
    std::string checkpoint;
    std::vector<int> batch_sizes = {1, 8};
    std::vector<int> cache_blocks = {4, 8, 16, 32};   // B_cache grid for the block engine
    std::vector<EngineKind> engines = {EngineKind::ar, EngineKind::mars, EngineKind::batch};
    std::vector<int> gen_lens = {256};
    std::string eval_corpus;
    int B = 4;
    double tau = 0.95;
    Metric metric = Metric::prob;
};

// Wall-clock tokens/sec per (engine, batch, B_cache, gen_len), with a
// speedup-vs-ar column. Generation length is pinned: EOS does not stop it.
BenchReport run_bench(const BenchSpec& spec);

} // namespace mars

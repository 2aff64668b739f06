#include "mars/decode.hpp"
#include "mars/train.hpp"

#include <benchmark/benchmark.h>

#include <numeric>
#include <random>

namespace {

mars::ModelConfig small_config() {
    mars::ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 64;
    cfg.d_ff = 256;
    cfg.seed = 11;
    return cfg;
}

std::vector<int> random_prompt(int len, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<int> p(static_cast<std::size_t>(len));
    p[0] = mars::CharVocab::bos_id;
    for (int i = 1; i < len; ++i) {
        p[static_cast<std::size_t>(i)] =
            mars::CharVocab::num_specials + static_cast<int>(rng() % 90);
    }
    return p;
}

void BM_matmul(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    mars::NoGradGuard ng;
    mars::Tensor a = mars::Tensor::full({n, n}, 0.5);
    mars::Tensor b = mars::Tensor::full({n, n}, 0.25);
    for (auto _ : state) {
        mars::Tensor c = mars::matmul(a, b);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2L * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_forward(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    mars::Model model(small_config());
    mars::NoGradGuard ng;
    std::vector<int> tokens = random_prompt(n, 3);
    std::vector<int> positions(tokens.size());
    std::iota(positions.begin(), positions.end(), 0);
    mars::AttnMask mask = mars::AttnMask::causal(n);
    for (auto _ : state) {
        mars::ForwardRequest req{tokens, positions, &mask, nullptr};
        mars::ForwardResult r = model.forward(req);
        benchmark::DoNotOptimize(r.logits.data());
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_forward)->Arg(32)->Arg(128);

void BM_ar_greedy_cached(benchmark::State& state) {
    mars::Model model(small_config());
    const auto prompt = random_prompt(16, 5);
    for (auto _ : state) {
        auto r = mars::ar_greedy(model, prompt, 64, true, false);
        benchmark::DoNotOptimize(r.tokens.data());
    }
    state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_ar_greedy_cached);

void BM_mars_decode(benchmark::State& state) {
    mars::Model model(small_config());
    const auto prompt = random_prompt(16, 5);
    mars::DecodeParams params;
    params.tau = 0.95;
    params.max_new_tokens = 64;
    params.stop_at_eos = false;
    for (auto _ : state) {
        auto r = mars::mars_decode(model, prompt, params);
        benchmark::DoNotOptimize(r.tokens.data());
    }
    state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_mars_decode);

void BM_batch_block_decode(benchmark::State& state) {
    mars::Model model(small_config());
    std::vector<std::vector<int>> prompts;
    for (int i = 0; i < 4; ++i) prompts.push_back(random_prompt(16, 5 + i));
    mars::DecodeParams params;
    params.tau = 0.95;
    params.B_cache = static_cast<int>(state.range(0));
    params.max_new_tokens = 64;
    params.stop_at_eos = false;
    for (auto _ : state) {
        auto r = mars::batch_block_decode(model, prompts, params);
        benchmark::DoNotOptimize(r.tokens.data());
    }
    state.SetItemsProcessed(state.iterations() * 64 * 4);
}
BENCHMARK(BM_batch_block_decode)->Arg(8)->Arg(32);

} // namespace

BENCHMARK_MAIN();

#include "mars/decode.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace mars {

namespace {

std::vector<double> softmax_row(const Tensor& logits, int row) {
    const int v = logits.dim(1);
    const double* l = logits.data() + static_cast<std::size_t>(row) * v;
    double rowmax = l[0];
    for (int j = 1; j < v; ++j) rowmax = std::max(rowmax, l[j]);
    std::vector<double> p(static_cast<std::size_t>(v));
    double z = 0.0;
    for (int j = 0; j < v; ++j) {
        p[static_cast<std::size_t>(j)] = std::exp(l[j] - rowmax);
        z += p[static_cast<std::size_t>(j)];
    }
    const double inv_z = 1.0 / z;
    for (auto& x : p) x *= inv_z;
    return p;
}

class LoopTimer {
public:
    explicit LoopTimer(double& sink) : sink_(sink), start_(std::chrono::steady_clock::now()) {}
    ~LoopTimer() {
        sink_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    double& sink_;
    std::chrono::steady_clock::time_point start_;
};

// lowest token id wins ties, for cross-engine exactness
int argmax_token(std::span<const double> probs) {
    int best = 0;
    for (int j = 1; j < static_cast<int>(probs.size()); ++j) {
        if (probs[static_cast<std::size_t>(j)] > probs[static_cast<std::size_t>(best)]) best = j;
    }
    return best;
}

} // namespace

Metric parse_metric(const std::string& name) {
    if (name == "prob") return Metric::prob;
    if (name == "entropy") return Metric::entropy;
    if (name == "margin") return Metric::margin;
    throw std::runtime_error("decode: unknown metric '" + name + "'");
}

std::string metric_name(Metric metric) {
    switch (metric) {
        case Metric::prob: return "prob";
        case Metric::entropy: return "entropy";
        case Metric::margin: return "margin";
    }
    return "?";
}

void DecodeParams::validate() const {
    if (B < 1) throw std::invalid_argument("decode: B must be >= 1");
    if (max_new_tokens < 1) throw std::invalid_argument("decode: max_new_tokens must be >= 1");
}

double confidence(std::span<const double> probs, Metric metric) {
    switch (metric) {
        case Metric::prob: {
            double best = 0.0;
            for (double p : probs) best = std::max(best, p);
            return best;
        }
        case Metric::entropy: {
            double h = 0.0;
            for (double p : probs) {
                if (p > 0.0) h -= p * std::log(p);
            }
            return h;
        }
        case Metric::margin: {
            double top1 = 0.0, top2 = 0.0;
            for (double p : probs) {
                if (p > top1) {
                    top2 = top1;
                    top1 = p;
                } else if (p > top2) {
                    top2 = p;
                }
            }
            return top1 - top2;
        }
    }
    return 0.0;
}

int accept_prefix(std::span<const double> scores, const DecodeParams& params) {
    int n = 0;
    for (double s : scores) {
        const bool pass = params.metric == Metric::entropy ? s <= params.tau : s >= params.tau;
        if (!pass) break;
        ++n;
    }
    return std::max(n, 1);
}

DecodeResult ar_greedy(const Model& model, std::span<const int> prompt, int max_new,
                       bool use_cache, bool stop_at_eos) {
    if (prompt.empty()) throw std::invalid_argument("ar_greedy: prompt must be non-empty");
    if (max_new < 1) throw std::invalid_argument("ar_greedy: max_new must be >= 1");
    NoGradGuard ng;
    const int eos = model.config().eos_id;
    DecodeResult out;

    if (use_cache) {
        KVCache cache(model.config());
        const int p_len = static_cast<int>(prompt.size());
        if (p_len > 1) {
            std::vector<int> head(prompt.begin(), prompt.end() - 1);
            std::vector<int> positions(head.size());
            std::iota(positions.begin(), positions.end(), 0);
            AttnMask mask = AttnMask::causal(p_len - 1);
            ForwardRequest req{head, positions, &mask, &cache};
            ForwardResult fwd = model.forward(req);
            cache_extend(cache, fwd.pending, p_len - 1);
        }
        int last_token = prompt.back();
        int last_pos = p_len - 1;
        LoopTimer timer(out.stats.seconds);
        while (out.stats.tokens_generated < max_new) {
            std::vector<int> tok{last_token};
            std::vector<int> pos{last_pos};
            AttnMask mask = AttnMask::decode_step(1, cache.committed_len());
            ForwardRequest req{tok, pos, &mask, &cache};
            ForwardResult fwd = model.forward(req);
            cache_extend(cache, fwd.pending, 1);
            out.stats.forward_passes += 1;

            std::vector<double> probs = softmax_row(fwd.logits, 0);
            const int next = argmax_token(probs);
            out.tokens.push_back(next);
            out.stats.tokens_generated += 1;
            StepOutcome step;
            step.candidates = {next};
            step.scores = {confidence(probs, Metric::prob)};
            step.accepted_n = 1;
            step.stopped = stop_at_eos && next == eos;
            out.stats.steps.push_back(step);
            if (step.stopped) break;
            last_token = next;
            last_pos += 1;
        }
    } else {
        std::vector<int> seq(prompt.begin(), prompt.end());
        LoopTimer timer(out.stats.seconds);
        while (out.stats.tokens_generated < max_new) {
            const int n = static_cast<int>(seq.size());
            std::vector<int> positions(static_cast<std::size_t>(n));
            std::iota(positions.begin(), positions.end(), 0);
            AttnMask mask = AttnMask::causal(n);
            ForwardRequest req{seq, positions, &mask, nullptr};
            ForwardResult fwd = model.forward(req);
            out.stats.forward_passes += 1;

            std::vector<double> probs = softmax_row(fwd.logits, n - 1);
            const int next = argmax_token(probs);
            out.tokens.push_back(next);
            out.stats.tokens_generated += 1;
            StepOutcome step;
            step.candidates = {next};
            step.scores = {confidence(probs, Metric::prob)};
            step.accepted_n = 1;
            step.stopped = stop_at_eos && next == eos;
            out.stats.steps.push_back(step);
            if (step.stopped) break;
            seq.push_back(next);
        }
    }
    return out;
}

DecodeResult mars_decode(const Model& model, std::span<const int> prompt,
                         const DecodeParams& params) {
    if (prompt.empty()) throw std::invalid_argument("mars_decode: prompt must be non-empty");
    params.validate();
    NoGradGuard ng;
    const int eos = model.config().eos_id;
    const int mask_id = model.config().mask_token_id;
    const int B = params.B;

    DecodeResult out;
    std::vector<int> seq(prompt.begin(), prompt.end());
    LoopTimer timer(out.stats.seconds);
    while (out.stats.tokens_generated < params.max_new_tokens) {
        const int n = static_cast<int>(seq.size());
        std::vector<int> tokens = seq;
        tokens.insert(tokens.end(), static_cast<std::size_t>(B), mask_id);
        std::vector<int> positions(tokens.size());
        std::iota(positions.begin(), positions.end(), 0);
        AttnMask mask = AttnMask::causal(n + B);
        ForwardRequest req{tokens, positions, &mask, nullptr};
        ForwardResult fwd = model.forward(req);
        out.stats.forward_passes += 1;

        // Candidate k reads, right-shifted, from the row before mask k: the
        // prefix end for k=1, mask k-1 after that. The final mask's own row
        // is never used.
        StepOutcome step;
        for (int k = 1; k <= B; ++k) {
            std::vector<double> probs = softmax_row(fwd.logits, n + k - 2);
            step.candidates.push_back(argmax_token(probs));
            step.scores.push_back(confidence(probs, params.metric));
        }
        int accept = accept_prefix(step.scores, params);
        accept = std::min<long>(accept, params.max_new_tokens - out.stats.tokens_generated);
        for (int k = 0; k < accept; ++k) {
            const int tok = step.candidates[static_cast<std::size_t>(k)];
            seq.push_back(tok);
            out.tokens.push_back(tok);
            out.stats.tokens_generated += 1;
            step.accepted_n += 1;
            if (params.stop_at_eos && tok == eos) {
                step.stopped = true;
                break;
            }
        }
        out.stats.steps.push_back(step);
        if (step.stopped) break;
    }
    return out;
}

DecodeResult jacobi_decode(const Model& model, std::span<const int> prompt, int window_n,
                           int max_new, uint64_t seed, bool stop_at_eos) {
    if (prompt.empty()) throw std::invalid_argument("jacobi_decode: prompt must be non-empty");
    if (window_n < 1) throw std::invalid_argument("jacobi_decode: window must be >= 1");
    if (max_new < 1) throw std::invalid_argument("jacobi_decode: max_new must be >= 1");
    NoGradGuard ng;
    const int eos = model.config().eos_id;
    const int vocab = model.config().vocab_size;
    std::mt19937_64 rng(seed);
    auto draft = [&]() { return static_cast<int>(rng() % static_cast<uint64_t>(vocab)); };

    DecodeResult out;
    std::vector<int> seq(prompt.begin(), prompt.end());
    std::vector<int> window(static_cast<std::size_t>(window_n));
    for (auto& w : window) w = draft();

    LoopTimer timer(out.stats.seconds);
    while (out.stats.tokens_generated < max_new) {
        const int n = static_cast<int>(seq.size());
        std::vector<int> tokens = seq;
        tokens.insert(tokens.end(), window.begin(), window.end());
        std::vector<int> positions(tokens.size());
        std::iota(positions.begin(), positions.end(), 0);
        AttnMask mask = AttnMask::causal(n + window_n);
        ForwardRequest req{tokens, positions, &mask, nullptr};
        ForwardResult fwd = model.forward(req);
        out.stats.forward_passes += 1;

        StepOutcome step;
        std::vector<int> computed(static_cast<std::size_t>(window_n));
        for (int k = 1; k <= window_n; ++k) {
            std::vector<double> probs = softmax_row(fwd.logits, n + k - 2);
            computed[static_cast<std::size_t>(k - 1)] = argmax_token(probs);
            step.candidates.push_back(computed[static_cast<std::size_t>(k - 1)]);
            step.scores.push_back(confidence(probs, Metric::prob));
        }

        // Slot 1 used only the real prefix; slot k is final once every draft
        // before it already equaled its computed value (that context was
        // therefore correct).
        int final_n = 1;
        while (final_n < window_n &&
               window[static_cast<std::size_t>(final_n - 1)] ==
                   computed[static_cast<std::size_t>(final_n - 1)]) {
            ++final_n;
        }
        const int budget =
            static_cast<int>(std::min<long>(final_n, max_new - out.stats.tokens_generated));
        for (int k = 0; k < budget; ++k) {
            const int tok = computed[static_cast<std::size_t>(k)];
            seq.push_back(tok);
            out.tokens.push_back(tok);
            out.stats.tokens_generated += 1;
            step.accepted_n += 1;
            if (stop_at_eos && tok == eos) {
                step.stopped = true;
                break;
            }
        }
        out.stats.steps.push_back(step);
        if (step.stopped) break;

        // Unfinalized computed values shift forward as the next drafts; fresh
        // random drafts fill the vacated slots.
        std::vector<int> next_window;
        next_window.reserve(static_cast<std::size_t>(window_n));
        for (int k = final_n; k < window_n; ++k) next_window.push_back(computed[static_cast<std::size_t>(k)]);
        while (static_cast<int>(next_window.size()) < window_n) next_window.push_back(draft());
        window = std::move(next_window);
    }
    return out;
}

long block_cache_commit(const std::vector<long>& live_accepted, long committed, long block_end) {
    if (live_accepted.empty()) return committed;
    long m = live_accepted[0];
    for (long a : live_accepted) m = std::min(m, a);
    return std::clamp(m, committed, block_end);
}

BatchResult batch_block_decode(const Model& model, const std::vector<std::vector<int>>& prompts,
                               const DecodeParams& params) {
    if (prompts.empty()) throw std::invalid_argument("batch_block_decode: empty batch");
    params.validate();
    if (params.B_cache < params.B) {
        throw std::invalid_argument("batch_block_decode: B_cache must be >= B");
    }
    NoGradGuard ng;
    const int eos = model.config().eos_id;
    const int mask_id = model.config().mask_token_id;
    const int B = params.B;
    const int batch = static_cast<int>(prompts.size());

    struct SampleState {
        std::vector<int> seq;   // prompt + accepted tokens
        int prompt_len = 0;
        long gen_count = 0;
        bool finished = false;
        KVCache cache;
        explicit SampleState(const ModelConfig& c) : cache(c) {}
    };

    BatchResult out;
    out.tokens.resize(static_cast<std::size_t>(batch));
    out.stats.resize(static_cast<std::size_t>(batch));

    std::vector<SampleState> st;
    st.reserve(static_cast<std::size_t>(batch));
    for (const auto& prompt : prompts) {
        if (prompt.empty()) throw std::invalid_argument("batch_block_decode: empty prompt");
        SampleState s(model.config());
        s.seq = prompt;
        s.prompt_len = static_cast<int>(prompt.size());
        // prefill: cache all but the last prompt token, which stays in the
        // recomputed tail so the first window has a real query row
        if (s.prompt_len > 1) {
            std::vector<int> head(prompt.begin(), prompt.end() - 1);
            std::vector<int> positions(head.size());
            std::iota(positions.begin(), positions.end(), 0);
            AttnMask mask = AttnMask::causal(s.prompt_len - 1);
            ForwardRequest req{head, positions, &mask, &s.cache};
            ForwardResult fwd = model.forward(req);
            cache_extend(s.cache, fwd.pending, s.prompt_len - 1);
        }
        st.push_back(std::move(s));
    }

    long committed_gen = 0;        // protocol commit level, in generated tokens
    long block_end = params.B_cache;
    LoopTimer timer(out.seconds);

    auto any_live = [&]() {
        for (const auto& s : st) {
            if (!s.finished) return true;
        }
        return false;
    };

    while (any_live()) {
        // every live sample has filled the block: commit it wholesale, advance
        bool all_filled = true;
        for (const auto& s : st) {
            if (!s.finished && s.gen_count < block_end) all_filled = false;
        }
        if (all_filled) {
            committed_gen = block_end;
            block_end += params.B_cache;
            BatchStepTrace tr;
            for (const auto& s : st) tr.accepted_total.push_back(s.gen_count);
            tr.committed_after = committed_gen;
            out.trace.push_back(std::move(tr));
            continue;
        }

        for (int si = 0; si < batch; ++si) {
            SampleState& s = st[static_cast<std::size_t>(si)];
            if (s.finished || s.gen_count >= block_end) continue;  // done or idling

            const int phys = s.cache.committed_len();
            const int seq_len = static_cast<int>(s.seq.size());
            const int tail = seq_len - phys;  // >= 1 by construction
            std::vector<int> tokens(s.seq.begin() + phys, s.seq.end());
            tokens.insert(tokens.end(), static_cast<std::size_t>(B), mask_id);
            std::vector<int> positions(tokens.size());
            std::iota(positions.begin(), positions.end(), phys);
            AttnMask mask = AttnMask::decode_step(tail + B, phys);
            ForwardRequest req{tokens, positions, &mask, &s.cache};
            ForwardResult fwd = model.forward(req);
            out.stats[static_cast<std::size_t>(si)].forward_passes += 1;

            // catch the physical cache up to the protocol level decided last
            // round, always keeping the newest real token uncached
            const int target_rows =
                static_cast<int>(std::min<long>(s.prompt_len + committed_gen, seq_len - 1));
            if (target_rows > phys) {
                cache_extend(s.cache, fwd.pending, target_rows - phys);
            }

            StepOutcome step;
            for (int k = 1; k <= B; ++k) {
                std::vector<double> probs = softmax_row(fwd.logits, tail + k - 2);
                step.candidates.push_back(argmax_token(probs));
                step.scores.push_back(confidence(probs, params.metric));
            }
            int accept = accept_prefix(step.scores, params);
            accept = static_cast<int>(
                std::min<long>(accept, params.max_new_tokens - s.gen_count));
            for (int k = 0; k < accept; ++k) {
                const int tok = step.candidates[static_cast<std::size_t>(k)];
                s.seq.push_back(tok);
                s.gen_count += 1;
                out.tokens[static_cast<std::size_t>(si)].push_back(tok);
                out.stats[static_cast<std::size_t>(si)].tokens_generated += 1;
                step.accepted_n += 1;
                if (params.stop_at_eos && tok == eos) {
                    step.stopped = true;
                    break;
                }
            }
            out.stats[static_cast<std::size_t>(si)].steps.push_back(step);
            if (step.stopped || s.gen_count >= params.max_new_tokens) s.finished = true;
        }

        std::vector<long> live_counts;
        for (const auto& s : st) {
            if (!s.finished) live_counts.push_back(s.gen_count);
        }
        if (!live_counts.empty()) {
            committed_gen = block_cache_commit(live_counts, committed_gen, block_end);
        }
        BatchStepTrace tr;
        for (const auto& s : st) tr.accepted_total.push_back(s.gen_count);
        tr.committed_after = committed_gen;
        out.trace.push_back(std::move(tr));
    }
    return out;
}

} // namespace mars

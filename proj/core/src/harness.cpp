#include "mars/harness.hpp"

#include "mars/train.hpp"
#include "mars/vocab.hpp"

#include <algorithm>
#include <stdexcept>

namespace mars {

namespace {

DecodeResult run_single(const Model& model, std::span<const int> prompt, EngineKind engine,
                        const DecodeParams& params, uint64_t jacobi_seed, int jacobi_window) {
    switch (engine) {
        case EngineKind::ar:
            return ar_greedy(model, prompt, params.max_new_tokens, true, params.stop_at_eos);
        case EngineKind::ar_nocache:
            return ar_greedy(model, prompt, params.max_new_tokens, false, params.stop_at_eos);
        case EngineKind::mars:
            return mars_decode(model, prompt, params);
        case EngineKind::jacobi:
            return jacobi_decode(model, prompt, jacobi_window, params.max_new_tokens, jacobi_seed,
                                 params.stop_at_eos);
        case EngineKind::batch: {
            BatchResult r = batch_block_decode(model, {{prompt.begin(), prompt.end()}}, params);
            DecodeResult out;
            out.tokens = std::move(r.tokens[0]);
            out.stats = std::move(r.stats[0]);
            out.stats.seconds = r.seconds;
            return out;
        }
    }
    throw std::runtime_error("decode: unknown engine");
}

std::string render(const Model& model, const std::vector<int>& tokens) {
    std::vector<int> clean;
    for (int t : tokens) {
        if (t == model.config().eos_id) break;
        clean.push_back(t);
    }
    return CharVocab::decode(clean);
}

} // namespace

EngineKind parse_engine(const std::string& name) {
    if (name == "ar") return EngineKind::ar;
    if (name == "ar-nocache") return EngineKind::ar_nocache;
    if (name == "mars") return EngineKind::mars;
    if (name == "jacobi") return EngineKind::jacobi;
    if (name == "batch") return EngineKind::batch;
    throw std::runtime_error("decode: unknown engine '" + name + "'");
}

std::string engine_name(EngineKind engine) {
    switch (engine) {
        case EngineKind::ar: return "ar";
        case EngineKind::ar_nocache: return "ar-nocache";
        case EngineKind::mars: return "mars";
        case EngineKind::jacobi: return "jacobi";
        case EngineKind::batch: return "batch";
    }
    return "?";
}

EvalCell eval_engine(const Model& model, const Corpus& corpus, EngineKind engine,
                     const DecodeParams& params, uint64_t jacobi_seed, int jacobi_window) {
    if (corpus.records.empty()) throw std::runtime_error("eval: empty corpus");
    EvalCell cell;
    cell.records = static_cast<int>(corpus.records.size());

    if (engine == EngineKind::batch) {
        // bounded batches keep the shared block protocol exercised without
        // dragging every sample to the slowest one in the whole eval set
        constexpr int kEvalBatch = 8;
        std::size_t i = 0;
        while (i < corpus.records.size()) {
            const std::size_t end = std::min(i + kEvalBatch, corpus.records.size());
            std::vector<std::vector<int>> prompts;
            for (std::size_t r = i; r < end; ++r) {
                prompts.push_back(CharVocab::encode_prompt(corpus.records[r].prompt));
            }
            BatchResult br = batch_block_decode(model, prompts, params);
            cell.seconds += br.seconds;
            for (std::size_t r = i; r < end; ++r) {
                const auto& stats = br.stats[r - i];
                cell.tokens += stats.tokens_generated;
                cell.forwards += stats.forward_passes;
                const std::string got = extract_answer(render(model, br.tokens[r - i]));
                const std::string want = extract_answer(corpus.records[r].response);
                if (!want.empty() && got == want) cell.correct += 1;
            }
            i = end;
        }
    } else {
        for (const auto& record : corpus.records) {
            const std::vector<int> prompt = CharVocab::encode_prompt(record.prompt);
            DecodeResult r = run_single(model, prompt, engine, params, jacobi_seed, jacobi_window);
            cell.tokens += r.stats.tokens_generated;
            cell.forwards += r.stats.forward_passes;
            cell.seconds += r.stats.seconds;
            const std::string got = extract_answer(render(model, r.tokens));
            const std::string want = extract_answer(record.response);
            if (!want.empty() && got == want) cell.correct += 1;
        }
    }

    cell.accuracy = static_cast<double>(cell.correct) / cell.records;
    cell.tok_per_fwd = cell.forwards > 0 ? static_cast<double>(cell.tokens) / cell.forwards : 0.0;
    cell.tok_per_sec = cell.seconds > 0.0 ? static_cast<double>(cell.tokens) / cell.seconds : 0.0;
    return cell;
}

std::string decode_text(const Model& model, const std::string& prompt, EngineKind engine,
                        const DecodeParams& params, DecodeStats* stats_out, uint64_t jacobi_seed,
                        int jacobi_window) {
    const std::vector<int> ids = CharVocab::encode_prompt(prompt);
    DecodeResult r = run_single(model, ids, engine, params, jacobi_seed, jacobi_window);
    if (stats_out) *stats_out = r.stats;
    return render(model, r.tokens);
}

BenchReport run_sweep(const SweepSpec& spec) {
    if (spec.checkpoints.empty()) throw std::runtime_error("sweep: no checkpoints");
    if (spec.taus.empty() || spec.metrics.empty() || spec.block_sizes.empty()) {
        throw std::runtime_error("sweep: empty grid");
    }
    const Corpus eval = load_corpus(spec.eval_corpus);

    BenchReport report;
    report.header = {"checkpoint", "checkpoint_hash", "stage",    "seed",
                     "build_id",   "metric",          "tau",      "B",
                     "records",    "correct",         "accuracy", "tokens",
                     "forwards",   "tok_per_fwd",     "tok_per_sec"};
    report.meta["kind"] = "sweep";
    report.meta["eval_corpus"] = spec.eval_corpus;
    report.meta["build_id"] = build_id();
    report.meta["wallclock_columns"] = "tok_per_sec";
    report.meta["timing"] = "wall-clock spans the generation loop only; model load and prompt "
                            "prefill are excluded";

    for (const auto& ckpt : spec.checkpoints) {
        auto [model, meta] = load_checkpoint(ckpt);
        const std::string hash = file_hash(ckpt);
        for (Metric metric : spec.metrics) {
            for (double tau : spec.taus) {
                for (int b : spec.block_sizes) {
                    DecodeParams params;
                    params.B = b;
                    params.tau = tau;
                    params.metric = metric;
                    params.max_new_tokens = spec.max_new_tokens;
                    const EvalCell cell = eval_engine(model, eval, EngineKind::mars, params);
                    report.add_row({ckpt, hash, meta.stage,
                                    fmt_long(static_cast<long>(model.config().seed)), build_id(),
                                    metric_name(metric), fmt_double(tau), fmt_long(b),
                                    fmt_long(cell.records), fmt_long(cell.correct),
                                    fmt_double(cell.accuracy), fmt_long(cell.tokens),
                                    fmt_long(cell.forwards), fmt_double(cell.tok_per_fwd),
                                    fmt_double(cell.tok_per_sec)});
                }
            }
        }
    }
    return report;
}

BenchReport run_bench(const BenchSpec& spec) {
    auto [model, meta] = load_checkpoint(spec.checkpoint);
    const std::string hash = file_hash(spec.checkpoint);
    const Corpus eval = load_corpus(spec.eval_corpus);
    if (eval.records.empty()) throw std::runtime_error("bench: empty eval corpus");

    BenchReport report;
    report.header = {"engine",  "batch",       "B_cache", "gen_len",     "checkpoint_hash",
                     "seed",    "build_id",    "records", "tokens",      "forwards",
                     "tok_per_fwd", "seconds", "tok_per_sec", "speedup_vs_ar"};
    report.meta["kind"] = "bench";
    report.meta["checkpoint"] = spec.checkpoint;
    report.meta["checkpoint_hash"] = hash;
    report.meta["eval_corpus"] = spec.eval_corpus;
    report.meta["build_id"] = build_id();
    report.meta["wallclock_columns"] = "seconds,tok_per_sec,speedup_vs_ar";
    report.meta["timing"] = "wall-clock spans the generation loop only; model load and prompt "
                            "prefill are excluded; generation length is pinned (EOS ignored)";

    auto prompts_for = [&](int batch) {
        std::vector<std::vector<int>> prompts;
        for (int i = 0; i < batch; ++i) {
            const auto& rec = eval.records[static_cast<std::size_t>(i) % eval.records.size()];
            prompts.push_back(CharVocab::encode_prompt(rec.prompt));
        }
        return prompts;
    };

    struct Row {
        std::string engine;
        int batch, b_cache, gen_len;
        long tokens = 0, forwards = 0;
        double seconds = 0.0;
    };
    std::vector<Row> rows;

    for (int batch : spec.batch_sizes) {
        for (int gen_len : spec.gen_lens) {
            const auto prompts = prompts_for(batch);
            for (EngineKind engine : spec.engines) {
                DecodeParams params;
                params.B = spec.B;
                params.tau = spec.tau;
                params.metric = spec.metric;
                params.max_new_tokens = gen_len;
                params.stop_at_eos = false;

                if (engine == EngineKind::batch) {
                    for (int bc : spec.cache_blocks) {
                        params.B_cache = bc;
                        BatchResult r = batch_block_decode(model, prompts, params);
                        Row row{engine_name(engine), batch, bc, gen_len};
                        for (const auto& s : r.stats) {
                            row.tokens += s.tokens_generated;
                            row.forwards += s.forward_passes;
                        }
                        row.seconds = r.seconds;
                        rows.push_back(row);
                    }
                } else {
                    Row row{engine_name(engine), batch, 0, gen_len};
                    for (const auto& prompt : prompts) {
                        DecodeResult r = run_single(model, prompt, engine, params, 1, spec.B);
                        row.tokens += r.stats.tokens_generated;
                        row.forwards += r.stats.forward_passes;
                        row.seconds += r.stats.seconds;
                    }
                    rows.push_back(row);
                }
            }
        }
    }

    auto ar_toks_per_sec = [&](int batch, int gen_len) -> double {
        for (const auto& r : rows) {
            if (r.engine == "ar" && r.batch == batch && r.gen_len == gen_len && r.seconds > 0.0) {
                return static_cast<double>(r.tokens) / r.seconds;
            }
        }
        return 0.0;
    };

    for (const auto& r : rows) {
        const double tps = r.seconds > 0.0 ? static_cast<double>(r.tokens) / r.seconds : 0.0;
        const double ar_tps = ar_toks_per_sec(r.batch, r.gen_len);
        const double speedup = ar_tps > 0.0 ? tps / ar_tps : 0.0;
        report.add_row({r.engine, fmt_long(r.batch), fmt_long(r.b_cache), fmt_long(r.gen_len),
                        hash, fmt_long(static_cast<long>(model.config().seed)), build_id(),
                        fmt_long(static_cast<long>(eval.records.size())), fmt_long(r.tokens),
                        fmt_long(r.forwards),
                        fmt_double(r.forwards > 0 ? static_cast<double>(r.tokens) / r.forwards : 0.0),
                        fmt_double(r.seconds), fmt_double(tps), fmt_double(speedup)});
    }
    return report;
}

} // namespace mars

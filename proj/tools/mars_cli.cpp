// mars CLI: corpus generation, two-stage training, decoding with acceptance
// traces, threshold sweeps, and batch-throughput benchmarks.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include "mars/harness.hpp"
#include "mars/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

// Relative checkpoint paths fall back to $MARS_MODEL_DIR when not found as
// given.
std::string resolve_model_path(const std::string& path) {
    namespace fs = std::filesystem;
    if (path.empty() || fs::exists(path) || fs::path(path).is_absolute()) return path;
    const char* dir = std::getenv("MARS_MODEL_DIR");
    if (dir == nullptr) return path;
    const fs::path joined = fs::path(dir) / path;
    return joined.string();
}

std::string shell_quote_args(int argc, char** argv) {
    std::ostringstream os;
    for (int i = 0; i < argc; ++i) {
        if (i) os << ' ';
        os << argv[i];
    }
    return os.str();
}

struct GenCorpusArgs {
    std::string task = "mix";
    int n = 256;
    uint64_t seed = 7;
    int min_operand = 2;
    int max_operand = 9;
    bool restate = false;
    std::string out;
};

struct TrainArgs {
    std::string stage;
    std::string corpus;
    std::string out;
    std::string init;
    std::string log;
    mars::TrainConfig config;
    // model shape, used when training from scratch (no --init)
    int layers = 4, heads = 4, d_model = 128, d_ff = 512, max_positions = 512;
    uint64_t model_seed = 1;
};

struct DecodeArgs {
    std::string checkpoint;
    std::string prompt;
    std::string engine = "mars";
    mars::DecodeParams params;
    bool no_cache = false;
    bool trace = false;
    uint64_t jacobi_seed = 1;
    int jacobi_window = 0;  // 0 = use B
};

struct SweepArgs {
    std::vector<std::string> checkpoints;
    std::string eval_corpus;
    std::vector<double> taus = {1.0, 0.95, 0.9, 0.8, 0.7, 0.6, 0.5};
    std::vector<std::string> metrics = {"prob"};
    std::vector<int> block_sizes = {4};
    int max_new = 64;
    std::string out;
};

struct BenchArgs {
    std::string checkpoint;
    std::string eval_corpus;
    std::vector<int> batches = {1, 8};
    std::vector<int> cache_blocks = {4, 8, 16, 32};
    std::vector<std::string> engines = {"ar", "mars", "batch"};
    std::vector<int> gen_lens = {256};
    int B = 4;
    double tau = 0.95;
    std::string metric = "prob";
    std::string out;
};

int cmd_gen_corpus(const GenCorpusArgs& args) {
    mars::CorpusSpec spec;
    spec.task = mars::parse_task(args.task);
    spec.n = args.n;
    spec.seed = args.seed;
    spec.min_operand = args.min_operand;
    spec.max_operand = args.max_operand;
    spec.restate_answer = args.restate;
    mars::Corpus corpus = mars::gen_corpus(spec);
    mars::save_corpus(corpus, args.out);
    mars::CorpusStats stats = mars::corpus_stats(corpus);
    std::cout << "wrote " << stats.records << " records to " << args.out
              << " (max prompt " << stats.max_prompt_len << ", max response "
              << stats.max_response_len << ")\n";
    return 0;
}

int cmd_train(const TrainArgs& args) {
    mars::Corpus corpus = mars::load_corpus(args.corpus);
    mars::TrainConfig config = args.config;
    config.stage = mars::parse_stage(args.stage);

    std::optional<mars::Model> model;
    if (!args.init.empty()) {
        auto [loaded, meta] = mars::load_checkpoint(resolve_model_path(args.init));
        if (config.stage == mars::Stage::mars || config.stage == mars::Stage::mars_no_sft) {
            if (meta.stage != "ar-sft") {
                throw std::runtime_error("train: --init checkpoint has stage '" + meta.stage +
                                         "', expected 'ar-sft'");
            }
        }
        model.emplace(std::move(loaded));
    } else {
        if (config.stage == mars::Stage::mars) {
            throw CLI::ValidationError("--stage mars requires --init with an ar-sft checkpoint");
        }
        mars::ModelConfig mc;
        mc.n_layers = args.layers;
        mc.n_heads = args.heads;
        mc.d_model = args.d_model;
        mc.d_ff = args.d_ff;
        mc.max_positions = args.max_positions;
        mc.seed = args.model_seed;
        model.emplace(mc);
    }

    std::cout << "stage " << args.stage << ", " << corpus.records.size() << " records, "
              << model->param_count() << " parameters\n";
    mars::TrainResult r = mars::train(*model, corpus, config, args.out, args.log);
    std::cout << "done: " << r.steps << " steps, total " << r.final_total << " (ar "
              << r.final_loss_ar << ", mask " << r.final_loss_mask << "), checkpoint " << args.out
              << "\n";
    return 0;
}

int cmd_decode(const DecodeArgs& args) {
    auto [model, meta] = mars::load_checkpoint(resolve_model_path(args.checkpoint));
    mars::EngineKind engine = mars::parse_engine(args.engine);
    if (engine == mars::EngineKind::ar && args.no_cache) engine = mars::EngineKind::ar_nocache;

    mars::DecodeStats stats;
    const int window = args.jacobi_window > 0 ? args.jacobi_window : args.params.B;
    const std::string text = mars::decode_text(model, args.prompt, engine, args.params, &stats,
                                               args.jacobi_seed, window);
    std::cout << text << "\n";

    if (args.trace) {
        // textual acceptance shading: accepted groups delimited by '|'
        std::cout << "--- trace ---\n";
        std::string grouped;
        std::vector<int> accepted;
        for (const auto& step : stats.steps) {
            std::vector<int> group(step.candidates.begin(),
                                   step.candidates.begin() + step.accepted_n);
            grouped += "|" + mars::CharVocab::decode(group);
            accepted.push_back(step.accepted_n);
        }
        grouped += "|";
        for (std::size_t i = 0; i < accepted.size(); ++i) {
            std::cout << "step " << (i + 1) << ": accepted " << accepted[i] << "\n";
        }
        std::cout << "grouped: " << grouped << "\n";
        std::cout << "tokens=" << stats.tokens_generated << " forwards=" << stats.forward_passes
                  << " tok/fwd=" << mars::fmt_double(stats.tok_per_fwd()) << "\n";
    }
    return 0;
}

int cmd_sweep(const SweepArgs& args, const std::string& command) {
    mars::SweepSpec spec;
    for (const auto& c : args.checkpoints) spec.checkpoints.push_back(resolve_model_path(c));
    spec.eval_corpus = args.eval_corpus;
    spec.taus = args.taus;
    spec.metrics.clear();
    for (const auto& m : args.metrics) spec.metrics.push_back(mars::parse_metric(m));
    spec.block_sizes = args.block_sizes;
    spec.max_new_tokens = args.max_new;

    mars::BenchReport report = mars::run_sweep(spec);
    report.meta["command"] = command;
    mars::write_report(report, args.out);
    std::cout << "wrote " << report.rows.size() << " rows to " << args.out << "\n";
    return 0;
}

int cmd_bench(const BenchArgs& args, const std::string& command) {
    mars::BenchSpec spec;
    spec.checkpoint = resolve_model_path(args.checkpoint);
    spec.eval_corpus = args.eval_corpus;
    spec.batch_sizes = args.batches;
    spec.cache_blocks = args.cache_blocks;
    spec.engines.clear();
    for (const auto& e : args.engines) spec.engines.push_back(mars::parse_engine(e));
    spec.gen_lens = args.gen_lens;
    spec.B = args.B;
    spec.tau = args.tau;
    spec.metric = mars::parse_metric(args.metric);

    mars::BenchReport report = mars::run_bench(spec);
    report.meta["command"] = command;
    mars::write_report(report, args.out);
    std::cout << "wrote " << report.rows.size() << " rows to " << args.out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"block-masked multi-token decoding laboratory"};
    app.require_subcommand(1);

    GenCorpusArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
    gen_cmd->add_option("--task", gen.task, "arith | copy | seq | mix")->capture_default_str();
    gen_cmd->add_option("--n", gen.n, "record count")->check(CLI::PositiveNumber)
        ->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
    gen_cmd->add_option("--min-operand", gen.min_operand)->capture_default_str();
    gen_cmd->add_option("--max-operand", gen.max_operand)->capture_default_str();
    gen_cmd->add_flag("--restate", gen.restate, "append a restated answer clause");
    gen_cmd->add_option("--out", gen.out, "output corpus path")->required();

    TrainArgs tr;
    CLI::App* train_cmd = app.add_subcommand("train", "train one stage");
    train_cmd->add_option("--stage", tr.stage, "ar-sft | mars | mars-no-sft")->required();
    train_cmd->add_option("--corpus", tr.corpus)->required();
    train_cmd->add_option("--out", tr.out, "checkpoint output path")->required();
    train_cmd->add_option("--init", tr.init, "initial checkpoint (required for --stage mars)");
    train_cmd->add_option("--log", tr.log, "JSONL training log path");
    train_cmd->add_option("--B", tr.config.B)->capture_default_str();
    train_cmd->add_option("--epochs", tr.config.epochs)->capture_default_str();
    train_cmd->add_option("--lr", tr.config.peak_lr)->capture_default_str();
    train_cmd->add_option("--warmup", tr.config.warmup_ratio)->capture_default_str();
    train_cmd->add_option("--batch", tr.config.batch_size)->capture_default_str();
    train_cmd->add_option("--grad-accum", tr.config.grad_accum)->capture_default_str();
    train_cmd->add_option("--seed", tr.config.seed)->capture_default_str();
    train_cmd->add_option("--max-seq-len", tr.config.max_seq_len)->capture_default_str();
    train_cmd->add_option("--weight-decay", tr.config.weight_decay)->capture_default_str();
    train_cmd->add_option("--layers", tr.layers)->capture_default_str();
    train_cmd->add_option("--heads", tr.heads)->capture_default_str();
    train_cmd->add_option("--d-model", tr.d_model)->capture_default_str();
    train_cmd->add_option("--d-ff", tr.d_ff)->capture_default_str();
    train_cmd->add_option("--max-positions", tr.max_positions)->capture_default_str();
    train_cmd->add_option("--model-seed", tr.model_seed)->capture_default_str();

    DecodeArgs dec;
    CLI::App* decode_cmd = app.add_subcommand("decode", "decode one prompt");
    decode_cmd->add_option("--checkpoint", dec.checkpoint)->required();
    decode_cmd->add_option("--prompt", dec.prompt)->required();
    decode_cmd->add_option("--engine", dec.engine, "ar | mars | jacobi | batch")
        ->capture_default_str();
    decode_cmd->add_option("--B", dec.params.B)->capture_default_str();
    decode_cmd->add_option("--tau", dec.params.tau)->capture_default_str();
    std::string metric = "prob";
    decode_cmd->add_option("--metric", metric, "prob | entropy | margin")->capture_default_str();
    decode_cmd->add_option("--max-new", dec.params.max_new_tokens)->capture_default_str();
    decode_cmd->add_option("--b-cache", dec.params.B_cache)->capture_default_str();
    decode_cmd->add_flag("--no-cache", dec.no_cache, "disable the KV cache (ar engine)");
    decode_cmd->add_flag("--trace", dec.trace, "print per-step accepted-token groups");
    decode_cmd->add_option("--seed", dec.jacobi_seed, "draft seed (jacobi engine)")
        ->capture_default_str();
    decode_cmd->add_option("--window", dec.jacobi_window, "jacobi window (default: B)");

    SweepArgs sw;
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "threshold sweep to CSV");
    sweep_cmd->add_option("--checkpoint", sw.checkpoints)->required();
    sweep_cmd->add_option("--eval", sw.eval_corpus, "eval corpus path")->required();
    sweep_cmd->add_option("--taus", sw.taus)->capture_default_str();
    sweep_cmd->add_option("--metrics", sw.metrics)->capture_default_str();
    sweep_cmd->add_option("--Bs", sw.block_sizes)->capture_default_str();
    sweep_cmd->add_option("--max-new", sw.max_new)->capture_default_str();
    sweep_cmd->add_option("--out", sw.out, "CSV output path")->required();

    BenchArgs be;
    CLI::App* bench_cmd = app.add_subcommand("bench", "throughput benchmark to CSV");
    bench_cmd->add_option("--checkpoint", be.checkpoint)->required();
    bench_cmd->add_option("--eval", be.eval_corpus, "prompt source corpus")->required();
    bench_cmd->add_option("--batches", be.batches)->capture_default_str();
    bench_cmd->add_option("--b-cache", be.cache_blocks)->capture_default_str();
    bench_cmd->add_option("--engines", be.engines, "ar | ar-nocache | mars | batch")
        ->capture_default_str();
    bench_cmd->add_option("--gen-lens", be.gen_lens)->capture_default_str();
    bench_cmd->add_option("--B", be.B)->capture_default_str();
    bench_cmd->add_option("--tau", be.tau)->capture_default_str();
    bench_cmd->add_option("--metric", be.metric)->capture_default_str();
    bench_cmd->add_option("--out", be.out, "CSV output path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        const std::string command = shell_quote_args(argc, argv);
        if (gen_cmd->parsed()) return cmd_gen_corpus(gen);
        if (train_cmd->parsed()) return cmd_train(tr);
        if (decode_cmd->parsed()) {
            dec.params.metric = mars::parse_metric(metric);
            return cmd_decode(dec);
        }
        if (sweep_cmd->parsed()) return cmd_sweep(sw, command);
        if (bench_cmd->parsed()) return cmd_bench(be, command);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

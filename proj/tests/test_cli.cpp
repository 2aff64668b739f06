#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mars/report.hpp"

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;
};

RunResult run(const std::string& args) {
    const std::string cmd = std::string(MARS_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunResult r;
    std::array<char, 512> buf{};
    while (fgets(buf.data(), buf.size(), pipe) != nullptr) r.output += buf.data();
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

// one tiny pipeline shared by the decode/sweep cases
struct Pipeline {
    std::string corpus = "cli_corpus.jsonl";
    std::string ar_ckpt = "cli_ar.bin";
    std::string mars_ckpt = "cli_mars.bin";
    bool ready = false;

    Pipeline() {
        RunResult g = run("gen-corpus --task mix --n 16 --seed 3 --out " + corpus);
        REQUIRE(g.exit_code == 0);
        RunResult t1 = run("train --stage ar-sft --corpus " + corpus + " --out " + ar_ckpt +
                           " --layers 2 --heads 2 --d-model 32 --d-ff 64 --epochs 10 "
                           "--lr 3e-3 --batch 8 --seed 5");
        REQUIRE(t1.exit_code == 0);
        RunResult t2 = run("train --stage mars --corpus " + corpus + " --init " + ar_ckpt +
                           " --out " + mars_ckpt + " --B 4 --epochs 4 --lr 1e-3 --batch 8 --seed 6");
        REQUIRE(t2.exit_code == 0);
        ready = true;
    }
    ~Pipeline() {
        std::remove(corpus.c_str());
        std::remove(ar_ckpt.c_str());
        std::remove(mars_ckpt.c_str());
    }
};

Pipeline& pipeline() {
    static Pipeline p;
    return p;
}

} // namespace

TEST_CASE("gen-corpus reruns are byte-identical; bad specs exit nonzero") {
    RunResult a = run("gen-corpus --task arith --n 25 --seed 7 --out cli_gen_a.jsonl");
    RunResult b = run("gen-corpus --task arith --n 25 --seed 7 --out cli_gen_b.jsonl");
    CHECK(a.exit_code == 0);
    CHECK(b.exit_code == 0);
    CHECK(read_file("cli_gen_a.jsonl") == read_file("cli_gen_b.jsonl"));
    std::remove("cli_gen_a.jsonl");
    std::remove("cli_gen_b.jsonl");

    CHECK(run("gen-corpus --task arith --n 0 --out cli_gen_zero.jsonl").exit_code == 1);
    CHECK(run("gen-corpus --task bogus --n 3 --out cli_gen_bogus.jsonl").exit_code != 0);
    CHECK(run("nonsense-subcommand").exit_code == 1);
}

TEST_CASE("train enforces the stage/init contract") {
    Pipeline& p = pipeline();
    REQUIRE(p.ready);
    // mars without --init is a usage error
    RunResult r = run("train --stage mars --corpus " + p.corpus + " --out cli_x.bin");
    CHECK(r.exit_code == 1);
    // initializing a masked stage from a non-ar-sft checkpoint is a runtime error
    RunResult r2 = run("train --stage mars --corpus " + p.corpus + " --init " + p.mars_ckpt +
                       " --out cli_x.bin --epochs 1");
    CHECK(r2.exit_code == 2);
    // mars-no-sft trains with the mask loss alone, init optional
    RunResult r3 = run("train --stage mars-no-sft --corpus " + p.corpus + " --init " + p.ar_ckpt +
                       " --out cli_nosft.bin --B 4 --epochs 1 --batch 8");
    CHECK(r3.exit_code == 0);
    std::remove("cli_nosft.bin");
}

TEST_CASE("decode: engines agree at conservative settings") {
    Pipeline& p = pipeline();
    const std::string prompt = "\"Q: add 2 and 3. A:\"";
    RunResult ar = run("decode --checkpoint " + p.mars_ckpt + " --engine ar --prompt " + prompt +
                       " --max-new 24");
    RunResult mars1 = run("decode --checkpoint " + p.mars_ckpt +
                          " --engine mars --tau 1.0 --prompt " + prompt + " --max-new 24");
    RunResult jac = run("decode --checkpoint " + p.mars_ckpt + " --engine jacobi --prompt " +
                        prompt + " --max-new 24 --seed 9");
    RunResult bat = run("decode --checkpoint " + p.mars_ckpt +
                        " --engine batch --tau 1.0 --prompt " + prompt + " --max-new 24");
    CHECK(ar.exit_code == 0);
    CHECK(mars1.exit_code == 0);
    CHECK(jac.exit_code == 0);
    CHECK(bat.exit_code == 0);
    CHECK(ar.output == mars1.output);
    CHECK(ar.output == jac.output);
    CHECK(ar.output == bat.output);

    CHECK(run("decode --checkpoint " + p.mars_ckpt + " --engine warp --prompt " + prompt)
              .exit_code != 0);
    CHECK(run("decode --checkpoint missing.bin --engine ar --prompt " + prompt).exit_code == 2);
}

TEST_CASE("decode --trace accounting: group sizes sum to the token count") {
    Pipeline& p = pipeline();
    RunResult r = run("decode --checkpoint " + p.mars_ckpt +
                      " --engine mars --tau 0.5 --trace --prompt \"Q: add 2 and 3. A:\" "
                      "--max-new 24");
    REQUIRE(r.exit_code == 0);
    long sum = 0, tokens = -1;
    std::istringstream is(r.output);
    std::string line;
    while (std::getline(is, line)) {
        if (line.rfind("step ", 0) == 0) {
            const auto pos = line.find("accepted ");
            REQUIRE(pos != std::string::npos);
            sum += std::stol(line.substr(pos + 9));
        }
        if (line.rfind("tokens=", 0) == 0) {
            tokens = std::stol(line.substr(7));
        }
    }
    REQUIRE(tokens >= 0);
    CHECK(sum == tokens);
}

TEST_CASE("sweep CSV: the tau=1.0 row is the AR operating point") {
    Pipeline& p = pipeline();
    RunResult r = run("sweep --checkpoint " + p.mars_ckpt + " --eval " + p.corpus +
                      " --taus 1.0 0.6 --Bs 4 --max-new 32 --out cli_sweep.csv");
    REQUIRE(r.exit_code == 0);
    mars::BenchReport report = mars::read_report("cli_sweep.csv");
    REQUIRE(report.rows.size() == 2);
    CHECK(report.cell_as_double(0, "tau") == 1.0);
    CHECK(report.cell_as_double(0, "tok_per_fwd") == 1.0);
    CHECK(report.meta.count("command") == 1);
    // provenance columns present on every row
    for (const auto& col : {"checkpoint_hash", "seed", "build_id"}) {
        CHECK(report.column(col) >= 0);
    }
    std::remove("cli_sweep.csv");
    std::remove("cli_sweep.csv.meta.json");
}

TEST_CASE("bench CSV has the speedup column and pinned lengths") {
    Pipeline& p = pipeline();
    RunResult r = run("bench --checkpoint " + p.mars_ckpt + " --eval " + p.corpus +
                      " --batches 2 --b-cache 8 --engines ar mars batch --gen-lens 24 "
                      "--out cli_bench.csv");
    REQUIRE(r.exit_code == 0);
    mars::BenchReport report = mars::read_report("cli_bench.csv");
    REQUIRE(report.rows.size() == 3);
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        CHECK(report.cell_as_double(i, "tokens") == 48.0);  // 2 x 24, EOS ignored
        CHECK(report.cell_as_double(i, "speedup_vs_ar") > 0.0);
    }
    std::remove("cli_bench.csv");
    std::remove("cli_bench.csv.meta.json");
}

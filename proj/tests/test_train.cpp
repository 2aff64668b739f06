#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mars/gradcheck.hpp"
#include "mars/train.hpp"

#include "oracles.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

using namespace mars;

namespace {

ModelConfig tiny_config(uint64_t seed = 7) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 32;
    cfg.d_ff = 64;
    cfg.max_positions = 128;
    cfg.seed = seed;
    return cfg;
}

Sample make_sample(const std::string& prompt, const std::string& response) {
    return encode_sample(CorpusRecord{prompt, response});
}

std::vector<unsigned char> read_all(const std::string& p) {
    FILE* f = std::fopen(p.c_str(), "rb");
    REQUIRE(f != nullptr);
    std::vector<unsigned char> bytes;
    unsigned char buf[4096];
    std::size_t n = 0;
    while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) bytes.insert(bytes.end(), buf, buf + n);
    std::fclose(f);
    return bytes;
}

} // namespace

TEST_CASE("ar_loss on a uniform-logit model equals ln V") {
    // zeroed embeddings + tied head give identical logits everywhere
    ModelConfig cfg = tiny_config();
    Model model(cfg);
    for (auto& [name, t] : model.parameters()) {
        if (name == "embed.weight") {
            for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = 0.0;
        }
    }
    std::vector<Sample> batch = {make_sample("Q: x. A:", " y.")};
    NoGradGuard ng;
    LossBundle b = ar_loss(model, batch);
    CHECK(b.loss_ar.item() == doctest::Approx(std::log(cfg.vocab_size)).epsilon(1e-9));
    CHECK(b.total.item() == b.loss_ar.item());
    CHECK(b.loss_mask.item() == 0.0);
}

TEST_CASE("ar_loss term accounting and the manual-shift oracle") {
    Model model(tiny_config());
    NoGradGuard ng;

    // single response token (plus EOS) -> two loss terms; a bare token -> one
    std::vector<Sample> one;
    Sample s;
    s.prompt = CharVocab::encode_prompt("ab");
    s.response = {CharVocab::char_to_id('z')};
    one.push_back(s);
    LossBundle b1 = ar_loss(model, one);
    CHECK(b1.ar_terms == 1);

    // against a hand-shifted cross_entropy on the same forward
    Sample s2 = make_sample("Q: add 1 and 2. A:", " 1 plus 2 is 3.");
    std::vector<int> tokens = s2.prompt;
    tokens.insert(tokens.end(), s2.response.begin(), s2.response.end());
    std::vector<int> positions(tokens.size());
    std::iota(positions.begin(), positions.end(), 0);
    AttnMask mask = AttnMask::causal(static_cast<int>(tokens.size()));
    ForwardRequest req{tokens, positions, &mask, nullptr};
    Tensor logits = model.forward(req).logits;
    std::vector<int> shifted(tokens.size(), kIgnoreTarget);
    const int P = static_cast<int>(s2.prompt.size());
    for (std::size_t i = static_cast<std::size_t>(P - 1); i + 1 < tokens.size(); ++i) {
        shifted[i] = tokens[i + 1];
    }
    Tensor ref = cross_entropy(logits, shifted, kIgnoreTarget);
    std::vector<Sample> batch = {s2};
    LossBundle b2 = ar_loss(model, batch);
    CHECK(b2.loss_ar.item() == doctest::Approx(ref.item()).epsilon(1e-12));

    CHECK_THROWS(ar_loss(model, std::span<const Sample>{}));
}

TEST_CASE("mars_loss degenerate B=1 equals the AR loss") {
    Model model(tiny_config());
    NoGradGuard ng;
    std::vector<Sample> batch = {make_sample("Q: add 2 and 2. A:", " 2 plus 2 is 4."),
                                 make_sample("Q: echo the word ember. A:", " the echo is ember.")};
    LossBundle m = mars_loss(model, batch, 1, true);
    LossBundle a = ar_loss(model, batch);
    CHECK(std::fabs(m.loss_mask.item() - m.loss_ar.item()) <= 1e-9);
    CHECK(std::fabs(m.loss_ar.item() - a.loss_ar.item()) <= 1e-9);
    CHECK(m.total.item() == doctest::Approx(m.loss_mask.item() + m.loss_ar.item()).epsilon(1e-12));
}

TEST_CASE("mars_loss term counts for L=8, B=4") {
    Model model(tiny_config());
    NoGradGuard ng;
    Sample s;
    s.prompt = CharVocab::encode_prompt("Q:");
    s.response = CharVocab::encode("abcdefg");  // 7 chars
    s.response.push_back(CharVocab::eos_id);    // L_real = 8
    std::vector<Sample> batch = {s};
    LossBundle b = mars_loss(model, batch, 4, true);
    CHECK(b.mask_terms == 8);  // 2 clean-side block-first + 6 noisy-side
    CHECK(b.ar_terms == 8);
}

TEST_CASE("include_sft=false drops the AR term from the total") {
    Model model(tiny_config());
    NoGradGuard ng;
    std::vector<Sample> batch = {make_sample("Q: a. A:", " b.")};
    LossBundle b = mars_loss(model, batch, 4, false);
    CHECK(b.total.item() == b.loss_mask.item());
    LossBundle with = mars_loss(model, batch, 4, true);
    CHECK(with.total.item() ==
          doctest::Approx(with.loss_mask.item() + with.loss_ar.item()).epsilon(1e-12));
}

TEST_CASE("clean-stream isolation: loss_ar inside mars_loss equals ar_loss") {
    Model model(tiny_config(21));
    NoGradGuard ng;
    std::vector<Sample> batch = {make_sample("Q: add 3 and 4. A:", " 3 plus 4 is 7."),
                                 make_sample("Q: continue 1 3 5. A:", " the next is 7.")};
    for (int B : {2, 4, 8}) {
        LossBundle m = mars_loss(model, batch, B, true);
        LossBundle a = ar_loss(model, batch);
        CHECK(std::fabs(m.loss_ar.item() - a.loss_ar.item()) <= 1e-9);
    }
}

TEST_CASE("gradient fingerprints: both streams reach the parameters") {
    Model model(tiny_config(31));
    std::vector<Sample> batch = {make_sample("Q: add 2 and 5. A:", " 2 plus 5 is 7.")};

    auto grads_with = [&](bool include_sft, bool mask_only_loss) {
        Graph::active().clear();
        for (auto& [n, p] : model.parameters()) p.zero_grad();
        LossBundle b = mars_loss(model, batch, 4, include_sft);
        backward(mask_only_loss ? b.loss_mask : b.total);
        std::vector<double> fp;
        for (auto& [n, p] : model.parameters()) {
            double acc = 0.0;
            for (std::size_t i = 0; i < p.numel(); ++i) acc += std::fabs(p.grad()[i]);
            fp.push_back(acc);
        }
        return fp;
    };

    const auto full = grads_with(true, false);
    const auto mask_only = grads_with(false, false);
    const auto ar_dropped = grads_with(true, true);  // backward through loss_mask only

    double diff_mask = 0.0, diff_ar = 0.0, magnitude = 0.0;
    for (std::size_t i = 0; i < full.size(); ++i) {
        diff_mask += std::fabs(full[i] - ar_dropped[i]);  // removing AR term changes grads
        diff_ar += std::fabs(full[i] - mask_only[i]);
        magnitude += full[i];
    }
    CHECK(magnitude > 0.0);
    CHECK(diff_mask > 1e-9);
    CHECK(diff_ar > 1e-9);
}

TEST_CASE("full mars loss passes grad_check at a small random configuration") {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 16;
    cfg.d_ff = 32;
    cfg.max_positions = 64;
    cfg.seed = 12345;
    Model model(cfg);
    Sample s;
    s.prompt = CharVocab::encode_prompt("ab");
    s.response = CharVocab::encode("cde");
    s.response.push_back(CharVocab::eos_id);
    std::vector<Sample> batch = {s};

    std::vector<Tensor> params;
    for (auto& [name, t] : model.parameters()) params.push_back(t);
    const double err = grad_check_params(
        [&]() { return mars_loss(model, batch, 2, true).total; }, params, 1e-5);
    CHECK(err <= 1e-4);
}

TEST_CASE("lr schedule endpoints") {
    TrainConfig cfg;
    cfg.peak_lr = 1e-3;
    cfg.warmup_ratio = 0.1;
    const long total = 100;
    CHECK(lr_at(0, total, cfg) == 0.0);
    CHECK(lr_at(10, total, cfg) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(lr_at(100, total, cfg) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(lr_at(55, total, cfg) == doctest::Approx(0.5 * 1e-3).epsilon(1e-9));
    CHECK(lr_at(30, total, cfg) > lr_at(80, total, cfg));
    CHECK_THROWS(lr_at(101, total, cfg));
}

TEST_CASE("training is deterministic: same seed, bit-identical checkpoints") {
    CorpusSpec spec;
    spec.task = TaskKind::arith;
    spec.n = 10;
    spec.seed = 5;
    Corpus corpus = gen_corpus(spec);

    TrainConfig tc;
    tc.stage = Stage::ar_sft;
    tc.epochs = 2;
    tc.batch_size = 4;
    tc.seed = 42;

    Model m1(tiny_config(1));
    train(m1, corpus, tc, "test_train_a.bin");
    Model m2(tiny_config(1));
    train(m2, corpus, tc, "test_train_b.bin");
    CHECK(read_all("test_train_a.bin") == read_all("test_train_b.bin"));

    TrainConfig tc2 = tc;
    tc2.seed = 43;
    Model m3(tiny_config(1));
    train(m3, corpus, tc2, "test_train_c.bin");
    CHECK(read_all("test_train_a.bin") != read_all("test_train_c.bin"));
    std::remove("test_train_a.bin");
    std::remove("test_train_b.bin");
    std::remove("test_train_c.bin");
}

TEST_CASE("training reduces the loss and logs every step") {
    CorpusSpec spec;
    spec.task = TaskKind::copy_word;
    spec.n = 12;
    spec.seed = 6;
    Corpus corpus = gen_corpus(spec);

    Model model(tiny_config(2));
    std::vector<Sample> samples = encode_corpus(corpus);
    NoGradGuard* pre = new NoGradGuard();
    const double before = ar_loss(model, samples).loss_ar.item();
    delete pre;

    TrainConfig tc;
    tc.stage = Stage::ar_sft;
    tc.epochs = 4;
    tc.batch_size = 6;
    tc.peak_lr = 3e-3;
    const std::string log_path = "test_train_log.jsonl";
    std::remove(log_path.c_str());
    TrainResult r = train(model, corpus, tc, "", log_path);
    CHECK(r.steps > 0);

    {
        NoGradGuard ng;
        const double after = ar_loss(model, samples).loss_ar.item();
        CHECK(after < before);
    }

    std::ifstream is(log_path);
    REQUIRE(is.good());
    long lines = 0;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        ++lines;
        CHECK(line.find("\"step\"") != std::string::npos);
        CHECK(line.find("\"lr\"") != std::string::npos);
        CHECK(line.find("\"loss_ar\"") != std::string::npos);
        CHECK(line.find("\"loss_mask\"") != std::string::npos);
        CHECK(line.find("\"total\"") != std::string::npos);
    }
    CHECK(lines == r.steps);
    std::remove(log_path.c_str());
}

TEST_CASE("train rejects an empty corpus and oversized records") {
    Model model(tiny_config());
    TrainConfig tc;
    CHECK_THROWS(train(model, Corpus{}, tc, ""));

    Corpus big;
    big.records.push_back({"Q:", std::string(400, 'x')});
    TrainConfig tc2;
    tc2.stage = Stage::mars;
    tc2.max_seq_len = 100;
    Model model2(tiny_config());
    CHECK_THROWS(train(model2, big, tc2, ""));
}

TEST_CASE("stage parsing") {
    CHECK(parse_stage("ar-sft") == Stage::ar_sft);
    CHECK(parse_stage("mars") == Stage::mars);
    CHECK(parse_stage("mars-no-sft") == Stage::mars_no_sft);
    CHECK_THROWS(parse_stage("bogus"));
    CHECK(stage_name(Stage::mars_no_sft) == "mars-no-sft");
}

TEST_CASE("perplexity of a memorizing run approaches 1") {
    // one record repeated: the tiny model can pin it almost exactly
    Corpus corpus;
    for (int i = 0; i < 8; ++i) corpus.records.push_back({"Q: echo the word ember. A:", " the echo is ember."});
    Model model(tiny_config(9));
    TrainConfig tc;
    tc.stage = Stage::ar_sft;
    tc.epochs = 100;
    tc.batch_size = 8;
    tc.peak_lr = 1e-2;
    tc.seed = 11;
    train(model, corpus, tc, "");
    std::vector<Sample> samples = encode_corpus(corpus);
    const double ppl = corpus_perplexity(model, samples);
    CHECK(ppl < 1.5);
    CHECK(ppl >= 1.0);
}

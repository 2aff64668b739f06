#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mars/gradcheck.hpp"
#include "mars/tensor.hpp"

#include "oracles.hpp"

#include <cmath>
#include <cstring>
#include <random>

using namespace mars;

namespace {

Tensor random_tensor(std::vector<int> shape, uint64_t seed, bool requires_grad = false,
                     double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    Tensor t(std::move(shape), requires_grad);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        t.data()[i] = lo + (hi - lo) * u;
    }
    return t;
}

} // namespace

TEST_CASE("matmul identity and selector") {
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor c = matmul(eye, a);
    CHECK(c.at(0, 0) == 1.0);
    CHECK(c.at(0, 1) == 2.0);
    CHECK(c.at(1, 0) == 3.0);
    CHECK(c.at(1, 1) == 4.0);

    Tensor row = Tensor::from({1, 2}, {1, 0});
    Tensor col = Tensor::from({2, 1}, {7.5, -2.0});
    CHECK(matmul(row, col).item() == 7.5);

    CHECK_THROWS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})));
}

TEST_CASE("matmul matches triple-loop oracle") {
    Tensor a = random_tensor({3, 4}, 101);
    Tensor b = random_tensor({4, 2}, 102);
    Tensor c = matmul(a, b);
    std::vector<double> av(a.data(), a.data() + a.numel());
    std::vector<double> bv(b.data(), b.data() + b.numel());
    auto ref = oracle::matmul(av, bv, 3, 4, 2);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        CHECK(c.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("primitives are deterministic bit for bit") {
    Tensor a = random_tensor({5, 7}, 33);
    Tensor b = random_tensor({7, 5}, 34);
    Tensor c1 = matmul(a, b);
    Tensor c2 = matmul(a, b);
    CHECK(std::memcmp(c1.data(), c2.data(), c1.numel() * sizeof(double)) == 0);
}

TEST_CASE("masked_softmax basics") {
    Tensor scores = Tensor::zeros({1, 4});
    Tensor mask = Tensor::zeros({1, 4});
    Tensor p = masked_softmax(scores, mask);
    for (int j = 0; j < 4; ++j) CHECK(p.at(0, j) == doctest::Approx(0.25).epsilon(1e-15));

    Tensor s2 = Tensor::from({1, 2}, {1, 1});
    Tensor m2 = Tensor::from({1, 2}, {0.0, kMaskedScore});
    Tensor p2 = masked_softmax(s2, m2);
    CHECK(p2.at(0, 0) == 1.0);
    CHECK(p2.at(0, 1) == 0.0);

    Tensor m3 = Tensor::from({1, 2}, {kMaskedScore, kMaskedScore});
    CHECK_THROWS_AS(masked_softmax(s2, m3), std::runtime_error);
}

TEST_CASE("masked_softmax matches formula oracle and row-sum property") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int cols = 3 + static_cast<int>(rng() % 6);
        Tensor scores = random_tensor({1, cols}, rng(), false, -5.0, 5.0);
        Tensor mask = Tensor::zeros({1, cols});
        int visible = 0;
        for (int j = 0; j < cols; ++j) {
            const bool vis = (rng() % 3) != 0;
            if (!vis) mask.data()[j] = kMaskedScore;
            visible += vis;
        }
        if (visible == 0) mask.data()[0] = 0.0;

        Tensor p = masked_softmax(scores, mask);
        std::vector<double> sv(scores.data(), scores.data() + scores.numel());
        std::vector<double> mv(mask.data(), mask.data() + mask.numel());
        auto ref = oracle::softmax_row(sv, mv);
        double rowsum = 0.0;
        for (int j = 0; j < cols; ++j) {
            CHECK(p.at(0, j) == doctest::Approx(ref[static_cast<std::size_t>(j)]).epsilon(1e-12));
            if (mask.data()[j] != 0.0) CHECK(p.at(0, j) == 0.0);
            rowsum += p.at(0, j);
        }
        CHECK(std::fabs(rowsum - 1.0) <= 1e-9);
    }
}

TEST_CASE("cross_entropy analytic cases") {
    // uniform logits, V=4 -> ln 4
    Tensor logits = Tensor::zeros({1, 4});
    Tensor l = cross_entropy(logits, {2}, -1);
    CHECK(l.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(l.item() == doctest::Approx(1.386294).epsilon(1e-6));

    // one-hot confident -> loss ~ 0
    Tensor conf = Tensor::zeros({1, 4});
    conf.data()[1] = 50.0;
    CHECK(cross_entropy(conf, {1}, -1).item() < 1e-12);

    // ignored positions contribute nothing
    Tensor two = Tensor::zeros({2, 4});
    two.data()[4 + 3] = 50.0;
    Tensor only_second = cross_entropy(two, {-1, 3}, -1);
    CHECK(only_second.item() < 1e-12);

    CHECK_THROWS_AS(cross_entropy(two, {-1, -1}, -1), std::runtime_error);
    CHECK_THROWS(cross_entropy(two, {0, 9}, -1));
}

TEST_CASE("cross_entropy matches log-softmax-gather oracle") {
    Tensor logits = random_tensor({5, 7}, 55, false, -3.0, 3.0);
    std::vector<int> targets = {3, -1, 0, 6, 2};
    Tensor l = cross_entropy(logits, targets, -1);
    std::vector<double> lv(logits.data(), logits.data() + logits.numel());
    CHECK(l.item() == doctest::Approx(oracle::cross_entropy(lv, targets, 5, 7, -1)).epsilon(1e-10));
}

TEST_CASE("backward: sum gives ones, disconnected leaf stays zero") {
    Tensor x = random_tensor({3, 3}, 1, true);
    Tensor unused = random_tensor({2, 2}, 2, true);
    Tensor loss = sum(x);
    backward(loss);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 1.0);
    for (std::size_t i = 0; i < unused.numel(); ++i) CHECK(unused.grad()[i] == 0.0);
    CHECK(Graph::active().node_count() == 0);  // consumed
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor x = random_tensor({2, 2}, 3, true);
    Tensor y = scale(x, 2.0);
    CHECK_THROWS_AS(backward(y), std::runtime_error);
    Graph::active().clear();
}

TEST_CASE("backward: matmul chain matches finite differences") {
    Tensor a = random_tensor({3, 4}, 11, true);
    Tensor b = random_tensor({4, 2}, 12);
    const double err = grad_check(
        [&](const Tensor& t) { return sum(matmul(t, b)); }, a, 1e-5);
    CHECK(err <= 1e-4);

    Tensor w = random_tensor({4, 4}, 13, true);
    Tensor v = random_tensor({2, 4}, 14);
    const double err2 = grad_check(
        [&](const Tensor& t) { return sum(matmul(matmul(v, t), transpose(t))); }, w, 1e-5);
    CHECK(err2 <= 1e-4);
}

TEST_CASE("grad_check exact quadratic and constant") {
    Tensor x = random_tensor({6}, 21, true);
    const double err = grad_check([](const Tensor& t) { return sum(mul(t, t)); }, x, 1e-5);
    CHECK(err <= 1e-8);

    const double cerr = grad_check([](const Tensor& t) { (void)t; return Tensor::scalar(3.0); }, x, 1e-5);
    CHECK(cerr == 0.0);
}

TEST_CASE("grad_check covers every primitive") {
    std::vector<int> positions = {0, 3, 7, 4};

    Tensor x1 = random_tensor({4, 6}, 31, true);
    CHECK(grad_check([&](const Tensor& t) { return sum(gelu(t)); }, x1, 1e-5) <= 1e-4);

    Tensor g = random_tensor({6}, 32, true, 0.5, 1.5);
    Tensor xf = random_tensor({4, 6}, 33);
    CHECK(grad_check([&](const Tensor& t) { return sum(rms_norm(xf, t)); }, g, 1e-5) <= 1e-4);
    Tensor x2 = random_tensor({4, 6}, 34, true);
    Tensor g2 = random_tensor({6}, 35, false, 0.5, 1.5);
    CHECK(grad_check([&](const Tensor& t) { return sum(rms_norm(t, g2)); }, x2, 1e-5) <= 1e-4);

    Tensor x3 = random_tensor({4, 6}, 36, true);
    CHECK(grad_check([&](const Tensor& t) { return sum(rope(t, positions)); }, x3, 1e-5) <= 1e-4);

    Tensor table = random_tensor({9, 5}, 37, true);
    std::vector<int> ids = {1, 4, 4, 8};
    CHECK(grad_check([&](const Tensor& t) { return sum(embedding(t, ids)); }, table, 1e-5) <= 1e-4);

    Tensor x4 = random_tensor({3, 8}, 38, true);
    CHECK(grad_check([&](const Tensor& t) { return sum(mul(slice_cols(t, 2, 4), slice_cols(t, 0, 4))); },
                     x4, 1e-5) <= 1e-4);

    Tensor x5 = random_tensor({3, 4}, 39, true);
    CHECK(grad_check(
              [&](const Tensor& t) {
                  return sum(concat_cols({t, scale(t, 2.0)}));
              },
              x5, 1e-5) <= 1e-4);
    CHECK(grad_check(
              [&](const Tensor& t) {
                  return sum(mul(concat_rows({t, t}), concat_rows({t, scale(t, -1.0)})));
              },
              x5, 1e-5) <= 1e-4);

    Tensor x6 = random_tensor({2, 6}, 40, true);
    CHECK(grad_check([&](const Tensor& t) { return sum(mul(reshape(t, {3, 4}), reshape(t, {3, 4}))); },
                     x6, 1e-5) <= 1e-4);

    Tensor x7 = random_tensor({4, 4}, 41, true);
    CHECK(grad_check([&](const Tensor& t) { return sum(add(t, transpose(t))); }, x7, 1e-5) <= 1e-4);

    // attention-shaped composite: scores -> masked softmax -> context
    Tensor q = random_tensor({3, 4}, 42, true);
    Tensor k = random_tensor({3, 4}, 43);
    Tensor v = random_tensor({3, 4}, 44);
    Tensor amask = Tensor::zeros({3, 3});
    amask.data()[1] = kMaskedScore;  // row 0 cannot see col 1
    amask.data()[2] = kMaskedScore;
    CHECK(grad_check(
              [&](const Tensor& t) {
                  Tensor scores = scale(matmul(t, transpose(k)), 0.5);
                  return sum(matmul(masked_softmax(scores, amask), v));
              },
              q, 1e-5) <= 1e-4);

    Tensor logits_in = random_tensor({4, 5}, 45, true);
    std::vector<int> targets = {2, -1, 0, 4};
    CHECK(grad_check([&](const Tensor& t) { return cross_entropy(t, targets, -1); }, logits_in,
                     1e-5) <= 1e-4);
}

TEST_CASE("non-finite outputs are rejected") {
    Tensor big = Tensor::full({1, 2}, 1e308);
    CHECK_THROWS_AS(add(big, big), std::runtime_error);
}

TEST_CASE("NoGradGuard suppresses recording") {
    Tensor x = random_tensor({2, 2}, 50, true);
    {
        NoGradGuard ng;
        Tensor y = mul(x, x);
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(Graph::active().node_count() == 0);
}

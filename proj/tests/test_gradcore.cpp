#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "phtk/gradcheck.hpp"
#include "phtk/graph.hpp"

using namespace phtk;
using grad::Graph;
using grad::Tensor;

namespace {

Tensor uniform_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng,
                      double lo = -2.0, double hi = 2.0) {
    Tensor t(r, c);
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& v : t.data) v = d(rng);
    return t;
}

// independent oracle: enumerate all label paths, collapse, sum probabilities
double ctc_bruteforce(const Tensor& logprobs, const std::vector<int>& target) {
    const std::size_t T = logprobs.rows(), C = logprobs.cols();
    const int blank = static_cast<int>(C) - 1;
    double total = 0.0;
    std::vector<int> path(T, 0);
    for (;;) {
        std::vector<int> collapsed;
        int prev = -1;
        for (int s : path) {
            if (s != prev && s != blank) collapsed.push_back(s);
            prev = s;
        }
        if (collapsed == target) {
            double lp = 0;
            for (std::size_t t = 0; t < T; ++t) lp += logprobs.at(t, path[t]);
            total += std::exp(lp);
        }
        std::size_t i = 0;
        while (i < T && path[i] == static_cast<int>(C) - 1) path[i++] = 0;
        if (i == T) break;
        ++path[i];
    }
    return -std::log(total);
}

}  // namespace

TEST_CASE("matmul identity and scalar cases") {
    Graph g;
    Tensor id(2, 2);
    id.at(0, 0) = id.at(1, 1) = 1.0;
    std::mt19937_64 rng(7);
    Tensor x = uniform_tensor(2, 3, rng);
    int out = g.matmul(g.leaf(id), g.leaf(x));
    CHECK(g.value(out).data == x.data);

    Tensor a = Tensor::scalar(2.0), b = Tensor::scalar(3.0);
    int p = g.matmul(g.leaf(a), g.leaf(b));
    CHECK(g.value(p).data[0] == doctest::Approx(6.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Graph g;
    int a = g.leaf(Tensor(2, 3)), b = g.leaf(Tensor(2, 3));
    CHECK_THROWS_WITH_AS(g.matmul(a, b),
                         doctest::Contains("(2x3)"), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
    std::mt19937_64 rng(42);
    auto build = [](Graph& g, const std::vector<int>& ids) {
        return g.sum_all(g.matmul(ids[0], ids[1]));
    };
    auto rep = grad::grad_check(build, {uniform_tensor(3, 4, rng), uniform_tensor(4, 2, rng)},
                                1e-5, 1e-6);
    CHECK(rep.passed);
    CHECK(rep.worst() < 1e-6);
}

TEST_CASE("softmax_rows values") {
    Graph g;
    Tensor x(1, 4, 3.5);
    int out = g.softmax_rows(g.leaf(x));
    for (int j = 0; j < 4; ++j)
        CHECK(g.value(out).at(0, j) == doctest::Approx(0.25).epsilon(1e-12));

    Tensor big(1, 2);
    big.at(0, 0) = 1000.0;
    int out2 = g.softmax_rows(g.leaf(big));
    CHECK(g.value(out2).at(0, 0) == doctest::Approx(1.0));
    CHECK(g.value(out2).at(0, 1) == doctest::Approx(0.0));

    // direct double-precision evaluation of softmax(1,2,3)
    Tensor t(1, 3);
    t.at(0, 0) = 1;
    t.at(0, 1) = 2;
    t.at(0, 2) = 3;
    double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    int out3 = g.softmax_rows(g.leaf(t));
    for (int j = 0; j < 3; ++j)
        CHECK(g.value(out3).at(0, j) ==
              doctest::Approx(std::exp(1.0 + j) / z).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one within 1e-12") {
    std::mt19937_64 rng(3);
    Graph g;
    int out = g.softmax_rows(g.leaf(uniform_tensor(20, 8, rng, -50, 50)));
    for (std::size_t i = 0; i < 20; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 8; ++j) s += g.value(out).at(i, j);
        CHECK(std::fabs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("elementwise basics") {
    Graph g;
    std::mt19937_64 rng(5);
    Tensor x = uniform_tensor(3, 3, rng);
    int xa = g.leaf(x, true);
    int out = g.add(xa, g.leaf(Tensor(3, 3)));
    CHECK(g.value(out).data == x.data);

    int th = g.tanh_(g.leaf(Tensor::scalar(0.0), true));
    CHECK(g.value(th).data[0] == 0.0);

    int sq_leaf = g.leaf(Tensor::scalar(3.0), true);
    int sq = g.square_(sq_leaf);
    g.backward(sq);
    CHECK(g.gradient(sq_leaf).data[0] == doctest::Approx(6.0));

    CHECK_THROWS_AS(g.add(g.leaf(Tensor(2, 2)), g.leaf(Tensor(3, 3))), DimensionError);
}

TEST_CASE("tanh gradient at zero is one") {
    Graph g;
    int x = g.leaf(Tensor::scalar(0.0), true);
    int y = g.tanh_(x);
    g.backward(y);
    CHECK(g.gradient(x).data[0] == doctest::Approx(1.0));
}

TEST_CASE("backward basics") {
    std::mt19937_64 rng(11);
    Graph g;
    int x = g.leaf(uniform_tensor(2, 3, rng), true);

    SUBCASE("constant loss gives zero gradients") {
        int loss = g.sum_all(g.scale(x, 0.0));
        g.backward(loss);
        for (double v : g.gradient(x).data) CHECK(v == 0.0);
    }
    SUBCASE("sum gives ones") {
        int loss = g.sum_all(x);
        g.backward(loss);
        for (double v : g.gradient(x).data) CHECK(v == 1.0);
    }
    SUBCASE("repeated backward accumulates") {
        int loss = g.sum_all(x);
        g.backward(loss);
        g.backward(loss);
        for (double v : g.gradient(x).data) CHECK(v == 2.0);
    }
    SUBCASE("non-scalar loss rejected") {
        int loss = g.scale(x, 2.0);
        CHECK_THROWS_AS(g.backward(loss), DimensionError);
    }
}

TEST_CASE("backward is deterministic and replay matches") {
    std::mt19937_64 rng(17);
    Tensor a = uniform_tensor(4, 5, rng), b = uniform_tensor(5, 3, rng);
    std::vector<double> first;
    for (int run = 0; run < 2; ++run) {
        Graph g;
        int la = g.leaf(a, true), lb = g.leaf(b, true);
        int loss = g.mean_all(g.square_(g.tanh_(g.matmul(la, lb))));
        g.backward(loss);
        CHECK(g.replay_matches());
        if (run == 0)
            first = g.gradient(la).data;
        else
            CHECK(first == g.gradient(la).data);
    }
}

TEST_CASE("every primitive passes finite differences on random inputs") {
    std::mt19937_64 rng(23);
    using Builder = grad::LossBuilder;
    struct Case {
        const char* name;
        Builder build;
        std::vector<Tensor> leaves;
        double tol;
    };
    std::vector<Case> cases;
    cases.push_back({"add", [](Graph& g, const std::vector<int>& v) {
                         return g.sum_all(g.square_(g.add(v[0], v[1])));
                     },
                     {uniform_tensor(3, 4, rng), uniform_tensor(3, 4, rng)}, 1e-6});
    cases.push_back({"sub_scalar_bcast", [](Graph& g, const std::vector<int>& v) {
                         return g.sum_all(g.square_(g.sub(v[0], v[1])));
                     },
                     {uniform_tensor(3, 4, rng), Tensor::scalar(0.5)}, 1e-6});
    cases.push_back({"mul", [](Graph& g, const std::vector<int>& v) {
                         return g.sum_all(g.mul(v[0], v[1]));
                     },
                     {uniform_tensor(3, 4, rng), uniform_tensor(3, 4, rng)}, 1e-6});
    cases.push_back({"tanh", [](Graph& g, const std::vector<int>& v) {
                         return g.sum_all(g.tanh_(v[0]));
                     },
                     {uniform_tensor(4, 4, rng)}, 1e-6});
    cases.push_back({"square", [](Graph& g, const std::vector<int>& v) {
                         return g.sum_all(g.square_(v[0]));
                     },
                     {uniform_tensor(4, 4, rng)}, 1e-6});
    cases.push_back({"scale", [](Graph& g, const std::vector<int>& v) {
                         return g.sum_all(g.scale(v[0], -1.7));
                     },
                     {uniform_tensor(4, 4, rng)}, 1e-6});
    cases.push_back({"add_rowvec", [](Graph& g, const std::vector<int>& v) {
                         return g.sum_all(g.square_(g.add_rowvec(v[0], v[1])));
                     },
                     {uniform_tensor(5, 3, rng), uniform_tensor(1, 3, rng)}, 1e-6});
    cases.push_back({"softmax", [](Graph& g, const std::vector<int>& v) {
                         return g.sum_all(g.square_(g.softmax_rows(v[0])));
                     },
                     {uniform_tensor(4, 5, rng)}, 1e-4});
    cases.push_back({"log_softmax", [](Graph& g, const std::vector<int>& v) {
                         return g.sum_all(g.square_(g.log_softmax_rows(v[0])));
                     },
                     {uniform_tensor(4, 5, rng)}, 1e-4});
    cases.push_back({"logsumexp", [](Graph& g, const std::vector<int>& v) {
                         return g.sum_all(g.logsumexp_rows(v[0]));
                     },
                     {uniform_tensor(4, 5, rng)}, 1e-4});
    cases.push_back({"mean", [](Graph& g, const std::vector<int>& v) {
                         return g.mean_all(g.square_(v[0]));
                     },
                     {uniform_tensor(4, 4, rng)}, 1e-6});
    cases.push_back({"pairwise_sqdist", [](Graph& g, const std::vector<int>& v) {
                         return g.sum_all(g.tanh_(g.scale(g.pairwise_sqdist(v[0], v[1]), 0.05)));
                     },
                     {uniform_tensor(4, 3, rng), uniform_tensor(5, 3, rng)}, 1e-6});
    cases.push_back({"concat_cols", [](Graph& g, const std::vector<int>& v) {
                         return g.sum_all(g.square_(g.concat_cols(v[0], v[1])));
                     },
                     {uniform_tensor(3, 2, rng), uniform_tensor(3, 4, rng)}, 1e-6});
    cases.push_back({"repeat_rows", [](Graph& g, const std::vector<int>& v) {
                         return g.sum_all(g.square_(g.repeat_rows(v[0], 6)));
                     },
                     {uniform_tensor(1, 4, rng)}, 1e-6});
    cases.push_back({"relu", [](Graph& g, const std::vector<int>& v) {
                         return g.sum_all(g.relu_(v[0]));
                     },
                     {uniform_tensor(4, 4, rng, 0.1, 2.0)}, 1e-6});

    for (auto& c : cases) {
        CAPTURE(c.name);
        auto rep = grad::grad_check(c.build, c.leaves, 1e-5, c.tol);
        CHECK_MESSAGE(rep.passed, c.name, " worst=", rep.worst());
    }
}

TEST_CASE("detach blocks gradient flow") {
    Graph g;
    int x = g.leaf(Tensor::scalar(2.0), true);
    int loss = g.sum_all(g.square_(g.detach(x)));
    g.backward(loss);
    CHECK(g.gradient(x).size() == 0);
}

TEST_CASE("grad_check harness basics") {
    auto sq = [](Graph& g, const std::vector<int>& v) { return g.square_(v[0]); };
    auto rep = grad::grad_check(sq, {Tensor::scalar(3.0)}, 1e-5, 1e-6);
    CHECK(rep.passed);
    CHECK(rep.worst() < 1e-8);

    auto constant = [](Graph& g, const std::vector<int>& v) {
        return g.sum_all(g.scale(v[0], 0.0));
    };
    CHECK(grad::grad_check(constant, {Tensor::scalar(1.0)}).passed);

    CHECK_THROWS_AS(grad::grad_check(sq, {Tensor::scalar(1.0)}, 0.0), ConfigError);
}

TEST_CASE("ctc single-path cases") {
    // T=2, empty target: only the all-blank path
    Tensor lp(2, 3);
    {
        Graph g;
        int lnode = g.log_softmax_rows(g.leaf(lp));
        Tensor l = g.value(lnode);  // copy: node storage may reallocate
        int loss = g.ctc(lnode, {});
        CHECK(g.value(loss).data[0] ==
              doctest::Approx(-(l.at(0, 2) + l.at(1, 2))).epsilon(1e-12));
    }
    // T=1, target=[a]
    {
        Graph g;
        Tensor one(1, 3);
        one.at(0, 0) = 0.7;
        int lnode = g.log_softmax_rows(g.leaf(one));
        int loss = g.ctc(lnode, {0});
        CHECK(g.value(loss).data[0] ==
              doctest::Approx(-g.value(lnode).at(0, 0)).epsilon(1e-12));
    }
}

TEST_CASE("ctc matches brute-force enumeration, uniform and random") {
    std::mt19937_64 rng(31);
    {
        Graph g;
        Tensor logits(3, 3);  // uniform
        int lnode = g.log_softmax_rows(g.leaf(logits));
        int loss = g.ctc(lnode, {0, 1});
        CHECK(g.value(loss).data[0] ==
              doctest::Approx(ctc_bruteforce(g.value(lnode), {0, 1})).epsilon(1e-9));
    }
    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_int_distribution<std::size_t> td(1, 6), vd(1, 4);
        std::size_t T = td(rng), V = vd(rng);
        std::uniform_int_distribution<std::size_t> ld(0, 3);
        std::vector<int> target;
        std::uniform_int_distribution<int> sym(0, static_cast<int>(V) - 1);
        for (std::size_t i = ld(rng); i-- > 0;) target.push_back(sym(rng));
        if (grad::ctc_min_frames(target) > T) continue;
        Graph g;
        int lnode = g.log_softmax_rows(g.leaf(uniform_tensor(T, V + 1, rng)));
        int loss = g.ctc(lnode, target);
        CHECK(g.value(loss).data[0] ==
              doctest::Approx(ctc_bruteforce(g.value(lnode), target)).epsilon(1e-9));
    }
}

TEST_CASE("ctc infeasible target raises") {
    Graph g;
    Tensor lp(2, 3);
    int lnode = g.log_softmax_rows(g.leaf(lp));
    CHECK_THROWS_AS(g.ctc(lnode, {0, 0}), InfeasibleTargetError);  // needs 3 frames
    CHECK_THROWS_AS(g.ctc(lnode, {0, 1, 0}), InfeasibleTargetError);
    CHECK(grad::ctc_min_frames({0, 0}) == 3);
    CHECK(grad::ctc_min_frames({0, 1, 0}) == 3);
}

TEST_CASE("ctc gradient matches finite differences") {
    std::mt19937_64 rng(37);
    std::vector<int> target = {0, 2, 1};
    auto build = [&](Graph& g, const std::vector<int>& v) {
        return g.ctc(g.log_softmax_rows(v[0]), target);
    };
    auto rep = grad::grad_check(build, {uniform_tensor(7, 4, rng)}, 1e-5, 1e-4);
    CHECK_MESSAGE(rep.passed, "worst=", rep.worst());
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "jamlab/nn_kernels.hpp"
#include "jamlab/optim.hpp"
#include "jamlab/rng.hpp"

using namespace jamlab;
using namespace jamlab::nn;

namespace {

using Gd = Graph<double>;
using Ids = std::vector<Gd::Id>;

Parameter make_param(const std::string& name, std::vector<std::int64_t> shape,
                     std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    TensorF t = TensorF::zeros(std::move(shape));
    Rng rng(seed);
    for (float& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
    return Parameter(name, std::move(t));
}

// Reduces an op output to a scalar against fixed random coefficients so the
// upstream gradient is non-uniform.
Gd::Id weigh(Gd& g, Gd::Id x, std::uint64_t seed) {
    TensorD coeff = TensorD::zeros(g.val(x).shape);
    Rng rng(seed);
    for (double& v : coeff.data) v = rng.uniform(-1.0, 1.0);
    return sum_all(g, mul(g, x, g.constant(std::move(coeff))));
}

// Runs grad_check across seeds; returns the worst relative error.
double sweep(int seeds, const std::vector<std::vector<std::int64_t>>& shapes,
             const std::function<Gd::Id(Gd&, const Ids&, std::uint64_t)>& build,
             double lo = -1.0, double hi = 1.0) {
    double worst = 0.0;
    for (int s = 0; s < seeds; ++s) {
        std::vector<Parameter> params;
        std::vector<Parameter*> ptrs;
        params.reserve(shapes.size());
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            params.push_back(make_param("p" + std::to_string(i), shapes[i],
                                        derive_stream(77, static_cast<std::uint64_t>(s), i), lo,
                                        hi));
        }
        for (auto& p : params) ptrs.push_back(&p);
        const auto seed64 = static_cast<std::uint64_t>(s);
        const auto report = grad_check(
            [&](Gd& g, const Ids& ids) { return build(g, ids, seed64); }, ptrs, 0,
            static_cast<std::uint64_t>(s));
        worst = std::max(worst, report.max_rel_err);
    }
    return worst;
}

constexpr double kTol = 1e-4;
constexpr int kSeeds = 20;

}  // namespace

// ---- forward semantics -------------------------------------------------------

TEST_CASE("softmax: symmetry, shift invariance, normalization") {
    Gd g;
    const auto x = g.constant(TensorD({3}, {0.0, 0.0, 0.0}));
    const auto y = softmax_last(g, x);
    for (double v : g.val(y).data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    Rng rng(5);
    TensorD z = TensorD::zeros({4, 6});
    for (double& v : z.data) v = rng.uniform(-3.0, 3.0);
    TensorD shifted = z;
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 6; ++c) shifted.data[r * 6 + c] += 2.5;
    }
    Gd g2;
    const auto a = softmax_last(g2, g2.constant(z));
    const auto b = softmax_last(g2, g2.constant(shifted));
    for (std::size_t i = 0; i < 24; ++i) {
        CHECK(g2.val(a).data[i] == doctest::Approx(g2.val(b).data[i]).epsilon(1e-12));
    }
    for (std::size_t r = 0; r < 4; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 6; ++c) sum += g2.val(a).data[r * 6 + c];
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("softmax rows always normalize (float path)") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        Graph<float> g;
        TensorF z = TensorF::zeros({8, 21});
        for (float& v : z.data) v = static_cast<float>(rng.uniform(-10.0, 10.0));
        const auto y = softmax_last(g, g.constant(std::move(z)));
        for (std::size_t r = 0; r < 8; ++r) {
            float sum = 0.0f;
            for (std::size_t c = 0; c < 21; ++c) sum += g.val(y).data[r * 21 + c];
            CHECK(std::abs(sum - 1.0f) < 1e-6f);
        }
    }
}

TEST_CASE("reduce_max picks the maximum and routes gradient to it") {
    Gd g;
    const auto x = g.leaf(TensorD({2, 3}, {1.0, 5.0, 2.0, -1.0, -7.0, -2.0}));
    const auto y = reduce_max_last(g, x);
    CHECK(g.val(y).data[0] == 5.0);
    CHECK(g.val(y).data[1] == -1.0);
    const auto loss = sum_all(g, y);
    g.backward(loss);
    const auto& dx = g.grad(x).data;
    CHECK(dx == std::vector<double>{0, 1, 0, 1, 0, 0});
}

TEST_CASE("cross entropy: perfect and uniform predictions") {
    Gd g;
    TensorD p = TensorD::zeros({1, 21});
    p.data[4] = 1.0;
    const auto ce = cross_entropy_from_probs(g, g.constant(p), {4});
    CHECK(std::abs(g.val(ce).data[0]) <= 1e-8);

    TensorD u = TensorD::full({2, 21}, 1.0 / 21.0);
    Gd g2;
    const auto ce2 = cross_entropy_from_probs(g2, g2.constant(u), {0, 20});
    CHECK(g2.val(ce2).data[0] == doctest::Approx(std::log(21.0)).epsilon(1e-6));
}

TEST_CASE("graph rejects shape mismatches and non-scalar losses") {
    Gd g;
    const auto a = g.constant(TensorD::zeros({2, 3}));
    const auto b = g.constant(TensorD::zeros({3, 3}));
    CHECK_THROWS_AS(add(g, a, b), std::invalid_argument);
    CHECK_THROWS_AS(g.backward(a), std::invalid_argument);
    CHECK_THROWS_AS(dense(g, a, b, g.constant(TensorD::zeros({2}))), std::invalid_argument);
}

TEST_CASE("strict nan check flags non-finite values") {
    Gd g;
    g.strict_nan_check = true;
    const auto x = g.constant(TensorD({2}, {-1.0, 1.0}));
    CHECK_THROWS_AS(log_elem(g, x), std::runtime_error);
}

// ---- gradient checks, one per primitive ------------------------------------------

TEST_CASE("grad: dense and matmul") {
    CHECK(sweep(kSeeds, {{3, 4}, {4, 5}, {5}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, dense(g, p[0], p[1], p[2]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{4, 3}, {3, 6}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, matmul(g, p[0], p[1]), s);
          }) < kTol);
}

TEST_CASE("grad: batched matmul with and without sharing") {
    CHECK(sweep(kSeeds, {{4, 3, 2}, {4, 2, 5}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, bmm(g, p[0], p[1]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{4, 3, 2}, {4, 5, 2}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, bmm(g, p[0], p[1], true), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{6, 3, 2}, {2, 2, 5}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, bmm(g, p[0], p[1], false, 3), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{6, 3, 2}, {2, 5, 2}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, bmm(g, p[0], p[1], true, 3), s);
          }) < kTol);
}

TEST_CASE("grad: conv2d stride and padding variants") {
    CHECK(sweep(kSeeds, {{2, 3, 5, 5}, {4, 3, 3, 3}, {4}},
                [](Gd& g, const Ids& p, std::uint64_t s) {
                    return weigh(g, conv2d(g, p[0], p[1], p[2], 1, 1), s);
                }) < kTol);
    CHECK(sweep(kSeeds, {{2, 2, 6, 6}, {3, 2, 3, 3}, {3}},
                [](Gd& g, const Ids& p, std::uint64_t s) {
                    return weigh(g, conv2d(g, p[0], p[1], p[2], 2, 1), s);
                }) < kTol);
    CHECK(sweep(kSeeds, {{1, 2, 4, 4}, {3, 2, 1, 1}, {3}},
                [](Gd& g, const Ids& p, std::uint64_t s) {
                    return weigh(g, conv2d(g, p[0], p[1], p[2], 1, 0), s);
                }) < kTol);
}

TEST_CASE("grad: depthwise conv2d and conv1d") {
    CHECK(sweep(kSeeds, {{2, 3, 5, 5}, {3, 3, 3}, {3}},
                [](Gd& g, const Ids& p, std::uint64_t s) {
                    return weigh(g, dwconv2d(g, p[0], p[1], p[2], 2, 1), s);
                }) < kTol);
    CHECK(sweep(kSeeds, {{2, 3, 8}, {4, 3, 3}, {4}},
                [](Gd& g, const Ids& p, std::uint64_t s) {
                    return weigh(g, conv1d(g, p[0], p[1], p[2], 1, 1), s);
                }) < kTol);
}

TEST_CASE("grad: elementwise and scalar ops") {
    CHECK(sweep(kSeeds, {{3, 4}, {3, 4}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, add(g, p[0], p[1]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{3, 4}, {3, 4}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, mul(g, p[0], p[1]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{5}, {5}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, add_scaled(g, p[0], p[1], 0.37), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{2, 3, 2, 2}, {1}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, scale_by_scalar(g, p[0], p[1]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{4, 4}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, scale_const(g, p[0], -1.7), s);
          }) < kTol);
}

TEST_CASE("grad: activations") {
    CHECK(sweep(kSeeds, {{4, 5}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, sigmoid(g, p[0]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{4, 5}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, gelu(g, p[0]), s);
          }) < kTol);
    // keep inputs away from the kink so central differences stay valid
    CHECK(sweep(kSeeds, {{4, 5}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, relu(g, scale_const(g, p[0], 1.0)), s);
          }, 0.05, 1.0) < kTol);
    CHECK(sweep(kSeeds, {{4, 5}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, log_elem(g, p[0]), s);
          }, 0.5, 2.0) < kTol);
}

TEST_CASE("grad: softmax variants and cross entropy") {
    CHECK(sweep(kSeeds, {{3, 7}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, softmax_last(g, p[0]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{2, 4, 3, 3}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, softmax_chan(g, p[0]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{4, 6}}, [](Gd& g, const Ids& p, std::uint64_t) {
              return cross_entropy_from_probs(g, softmax_last(g, p[0]), {0, 3, 5, 2});
          }) < kTol);
}

TEST_CASE("grad: reductions and reshapes") {
    CHECK(sweep(kSeeds, {{3, 5}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, mean_axis0(g, p[0]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{3, 5}}, [](Gd& g, const Ids& p, std::uint64_t) {
              return sum_all(g, p[0]);
          }) < kTol);
    CHECK(sweep(kSeeds, {{2, 6}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, reshape(g, p[0], {3, 4}), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{3, 4}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, reduce_max_last(g, p[0]), s);
          }, 0.05, 1.0) < kTol);
}

TEST_CASE("grad: pooling") {
    CHECK(sweep(kSeeds, {{2, 3, 4, 4}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, global_avg_pool2d(g, p[0]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{2, 3, 4, 5}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, avg_pool_w(g, p[0]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{2, 3, 4, 5}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, avg_pool_h(g, p[0]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{2, 3, 4, 4}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, avg_pool2d(g, p[0], 2), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{2, 3, 8}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, avg_pool1d(g, p[0], 2), s);
          }) < kTol);
}

TEST_CASE("grad: broadcast scaling") {
    CHECK(sweep(kSeeds, {{2, 3, 4, 4}, {2, 3}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, scale_chan(g, p[0], p[1]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{2, 3, 4, 5}, {2, 3, 4}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, scale_rows_hw(g, p[0], p[1]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{2, 3, 4, 5}, {2, 3, 5}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, scale_cols_hw(g, p[0], p[1]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{4, 6}, {4}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, scale_rows(g, p[0], p[1]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{2, 4, 3, 3}, {4}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, add_bias_chan(g, p[0], p[1]), s);
          }) < kTol);
}

TEST_CASE("grad: concat and slice") {
    CHECK(sweep(kSeeds, {{2, 3, 2, 2}, {2, 2, 2, 2}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, concat_chan(g, p[0], p[1]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{2, 5, 2, 2}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, slice_chan(g, p[0], 1, 4), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{2, 3, 4}, {2, 3, 5}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, concat_last(g, p[0], p[1]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{2, 3, 6}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, slice_last(g, p[0], 2, 5), s);
          }) < kTol);
}

TEST_CASE("grad: token layout and window attention kernels") {
    CHECK(sweep(kSeeds, {{1, 4, 3, 3}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, chw_to_tokens(g, p[0], 2), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{4, 6, 2}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, tokens_to_chw(g, p[0], 2, 2, 3), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{1, 3, 4, 4}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, unfold3x3(g, p[0]), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{1, 2, 3, 3}, {1, 18, 3, 3}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, win_scores(g, p[0], p[1], 9), s);
          }) < kTol);
    CHECK(sweep(kSeeds, {{1, 9, 3, 3}, {1, 18, 3, 3}}, [](Gd& g, const Ids& p, std::uint64_t s) {
              return weigh(g, win_apply(g, p[0], p[1], 2), s);
          }) < kTol);
}

TEST_CASE("grad: linear model with cross entropy stays below 1e-6") {
    Parameter w = make_param("w", {6, 4}, 1);
    Parameter b = make_param("b", {4}, 2);
    Parameter x = make_param("x", {3, 6}, 3);
    const std::vector<Parameter*> ps = {&w, &b, &x};
    const auto report = grad_check(
        [](Gd& g, const Ids& ids) {
            return cross_entropy_from_probs(
                g, softmax_last(g, dense(g, ids[2], ids[0], ids[1])), {0, 2, 3});
        },
        ps);
    CHECK(report.max_rel_err < 1e-6);
}

// ---- optimizer and schedule ----------------------------------------------------

TEST_CASE("adamw: zero gradient with zero decay is the identity") {
    Parameter p = make_param("p", {4}, 9);
    const TensorF before = p.value;
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    adamw_step({&p}, cfg, 1e-2);
    CHECK(p.value.data == before.data);
}

TEST_CASE("adamw: zero gradient applies pure decoupled decay") {
    Parameter p = make_param("p", {4}, 10);
    const TensorF before = p.value;
    TrainConfig cfg;
    cfg.weight_decay = 0.05;
    const double lr = 1e-2;
    adamw_step({&p}, cfg, lr);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(p.value.data[i] ==
              doctest::Approx(before.data[i] * (1.0 - lr * 0.05)).epsilon(1e-6));
    }
}

TEST_CASE("adamw: descends a scalar quadratic monotonically") {
    Parameter p("theta", TensorF({1}, {2.0f}));
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    double prev = std::abs(p.value.data[0]);
    for (int step = 0; step < 200; ++step) {
        p.grad.data[0] = p.value.data[0];  // d/dtheta of theta^2/2
        adamw_step({&p}, cfg, 1e-2);
        const double cur = std::abs(p.value.data[0]);
        if (step > 5) CHECK(cur <= prev + 1e-9);
        prev = cur;
    }
    CHECK(prev < 0.5);
}

TEST_CASE("lr schedule: ramp endpoints and cosine tail") {
    TrainConfig cfg;
    cfg.lr = 1e-4;
    cfg.warmup_epochs = 10;
    cfg.max_epochs = 50;
    CHECK(lr_at(0, cfg) == doctest::Approx(1e-5));
    CHECK(lr_at(9, cfg) == doctest::Approx(1e-4));
    CHECK(lr_at(10, cfg) == doctest::Approx(1e-4));
    CHECK(lr_at(30, cfg) == doctest::Approx(1e-4 * 0.5 *
                                            (1.0 + std::cos(3.14159265358979 * 20.0 / 39.0)))
                                .epsilon(1e-6));
    CHECK(std::abs(lr_at(49, cfg)) < 1e-12);
    CHECK_THROWS_AS(lr_at(50, cfg), std::invalid_argument);
}

TEST_CASE("early stopping follows the patience contract") {
    CHECK_FALSE(should_stop({1, 2, 3, 4, 5}, 3));

    std::vector<double> history{0.5, 0.6, 0.7, 0.9};
    for (int i = 0; i < 15; ++i) history.push_back(0.9);
    CHECK(history.size() == 19);  // best at epoch 3, then 15 non-improving
    CHECK(should_stop(history, 15));
    CHECK(best_epoch(history) == 3);
    history.pop_back();
    CHECK_FALSE(should_stop(history, 15));

    CHECK(should_stop({0.9, 0.2}, 1));
}

TEST_CASE("backward pass is deterministic across runs") {
    auto run = [] {
        Parameter w = make_param("w", {8, 8}, 4);
        Parameter x = make_param("x", {2, 1, 6, 6}, 5);
        Parameter k = make_param("k", {8, 1, 3, 3}, 6);
        Parameter kb = make_param("kb", {8}, 7);
        Graph<float> g;
        const auto xi = g.leaf(x.value);
        const auto ki = g.leaf(k.value);
        const auto kbi = g.leaf(kb.value);
        const auto wi = g.leaf(w.value);
        auto y = conv2d(g, xi, ki, kbi, 1, 1);
        y = relu(g, y);
        auto flat = reshape(g, global_avg_pool2d(g, y), {2, 8});
        auto out = matmul(g, flat, wi);
        const auto loss = sum_all(g, softmax_last(g, out));
        g.backward(loss);
        return std::make_pair(g.val(loss).data[0], g.grad(ki).data);
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "ssltraffic/nn/adam.hpp"
#include "ssltraffic/nn/checkpoint.hpp"
#include "ssltraffic/nn/losses.hpp"
#include "ssltraffic/nn/mlp.hpp"
#include "test_support.hpp"

using namespace ssltraffic;
using namespace ssltraffic::nn;
using Catch::Approx;
using testsupport::random_matrix;

namespace {

Layer identity_layer(std::size_t n, Activation act) {
    Layer l{Matrix(n, n), std::vector<double>(n, 0.0), act, 0.0, true};
    for (std::size_t i = 0; i < n; ++i) l.weight(i, i) = 1.0;
    return l;
}

MlpModel random_model(std::size_t in, std::vector<std::size_t> hidden, std::size_t out,
                      Activation out_act, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    auto m = make_mlp(in, hidden, out, out_act, 0.0, rng);
    // Non-zero biases so the gradient check covers them.
    for (auto& l : m.layers)
        for (double& b : l.bias) b = 0.1 * (2.0 * uniform01(rng) - 1.0);
    return m;
}

// Naive per-element softmax cross-entropy.
double naive_ce(const Matrix& logits, const Matrix& targets, const std::vector<double>& w) {
    double total = 0.0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        double mx = -1e300;
        for (std::size_t k = 0; k < logits.cols(); ++k) mx = std::max(mx, logits(i, k));
        double z = 0.0;
        for (std::size_t k = 0; k < logits.cols(); ++k) z += std::exp(logits(i, k) - mx);
        double row = 0.0;
        for (std::size_t k = 0; k < logits.cols(); ++k)
            row -= targets(i, k) * (logits(i, k) - mx - std::log(z));
        total += w[i] * row;
    }
    return total / static_cast<double>(logits.rows());
}

}  // namespace

TEST_CASE("forward: identity and relu layers", "[nn][forward]") {
    Rng rng = make_rng(1);
    MlpModel lin{{identity_layer(2, Activation::linear)}};
    auto out = forward(lin, Matrix{{1.0, 2.0}}, false, rng).output;
    CHECK(out == Matrix{{1.0, 2.0}});

    MlpModel relu{{identity_layer(2, Activation::relu)}};
    out = forward(relu, Matrix{{-1.0, 3.0}}, false, rng).output;
    CHECK(out == Matrix{{0.0, 3.0}});
}

TEST_CASE("forward: two-layer net matches a naive matmul oracle", "[nn][forward]") {
    Rng rng = make_rng(42);
    auto model = random_model(4, {6}, 3, Activation::linear, 42);
    const Matrix x = random_matrix(5, 4, rng);

    Matrix h = testsupport::naive_matmul(x, model.layers[0].weight);
    for (std::size_t r = 0; r < h.rows(); ++r)
        for (std::size_t c = 0; c < h.cols(); ++c)
            h(r, c) = std::max(0.0, h(r, c) + model.layers[0].bias[c]);
    Matrix y = testsupport::naive_matmul(h, model.layers[1].weight);
    for (std::size_t r = 0; r < y.rows(); ++r)
        for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += model.layers[1].bias[c];

    const Matrix out = forward(model, x, false, rng).output;
    CHECK(testsupport::max_abs_diff(out.data(), y.data()) <= 1e-12);
}

TEST_CASE("forward: shape mismatch raises a dimension error", "[nn][forward]") {
    Rng rng = make_rng(0);
    auto model = random_model(3, {}, 2, Activation::linear, 0);
    CHECK_THROWS_AS(forward(model, Matrix(2, 4), false, rng), DimensionError);
}

TEST_CASE("forward: dropout only in train mode, deterministic per seed", "[nn][forward]") {
    Rng init = make_rng(3);
    auto model = make_mlp(4, std::vector<std::size_t>{16}, 2, Activation::linear, 0.5, init);
    Rng data_rng = make_rng(4);
    const Matrix x = random_matrix(8, 4, data_rng);

    Rng a = make_rng(9), b = make_rng(9), c = make_rng(10);
    const auto eval1 = forward(model, x, false, a).output;
    const auto eval2 = predict(model, x);
    CHECK(eval1 == eval2);

    Rng a2 = make_rng(9);
    const auto t1 = forward(model, x, true, a2).output;
    const auto t2 = forward(model, x, true, b).output;
    const auto t3 = forward(model, x, true, c).output;
    CHECK(t1 == t2);
    CHECK_FALSE(t1 == t3);
    CHECK_FALSE(t1 == eval1);
}

TEST_CASE("backward: zero loss gradient gives zero gradients", "[nn][backward]") {
    Rng rng = make_rng(5);
    auto model = random_model(4, {5}, 3, Activation::linear, 5);
    const Matrix x = random_matrix(6, 4, rng);
    auto fwd = forward(model, x, true, rng);
    const auto g = backward(model, fwd.cache, Matrix(6, 3));
    for (const auto& w : g.weight)
        for (double v : w.data()) CHECK(v == 0.0);
    for (const auto& b : g.bias)
        for (double v : b) CHECK(v == 0.0);
}

TEST_CASE("backward: scalar quadratic loss matches finite differences", "[nn][backward]") {
    // y = w x + b, L = (y - 3)^2 averaged by mse_loss.
    MlpModel model{{Layer{Matrix{{0.7}}, {0.2}, Activation::linear, 0.0, true}}};
    const Matrix x{{1.5}, {-0.5}};
    const Matrix target{{3.0}, {3.0}};
    Rng rng = make_rng(0);
    auto fwd = forward(model, x, false, rng);
    const auto lr = mse_loss(fwd.output, target);
    const auto g = backward(model, fwd.cache, lr.grad);

    auto loss_at = [&] { return mse_loss(predict(model, x), target).loss; };
    auto fd_w = testsupport::finite_diff(model.layers[0].weight.data(), loss_at);
    auto fd_b = testsupport::finite_diff(model.layers[0].bias, loss_at);
    CHECK(testsupport::close_rel(g.weight[0].data(), fd_w, 1e-6, 0.0));
    CHECK(testsupport::close_rel(g.bias[0], fd_b, 1e-6, 0.0));
}

TEST_CASE("backward: gradient check for every layer type and loss", "[nn][backward][gradcheck]") {
    Rng rng = make_rng(11);
    const Matrix x = random_matrix(5, 4, rng);

    SECTION("relu hidden + linear output under MSE") {
        auto model = random_model(4, {6, 5}, 4, Activation::linear, 12);
        const Matrix target = random_matrix(5, 4, rng);
        auto fwd = forward(model, x, false, rng);
        const auto g = backward(model, fwd.cache, mse_loss(fwd.output, target).grad, true);
        auto loss_at = [&] { return mse_loss(predict(model, x), target).loss; };
        for (std::size_t li = 0; li < model.layers.size(); ++li) {
            CHECK(testsupport::close_rel(g.weight[li].data(),
                                         testsupport::finite_diff(model.layers[li].weight.data(), loss_at), 1e-5));
            CHECK(testsupport::close_rel(g.bias[li],
                                         testsupport::finite_diff(model.layers[li].bias, loss_at), 1e-5));
        }
        Matrix xin = x;
        auto in_loss = [&] { return mse_loss(predict(model, xin), target).loss; };
        CHECK(testsupport::close_rel(g.input.data(), testsupport::finite_diff(xin.data(), in_loss), 1e-5));
    }

    SECTION("softmax output under weighted cross-entropy") {
        auto model = random_model(4, {5}, 4, Activation::softmax, 13);
        const Matrix targets = softmax(random_matrix(5, 4, rng, 2.0));  // smoothed targets
        const std::vector<double> w{0.2, 1.0, 0.5, 0.9, 0.3};
        Rng r2 = make_rng(0);
        auto fwd = forward(model, x, false, r2);
        const auto lr = softmax_ce_loss(fwd.cache.logits(), targets, w);
        const auto g = backward(model, fwd.cache, lr.grad);
        auto loss_at = [&] {
            Rng r = make_rng(0);
            return softmax_ce_loss(forward(model, x, false, r).cache.logits(), targets, w).loss;
        };
        for (std::size_t li = 0; li < model.layers.size(); ++li) {
            CHECK(testsupport::close_rel(g.weight[li].data(),
                                         testsupport::finite_diff(model.layers[li].weight.data(), loss_at), 1e-5));
            CHECK(testsupport::close_rel(g.bias[li],
                                         testsupport::finite_diff(model.layers[li].bias, loss_at), 1e-5));
        }
    }
}

TEST_CASE("backward: frozen layer gets exactly zero gradient", "[nn][backward]") {
    Rng rng = make_rng(6);
    auto model = random_model(4, {5}, 3, Activation::linear, 6);
    model.layers[0].trainable = false;
    const Matrix x = random_matrix(6, 4, rng);
    auto fwd = forward(model, x, false, rng);
    const auto g = backward(model, fwd.cache, random_matrix(6, 3, rng));
    for (double v : g.weight[0].data()) CHECK(v == 0.0);
    for (double v : g.bias[0]) CHECK(v == 0.0);
    bool any_nonzero = false;
    for (double v : g.weight[1].data()) any_nonzero |= v != 0.0;
    CHECK(any_nonzero);
}

TEST_CASE("backward: stale cache is a state error", "[nn][backward]") {
    Rng rng = make_rng(7);
    auto model = random_model(3, {}, 2, Activation::linear, 7);
    const Matrix x = random_matrix(2, 3, rng);
    auto fwd = forward(model, x, false, rng);
    AdamState st(model, {});
    adam_step(model, backward(model, fwd.cache, random_matrix(2, 2, rng)), st);
    CHECK_THROWS_AS(backward(model, fwd.cache, Matrix(2, 2)), StateError);

    auto other = model;
    auto fwd2 = forward(model, x, false, rng);
    CHECK_THROWS_AS(backward(other, fwd2.cache, Matrix(2, 2)), StateError);
}

TEST_CASE("adam: zero gradients leave parameters unchanged", "[nn][adam]") {
    auto model = random_model(3, {4}, 2, Activation::linear, 8);
    const auto before = model;
    AdamState st(model, {});
    adam_step(model, Gradients::zeros_like(model), st);
    CHECK(model == before);
    CHECK(st.step == 1);
}

TEST_CASE("adam: bias-corrected first step", "[nn][adam]") {
    // Closed form: m1 = (1-b1) g, v1 = (1-b2) g^2, so mhat = g, vhat = g^2 and
    // the step is lr * g / (|g| + eps).
    MlpModel model{{Layer{Matrix{{0.0}}, {0.0}, Activation::linear, 0.0, true}}};
    AdamState st(model, AdamOptions{0.1, 0.0, 0.9, 0.999, 1e-8});
    Gradients g = Gradients::zeros_like(model);
    g.weight[0](0, 0) = 1.0;
    adam_step(model, g, st);
    CHECK(model.layers[0].weight(0, 0) == Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(model.layers[0].bias[0] == 0.0);
}

TEST_CASE("adam: identical inputs give bitwise identical parameters", "[nn][adam]") {
    Rng rng = make_rng(9);
    auto m1 = random_model(4, {5}, 3, Activation::linear, 9);
    auto m2 = m1;
    AdamState s1(m1, {1e-2, 1e-4}), s2(m2, {1e-2, 1e-4});
    const Matrix x = random_matrix(6, 4, rng);
    const Matrix t = random_matrix(6, 3, rng);
    for (int step = 0; step < 5; ++step) {
        Rng r1 = make_rng(step), r2 = make_rng(step);
        auto f1 = forward(m1, x, true, r1);
        auto f2 = forward(m2, x, true, r2);
        adam_step(m1, backward(m1, f1.cache, mse_loss(f1.output, t).grad), s1);
        adam_step(m2, backward(m2, f2.cache, mse_loss(f2.output, t).grad), s2);
    }
    CHECK(m1 == m2);
}

TEST_CASE("adam: non-finite gradient names the layer", "[nn][adam]") {
    auto model = random_model(3, {4}, 2, Activation::linear, 10);
    AdamState st(model, {});
    auto g = Gradients::zeros_like(model);
    g.bias[1][0] = std::nan("");
    try {
        adam_step(model, g, st);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
    }
}

TEST_CASE("adam: frozen layer stays bitwise constant", "[nn][adam]") {
    Rng rng = make_rng(12);
    auto model = random_model(4, {5, 5}, 3, Activation::linear, 12);
    model.layers[0].trainable = false;
    const auto frozen = model.layers[0];
    AdamState st(model, {1e-2, 1e-3});
    const Matrix x = random_matrix(8, 4, rng);
    const Matrix t = random_matrix(8, 3, rng);
    for (int i = 0; i < 20; ++i) {
        auto f = forward(model, x, true, rng);
        adam_step(model, backward(model, f.cache, mse_loss(f.output, t).grad), st);
    }
    CHECK(model.layers[0] == frozen);
}

TEST_CASE("softmax_ce_loss: spec examples and oracle", "[nn][loss]") {
    SECTION("zero logits, K=10, hard target") {
        Matrix logits(1, 10);
        Matrix t(1, 10);
        t(0, 3) = 1.0;
        CHECK(softmax_ce_loss(logits, t).loss == Approx(std::log(10.0)).epsilon(1e-14));
    }
    SECTION("all-zero weights") {
        Rng rng = make_rng(1);
        const auto logits = random_matrix(3, 4, rng);
        const auto t = one_hot(std::vector<int>{0, 1, 2}, 4);
        const auto r = softmax_ce_loss(logits, t, std::vector<double>(3, 0.0));
        CHECK(r.loss == 0.0);
        for (double v : r.grad.data()) CHECK(v == 0.0);
    }
    SECTION("random 4x3 against a scalar-loop oracle") {
        Rng rng = make_rng(2);
        for (int trial = 0; trial < 20; ++trial) {
            const auto logits = random_matrix(4, 3, rng, 3.0);
            const auto t = softmax(random_matrix(4, 3, rng));
            std::vector<double> w(4);
            for (double& v : w) v = uniform01(rng);
            CHECK(std::abs(softmax_ce_loss(logits, t, w).loss - naive_ce(logits, t, w)) <= 1e-12);
        }
    }
    SECTION("non-finite logits") {
        Matrix logits{{0.0, std::numeric_limits<double>::infinity()}};
        CHECK_THROWS_AS(softmax_ce_loss(logits, Matrix{{1.0, 0.0}}), NumericError);
    }
}

TEST_CASE("softmax: rows sum to one and are shift invariant", "[nn][loss]") {
    Rng rng = make_rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        auto logits = random_matrix(5, 4, rng, 20.0);
        const auto p = softmax(logits);
        for (std::size_t r = 0; r < 5; ++r) {
            double s = 0.0;
            for (double v : p.row(r)) s += v;
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
        for (double& v : logits.row(2)) v += 123.456;
        const auto q = softmax(logits);
        for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(q(2, c) - p(2, c)) <= 1e-12);
    }
}

TEST_CASE("mse_loss: spec examples and oracle", "[nn][loss]") {
    Rng rng = make_rng(4);
    const auto a = random_matrix(3, 5, rng);
    CHECK(mse_loss(a, a).loss == 0.0);

    Matrix b = a;
    for (double& v : b.data()) v -= 2.0;
    CHECK(mse_loss(a, b).loss == Approx(4.0).epsilon(1e-14));

    const auto c = random_matrix(3, 5, rng);
    double naive = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 5; ++j) naive += (a(i, j) - c(i, j)) * (a(i, j) - c(i, j));
    naive /= 15.0;
    CHECK(std::abs(mse_loss(a, c).loss - naive) <= 1e-12);

    CHECK_THROWS_AS(mse_loss(a, Matrix(3, 4)), DimensionError);
}

TEST_CASE("checkpoint: JSON round trip is bitwise", "[nn][checkpoint]") {
    Rng rng = make_rng(14);
    auto model = make_mlp(7, std::vector<std::size_t>{9, 4}, 3, Activation::softmax, 0.25, rng);
    model.layers[1].trainable = false;
    const auto path = std::filesystem::temp_directory_path() / "ssltraffic_ckpt_test.json";
    save_checkpoint(model, path.string());
    const auto loaded = load_checkpoint(path.string());
    CHECK(loaded == model);
    std::filesystem::remove(path);
}

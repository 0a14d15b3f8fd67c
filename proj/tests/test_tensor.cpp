#include <doctest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gridse/optim.hpp"
#include "gridse/rng.hpp"
#include "gridse/tensor.hpp"

using namespace gridse;
using ad::Tape;
using ad::Tensor;

namespace {

std::vector<double> random_values(Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> out(n);
    for (auto& v : out) v = rng.normal(0.0, scale);
    return out;
}

/// Central finite-difference check of d(loss)/d(leaf) for a scalar-valued
/// builder. The builder must be a pure function of the leaf values.
void check_gradient(const std::function<Tensor(Tape&, const Tensor&)>& build,
                    std::vector<double> x0, std::size_t rows, std::size_t cols,
                    double tolerance = 1e-4) {
    Tape tape;
    Tensor leaf = tape.leaf(rows, cols, x0);
    Tensor loss = build(tape, leaf);
    tape.backward(loss);
    const auto grad = tape.grad(leaf);

    const double h = 1e-5;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        auto eval = [&](double delta) {
            std::vector<double> shifted = x0;
            shifted[i] += delta;
            Tape t2;
            Tensor l2 = t2.leaf(rows, cols, shifted);
            return build(t2, l2).value();
        };
        const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
        const double denom = std::max({std::abs(numeric), std::abs(grad[i]), 1e-8});
        CHECK(std::abs(numeric - grad[i]) / denom < tolerance);
    }
}

}  // namespace

TEST_CASE("row_softmax of a zero row is uniform") {
    Tape tape;
    const Tensor y = tape.row_softmax(Tensor::constant(1, 3, {0, 0, 0}));
    for (std::size_t c = 0; c < 3; ++c) CHECK(y.at(0, c) == doctest::Approx(1.0 / 3));
}

TEST_CASE("matmul by the identity is the identity") {
    Tape tape;
    const Tensor a = Tensor::constant(3, 2, {1, 2, 3, 4, 5, 6});
    const Tensor eye = Tensor::constant(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const Tensor out = tape.matmul(eye, a);
    CHECK(out.values() == a.values());
}

TEST_CASE("segment_mean over segments {0,0,1} of [2,4,6] is [3,6]") {
    Tape tape;
    const Tensor a = Tensor::constant(3, 1, {2, 4, 6});
    const Tensor out = tape.segment_mean(a, {0, 0, 1}, 2);
    CHECK(out.at(0, 0) == doctest::Approx(3.0));
    CHECK(out.at(1, 0) == doctest::Approx(6.0));
}

TEST_CASE("shape mismatches raise errors naming the op and shapes") {
    Tape tape;
    const Tensor a = Tensor::constant(2, 3, std::vector<double>(6, 1.0));
    const Tensor b = Tensor::constant(2, 2, std::vector<double>(4, 1.0));
    try {
        (void)tape.matmul(a, b);
        FAIL("expected shape error");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("2x2") != std::string::npos);
    }
    CHECK_THROWS_AS((void)tape.add(a, b), std::invalid_argument);
    CHECK_THROWS_AS((void)tape.mul(a, b), std::invalid_argument);
}

TEST_CASE("d/dx x^2 at x=3 is 6") {
    Tape tape;
    Tensor x = tape.leaf(1, 1, {3.0});
    Tensor loss = tape.mul(x, x);
    tape.backward(loss);
    CHECK(tape.grad(x)[0] == doctest::Approx(6.0));
}

TEST_CASE("backward rejects non-scalar losses and off-tape tensors") {
    Tape tape;
    Tensor x = tape.leaf(2, 1, {1.0, 2.0});
    Tensor y = tape.mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
    CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0)), std::invalid_argument);
}

TEST_CASE("detached tensors receive zero gradient") {
    Tape tape;
    Tensor x = tape.leaf(1, 1, {2.0});
    Tensor d = x.detach();
    CHECK(!d.requires_grad());
    Tensor loss = tape.mul(x, x);
    tape.backward(loss);
    const auto gd = tape.grad(d);
    REQUIRE(gd.size() == 1);
    CHECK(gd[0] == 0.0);
}

TEST_CASE("unreachable leaves get zero gradients") {
    Tape tape;
    Tensor x = tape.leaf(1, 1, {2.0});
    Tensor unused = tape.leaf(1, 1, {5.0});
    Tensor loss = tape.mul(x, x);
    tape.backward(loss);
    CHECK(tape.grad(unused)[0] == 0.0);
}

TEST_CASE("two-layer MLP gradients match central finite differences") {
    Rng rng(101);
    const std::size_t d_in = 4, hidden = 5;
    const auto x = random_values(rng, d_in);
    const auto w1v = random_values(rng, d_in * hidden, 0.5);
    const auto w2v = random_values(rng, hidden, 0.5);

    // Gradient w.r.t. the first-layer weights.
    check_gradient(
        [&](Tape& t, const Tensor& w1) {
            Tensor input = Tensor::constant(1, d_in, x);
            Tensor h = t.elu(t.matmul(input, w1));
            Tensor w2 = Tensor::constant(hidden, 1, w2v);
            Tensor out = t.matmul(h, w2);
            return t.mean_all(t.mul(out, out));
        },
        w1v, d_in, hidden);

    // Gradient w.r.t. the input.
    check_gradient(
        [&](Tape& t, const Tensor& input) {
            Tensor w1 = Tensor::constant(d_in, hidden, w1v);
            Tensor h = t.tanh(t.matmul(input, w1));
            Tensor w2 = Tensor::constant(hidden, 1, w2v);
            Tensor out = t.matmul(h, w2);
            return t.sum_all(t.mul(out, out));
        },
        x, 1, d_in);
}

TEST_CASE("finite-difference checks for the remaining primitives") {
    Rng rng(202);
    SUBCASE("sigmoid/leaky_relu/add_bias/rowwise_sum") {
        check_gradient(
            [&](Tape& t, const Tensor& a) {
                Tensor b = Tensor::constant(1, 3, {0.3, -0.2, 0.5});
                Tensor h = t.sigmoid(t.add_bias(a, b));
                h = t.leaky_relu(h, 0.2);
                return t.mean_all(t.rowwise_sum(h));
            },
            random_values(rng, 12), 4, 3);
    }
    SUBCASE("layer_norm") {
        check_gradient(
            [&](Tape& t, const Tensor& a) {
                Tensor g = Tensor::constant(1, 4, {1.0, 0.9, 1.1, 1.2});
                Tensor b = Tensor::constant(1, 4, {0.1, 0.0, -0.1, 0.2});
                return t.mean_all(t.layer_norm(a, g, b));
            },
            random_values(rng, 12), 3, 4, 2e-4);
    }
    SUBCASE("segment ops and gather") {
        check_gradient(
            [&](Tape& t, const Tensor& a) {
                Tensor g = t.gather_rows(a, {0, 1, 2, 1, 0});
                Tensor s = t.segment_sum(g, {0, 0, 1, 1, 2}, 3);
                Tensor m = t.segment_mean(g, {0, 0, 1, 1, 2}, 3);
                return t.mean_all(t.mul(s, m));
            },
            random_values(rng, 6), 3, 2);
    }
    SUBCASE("segment_softmax and row_scale") {
        check_gradient(
            [&](Tape& t, const Tensor& scores) {
                Tensor alpha = t.segment_softmax(scores, {0, 0, 0, 1, 1}, 2);
                Tensor msg = Tensor::constant(5, 2, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
                Tensor weighted = t.row_scale(msg, alpha);
                return t.sum_all(t.segment_sum(weighted, {0, 0, 0, 1, 1}, 2));
            },
            random_values(rng, 5), 5, 1);
    }
    SUBCASE("row_softmax, concat, slice, max") {
        // Fixed inputs keep every max() branch far from its tie point, so the
        // central difference never straddles the kink.
        check_gradient(
            [&](Tape& t, const Tensor& a) {
                Tensor sm = t.row_softmax(a);
                Tensor cat = t.concat_cols({sm, a});
                Tensor left = t.slice_cols(cat, 0, 3);
                Tensor right = t.slice_cols(cat, 3, 3);
                return t.mean_all(t.cwise_max(left, t.scale(right, 0.5)));
            },
            {2.0, -3.0, 1.5, -1.0, 2.5, -0.5}, 2, 3);
    }
}

TEST_CASE("dropout is identity in eval mode and masks in training mode") {
    Rng rng(303);
    Tape tape;
    Tensor x = tape.leaf(1, 100, std::vector<double>(100, 1.0));
    Tensor eval_out = tape.dropout(x, 0.5, rng, false);
    CHECK(eval_out.values() == x.values());

    Tensor train_out = tape.dropout(x, 0.5, rng, true);
    int zeros = 0;
    for (double v : train_out.values()) {
        CHECK((v == 0.0 || v == doctest::Approx(2.0)));
        if (v == 0.0) ++zeros;
    }
    CHECK(zeros > 20);
    CHECK(zeros < 80);

    // Mask is stored: backward routes gradients through surviving units only.
    Tensor loss = tape.mean_all(train_out);
    tape.backward(loss);
    const auto g = tape.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (train_out.values()[i] == 0.0)
            CHECK(g[i] == 0.0);
        else
            CHECK(g[i] == doctest::Approx(0.02));
    }
}

TEST_CASE("dropout masks are reproducible under a fixed seed") {
    auto draw = [] {
        Rng rng(404);
        Tape tape;
        Tensor x = tape.leaf(1, 64, std::vector<double>(64, 1.0));
        return tape.dropout(x, 0.3, rng, true).values();
    };
    CHECK(draw() == draw());
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    std::vector<double> param{1.0, -2.0, 3.0};
    const std::vector<double> grad(3, 0.0);
    ad::AdamState state;
    ad::adam_step(param, grad, state, {.lr = 1e-2});
    CHECK(param == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adam: first step is approximately lr * sign(grad)") {
    std::vector<double> param{1.0, 1.0};
    const std::vector<double> grad{0.5, -0.25};
    ad::AdamState state;
    const double lr = 1e-3;
    ad::adam_step(param, grad, state, {.lr = lr});
    // Bias-corrected first step: m_hat = g, v_hat = g^2, delta = lr * g/(|g|+eps).
    CHECK(param[0] == doctest::Approx(1.0 - lr).epsilon(1e-6));
    CHECK(param[1] == doctest::Approx(1.0 + lr).epsilon(1e-6));
}

TEST_CASE("adam: converges on a quadratic bowl within 500 steps") {
    // f(x) = sum (x - target)^2 with lr 1e-3. Adam moves about lr per step
    // and dithers at the lr scale once it arrives, so start within reach and
    // assert arrival to within a few lr.
    std::vector<double> x{0.1, -0.08};
    const std::vector<double> target{0.0, 0.0};
    ad::AdamState state;
    const ad::AdamConfig config{.lr = 1e-3};
    for (int step = 0; step < 500; ++step) {
        std::vector<double> grad(2);
        for (int i = 0; i < 2; ++i) grad[i] = 2.0 * (x[i] - target[i]);
        ad::adam_step(x, grad, state, config);
    }
    CHECK(std::abs(x[0] - target[0]) < 5e-3);
    CHECK(std::abs(x[1] - target[1]) < 5e-3);
}

TEST_CASE("adam rejects non-positive learning rates and shape mismatches") {
    std::vector<double> param{1.0};
    const std::vector<double> grad{1.0};
    ad::AdamState state;
    CHECK_THROWS_AS(ad::adam_step(param, grad, state, {.lr = 0.0}), std::invalid_argument);
    const std::vector<double> bad(2, 0.0);
    CHECK_THROWS_AS(ad::adam_step(param, bad, state, {.lr = 1e-3}), std::invalid_argument);
}

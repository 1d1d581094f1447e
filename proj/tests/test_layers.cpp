#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "anclaf/errors.hpp"
#include "anclaf/layers.hpp"
#include "support/gradcheck.hpp"

using namespace anclaf;
namespace t = anclaf::testing;

namespace {

AffineLayer fixed_layer(std::vector<double> w, std::size_t out, std::size_t in, std::vector<double> b, Activation a) {
    AffineLayer l;
    l.weight = Tensor({out, in}, std::move(w));
    l.bias = Tensor({out}, std::move(b));
    l.activation = a;
    return l;
}

LstmCell random_cell(std::mt19937_64& rng, std::size_t in, std::size_t h) {
    LstmCell c;
    c.weight = t::random_tensor(rng, {4 * h, in + h}, -0.5, 0.5);
    c.bias = t::random_tensor(rng, {4 * h}, -0.5, 0.5);
    return c;
}

double sig(double x) { return 1 / (1 + std::exp(-x)); }

}  // namespace

TEST(Affine, Examples) {
    EXPECT_EQ(affine_forward(fixed_layer({1, 0, 0, 1}, 2, 2, {0, 0}, Activation::none), Tensor::vector({1, 2})).at(1),
              2.0);
    EXPECT_EQ(affine_forward(fixed_layer({1, 1}, 1, 2, {1}, Activation::none), Tensor::vector({2, 3})).item(), 6.0);
    EXPECT_EQ(affine_forward(fixed_layer({0, 0}, 1, 2, {0}, Activation::sigmoid), Tensor::vector({9, -4})).item(), 0.5);
    EXPECT_THROW(affine_forward(fixed_layer({1, 1}, 1, 2, {1}, Activation::none), Tensor::vector({1, 2, 3})),
                 DimensionError);
}

TEST(Init, GlorotBoundsAndDeterminism) {
    ParamInit a(3), b(3), c(4);
    const Tensor wa = a.glorot(64, 32, 32, 64), wb = b.glorot(64, 32, 32, 64), wc = c.glorot(64, 32, 32, 64);
    const double lim = glorot_limit(32, 64);
    EXPECT_DOUBLE_EQ(lim, std::sqrt(6.0 / 96.0));
    for (double v : wa.data()) {
        EXPECT_GE(v, -lim);
        EXPECT_LE(v, lim);
    }
    EXPECT_TRUE(std::equal(wa.data().begin(), wa.data().end(), wb.data().begin()));
    EXPECT_FALSE(std::equal(wa.data().begin(), wa.data().end(), wc.data().begin()));
    EXPECT_TRUE(wa.requires_grad());
}

TEST(Init, LstmForgetBiasIsOne) {
    ParamInit init(1);
    const LstmCell cell = LstmCell::create(init, 5, 3);
    EXPECT_EQ(cell.weight.shape(), (Shape{12, 8}));
    for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(cell.bias.at(i), (i >= 3 && i < 6) ? 1.0 : 0.0);
    EXPECT_THROW(LstmCell::create(init, 0, 3), DimensionError);
}

TEST(ParamSet, RejectsDuplicates) {
    ParamInit init(1);
    const AffineLayer l = AffineLayer::create(init, 3, 2, Activation::tanh);
    ParamSet s;
    l.register_params("a.", s);
    EXPECT_EQ(s.size(), 2u);
    EXPECT_EQ(s.scalar_count(), 8u);
    EXPECT_THROW(l.register_params("a.", s), std::invalid_argument);
    EXPECT_THROW(l.register_params("b.", s), std::invalid_argument);
}

TEST(DenseStack, ShapesAndActivations) {
    ParamInit init(2);
    const DenseStack s = DenseStack::create(init, {6, 4, 3}, Activation::tanh, Activation::sigmoid);
    EXPECT_EQ(s.in_dim(), 6u);
    EXPECT_EQ(s.out_dim(), 3u);
    std::mt19937_64 rng(1);
    const Tensor y = s.forward(t::random_tensor(rng, {5, 6}));
    EXPECT_EQ(y.shape(), (Shape{5, 3}));
    for (double v : y.data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
}

TEST(Lstm, ZeroWeightsGiveZeroState) {
    LstmCell cell;
    cell.weight = Tensor({8, 5}, 0.0);
    cell.bias = Tensor({8}, 0.0);
    const auto r = lstm_step(cell, Tensor::vector({1, -2, 3}), LstmState::zeros(2));
    for (double v : r.state.h.data()) EXPECT_EQ(v, 0.0);
    for (double v : r.state.c.data()) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, SingleUnitMatchesScalarRecurrence) {
    // in = 1, h = 1: rows (i, f, g, o), columns [x, h]
    LstmCell cell;
    cell.weight = Tensor({4, 2}, std::vector<double>{0.5, -0.3, 0.2, 0.1, -0.7, 0.4, 0.9, 0.6});
    cell.bias = Tensor({4}, std::vector<double>{0.1, 1.0, -0.2, 0.05});
    const double x = 0.8, h0 = 0.3, c0 = -0.4;
    LstmState s{Tensor::vector({h0}), Tensor::vector({c0})};
    const auto r = lstm_step(cell, Tensor::vector({x}), s);
    const double i = sig(0.5 * x - 0.3 * h0 + 0.1), f = sig(0.2 * x + 0.1 * h0 + 1.0),
                 g = std::tanh(-0.7 * x + 0.4 * h0 - 0.2), o = sig(0.9 * x + 0.6 * h0 + 0.05);
    const double c = f * c0 + i * g;
    EXPECT_NEAR(r.state.c.item(), c, 1e-15);
    EXPECT_NEAR(r.state.h.item(), o * std::tanh(c), 1e-15);
    EXPECT_EQ(r.output.node(), r.state.h.node());
}

TEST(Lstm, CellStateBounded) {
    std::mt19937_64 rng(3);
    const LstmCell cell = random_cell(rng, 4, 3);
    for (int trial = 0; trial < 50; ++trial) {
        LstmState s{t::random_tensor(rng, {3}, -1, 1), t::random_tensor(rng, {3}, -3, 3)};
        const auto r = lstm_step(cell, t::random_tensor(rng, {4}, -5, 5), s);
        for (std::size_t j = 0; j < 3; ++j) EXPECT_LE(std::abs(r.state.c.at(j)), std::abs(s.c.at(j)) + 1.0);
    }
}

TEST(Lstm, UnrollMatchesStreamingAndComposes) {
    std::mt19937_64 rng(4);
    const LstmCell cell = random_cell(rng, 3, 4);
    std::vector<Tensor> xs;
    for (int i = 0; i < 12; ++i) xs.push_back(t::random_tensor(rng, {3}));
    const auto full = lstm_unroll(cell, xs, LstmState::zeros(4));
    LstmState s = LstmState::zeros(4);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        s = lstm_step(cell, xs[i], s).state;
        for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(full.outputs[i].at(j), s.h.at(j), 1e-12);
    }
    const auto one = lstm_unroll(cell, {xs[0]}, LstmState::zeros(4));
    EXPECT_EQ(one.states.size(), 1u);
    const std::vector<Tensor> a(xs.begin(), xs.begin() + 5), b(xs.begin() + 5, xs.end());
    const auto second = lstm_unroll(cell, b, lstm_unroll(cell, a, LstmState::zeros(4)).final_state);
    for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_NEAR(second.final_state.h.at(j), full.final_state.h.at(j), 1e-15);
        EXPECT_NEAR(second.final_state.c.at(j), full.final_state.c.at(j), 1e-15);
    }
    EXPECT_THROW(lstm_unroll(cell, {}, LstmState::zeros(4)), DimensionError);
}

TEST(Lstm, BatchedRowsMatchUnbatched) {
    std::mt19937_64 rng(5);
    const LstmCell cell = random_cell(rng, 3, 2);
    const Tensor xb = t::random_tensor(rng, {4, 3});
    const auto rb = lstm_step(cell, xb, LstmState::zeros(2, 4));
    for (std::size_t r = 0; r < 4; ++r) {
        const Tensor xr = Tensor::vector({xb.at(3 * r), xb.at(3 * r + 1), xb.at(3 * r + 2)});
        const auto ru = lstm_step(cell, xr, LstmState::zeros(2));
        for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(rb.output.at(2 * r + j), ru.output.at(j), 1e-15);
    }
}

TEST(Lstm, WidenedFrontPreservesOutputsForZeroPrefix) {
    std::mt19937_64 rng(6);
    const LstmCell cell = random_cell(rng, 3, 2);
    const LstmCell wide = cell.widened_front(4);
    EXPECT_EQ(wide.input(), 7u);
    EXPECT_EQ(wide.hidden(), 2u);
    const Tensor x = t::random_tensor(rng, {3});
    const Tensor xw = concat({t::random_tensor(rng, {4}), x}, 0);
    const auto a = lstm_step(cell, x, LstmState::zeros(2));
    const auto b = lstm_step(wide, xw, LstmState::zeros(2));
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(a.output.at(j), b.output.at(j), 1e-15);
}

TEST(Lstm, GradientCheckThroughUnroll) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<Tensor> in{t::random_tensor(rng, {8, 5}, -0.5, 0.5), t::random_tensor(rng, {8}, -0.5, 0.5),
                               t::random_tensor(rng, {3, 3})};
        const auto r = t::grad_check(
            [](const std::vector<Tensor>& v) {
                LstmCell c{v[0], v[1]};
                std::vector<Tensor> xs;
                for (std::size_t i = 0; i < 3; ++i) xs.push_back(slice(v[2], 0, i, i + 1).reshape({3}));
                const auto out = lstm_unroll(c, xs, LstmState::zeros(2));
                return sum(mul(concat(out.outputs, 0), Tensor::vector({0.3, -0.7, 1.1, 0.5, -0.2, 0.9})));
            },
            in);
        EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
    }
}

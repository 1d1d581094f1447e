#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <set>

#include "anclaf/errors.hpp"
#include "anclaf/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace anclaf;
using anclaf::testing::grad_check;
using anclaf::testing::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Tensor, ShapeAndDataAgree) {
    Tensor t({2, 3}, 1.5);
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Tensor, MatmulExamples) {
    const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
    const Tensor m = Tensor::matrix(2, 2, {1, 2, 3, 4});
    EXPECT_EQ(values(matmul(eye, m)), values(m));
    EXPECT_EQ(values(matmul(m, Tensor::matrix(2, 1, {1, 1}))), (std::vector<double>{3, 7}));
    EXPECT_EQ(values(matmul(Tensor({2, 2}, 0.0), Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}))),
              std::vector<double>(6, 0.0));
}

TEST(Tensor, MatmulShapeErrorNamesBothShapes) {
    try {
        matmul(Tensor({2, 3}), Tensor({2, 3}));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3] and [2x3]"), std::string::npos) << msg;
    }
}

TEST(Tensor, ElementwiseExamples) {
    EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0)).item(), 0.5);
    EXPECT_DOUBLE_EQ(tanh(Tensor::scalar(0)).item(), 0.0);
    EXPECT_EQ(values(add(Tensor::vector({1, 2}), Tensor::vector({3, 4}))), (std::vector<double>{4, 6}));
    EXPECT_THROW(add(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), DimensionError);
    // single-element right operand acts as a scalar
    EXPECT_EQ(values(mul(Tensor::vector({1, 2}), Tensor::scalar(3))), (std::vector<double>{3, 6}));
    const Tensor s = sigmoid(Tensor::vector({-800, 800}));
    EXPECT_GT(s.at(0), 0.0);
    EXPECT_LT(s.at(1), 1.0);
}

TEST(Tensor, SoftmaxExamples) {
    EXPECT_EQ(values(softmax(Tensor::vector({0, 0}))), (std::vector<double>{0.5, 0.5}));
    const Tensor s = softmax(Tensor::vector({std::log(1.0), std::log(3.0)}));
    EXPECT_NEAR(s.at(0), 0.25, 1e-15);
    EXPECT_NEAR(s.at(1), 0.75, 1e-15);
    for (double v : values(softmax(Tensor::vector({1000, 1000, 1000})))) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Tensor, SoftmaxShiftInvariant) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor x = random_tensor(rng, {5});
        const Tensor a = softmax(x), b = softmax(add_scalar(x, 123.25));
        double total = 0;
        for (std::size_t i = 0; i < 5; ++i) {
            EXPECT_NEAR(a.at(i), b.at(i), 1e-12);
            total += a.at(i);
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(Tensor, ConcatExamples) {
    const Tensor c = concat({Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(1, 1, {3})}, -1);
    EXPECT_EQ(c.shape(), (Shape{1, 3}));
    EXPECT_EQ(values(c), (std::vector<double>{1, 2, 3}));
    const Tensor x = Tensor::vector({4, 5});
    EXPECT_EQ(concat({x}, 0).node(), x.node());
    EXPECT_EQ(concat({Tensor({2, 3}), Tensor({2, 4})}, -1).shape(), (Shape{2, 7}));
    EXPECT_THROW(concat({Tensor({2, 3}), Tensor({3, 4})}, -1), DimensionError);
}

TEST(Tensor, ConcatSplitRoundTripIsExact) {
    std::mt19937_64 rng(4);
    const Tensor a = random_tensor(rng, {3, 2}), b = random_tensor(rng, {3, 5});
    const auto parts = split(concat({a, b}, 1), 1, {2, 5});
    EXPECT_EQ(values(parts[0]), values(a));
    EXPECT_EQ(values(parts[1]), values(b));
}

TEST(Tensor, ReduceExamples) {
    EXPECT_DOUBLE_EQ(mean(Tensor::vector({1, 2, 3})).item(), 2.0);
    EXPECT_DOUBLE_EQ(var(Tensor::vector({4, 4, 4})).item(), 0.0);
    EXPECT_DOUBLE_EQ(var(Tensor::vector({1, 2, 3})).item(), 2.0 / 3.0);
    EXPECT_THROW(sum(Tensor::vector({})), std::exception);
}

TEST(Tensor, BackwardExamples) {
    Tensor x = Tensor::vector({1, 2});
    x.set_requires_grad(true);
    backward(sum(x));
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 1}));

    Tensor y = Tensor::vector({3});
    y.set_requires_grad(true);
    backward(sum(mul(y, y)));
    EXPECT_DOUBLE_EQ(y.grad()[0], 6.0);

    Tensor z = Tensor::vector({0});
    z.set_requires_grad(true);
    backward(mean(sigmoid(z)));
    EXPECT_DOUBLE_EQ(z.grad()[0], 0.25);

    EXPECT_THROW(backward(Tensor::vector({1, 2})), DimensionError);
}

TEST(Tensor, SharedSubexpressionAccumulates) {
    Tensor x = Tensor::vector({2});
    x.set_requires_grad(true);
    const Tensor t = tanh(x);
    backward(sum(add(mul(t, t), t)));
    const double th = std::tanh(2.0);
    EXPECT_NEAR(x.grad()[0], (2 * th + 1) * (1 - th * th), 1e-15);
}

TEST(Tensor, BackwardVisitsEachNodeOnce) {
    Tensor x = Tensor::vector({1, 2, 3});
    x.set_requires_grad(true);
    const Tensor a = tanh(x);
    const Tensor loss = sum(mul(a, a));
    const auto order = backward_order(loss);
    std::set<const detail::Node*> seen(order.begin(), order.end());
    EXPECT_EQ(seen.size(), order.size());
    EXPECT_EQ(order.front(), loss.node().get());
}

TEST(Tensor, DetachCutsHistory) {
    Tensor x = Tensor::vector({1});
    x.set_requires_grad(true);
    const Tensor d = mul(x, x).detach();
    EXPECT_FALSE(d.requires_grad());
}

TEST(Tensor, GradientsAreDeterministic) {
    auto run = [] {
        std::mt19937_64 rng(9);
        Tensor w = random_tensor(rng, {4, 3});
        w.set_requires_grad(true);
        const Tensor x = random_tensor(rng, {5, 3});
        backward(mean(sigmoid(linear(x, w, Tensor({4}, 0.1)))));
        return std::vector<double>(w.grad().begin(), w.grad().end());
    };
    EXPECT_EQ(run(), run());
}

// ---- finite-difference checks per op --------------------------------------

namespace {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

void check_op(const char* name, const Fn& f, const std::vector<Shape>& shapes, double lo = -2, double hi = 2,
              int trials = 20) {
    std::mt19937_64 rng(std::hash<std::string>{}(name));
    for (int t = 0; t < trials; ++t) {
        std::vector<Tensor> in;
        for (const Shape& s : shapes) in.push_back(random_tensor(rng, s, lo, hi));
        const auto r = grad_check(f, in);
        EXPECT_LT(r.max_rel_error, 1e-4) << name << " trial " << t << ": " << r.worst;
    }
}

// Sum weighted by a fixed pattern so every output element gets a distinct
// upstream gradient.
Tensor weighted_sum(const Tensor& y) {
    std::vector<double> w(y.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.17 * static_cast<double>(i % 7);
    return sum(mul(y, Tensor(y.shape(), std::move(w))));
}

}  // namespace

TEST(TensorGradCheck, Matmul) {
    check_op("matmul", [](const auto& v) { return weighted_sum(matmul(v[0], v[1])); }, {{3, 4}, {4, 2}});
}
TEST(TensorGradCheck, Linear) {
    check_op("linear", [](const auto& v) { return weighted_sum(linear(v[0], v[1], v[2])); }, {{3, 4}, {5, 4}, {5}});
    check_op("linear1d", [](const auto& v) { return weighted_sum(linear(v[0], v[1], v[2])); }, {{4}, {2, 4}, {2}});
}
TEST(TensorGradCheck, Binary) {
    check_op("add", [](const auto& v) { return weighted_sum(add(v[0], v[1])); }, {{2, 3}, {2, 3}});
    check_op("sub", [](const auto& v) { return weighted_sum(sub(v[0], v[1])); }, {{2, 3}, {2, 3}});
    check_op("mul", [](const auto& v) { return weighted_sum(mul(v[0], v[1])); }, {{2, 3}, {2, 3}});
    check_op("mul_scalar", [](const auto& v) { return weighted_sum(mul(v[0], v[1])); }, {{4}, {1}});
    check_op("div", [](const auto& v) { return weighted_sum(div(v[0], add_scalar(square(v[1]), 0.5))); },
             {{5}, {5}});
}
TEST(TensorGradCheck, Unary) {
    check_op("scale", [](const auto& v) { return weighted_sum(scale(v[0], -1.7)); }, {{5}});
    check_op("tanh", [](const auto& v) { return weighted_sum(tanh(v[0])); }, {{5}});
    check_op("sigmoid", [](const auto& v) { return weighted_sum(sigmoid(v[0])); }, {{5}});
    check_op("relu", [](const auto& v) { return weighted_sum(relu(v[0])); }, {{5}}, 0.05, 2);
    check_op("relu_neg", [](const auto& v) { return weighted_sum(relu(v[0])); }, {{5}}, -2, -0.05);
    check_op("exp", [](const auto& v) { return weighted_sum(exp(v[0])); }, {{5}});
    check_op("log", [](const auto& v) { return weighted_sum(log(v[0])); }, {{5}}, 0.1, 3);
    check_op("sqrt", [](const auto& v) { return weighted_sum(sqrt(v[0])); }, {{5}}, 0.1, 3);
    check_op("square", [](const auto& v) { return weighted_sum(square(v[0])); }, {{5}});
    check_op("clamp", [](const auto& v) { return weighted_sum(clamp(v[0], -0.95, 0.95)); }, {{5}}, -0.9, 0.9);
}
TEST(TensorGradCheck, Structure) {
    check_op("softmax", [](const auto& v) { return weighted_sum(softmax(v[0])); }, {{3, 4}});
    check_op("log_softmax", [](const auto& v) { return weighted_sum(log_softmax(v[0])); }, {{3, 4}});
    check_op("concat", [](const auto& v) { return weighted_sum(concat({v[0], v[1]}, -1)); }, {{2, 3}, {2, 2}});
    check_op("concat0", [](const auto& v) { return weighted_sum(concat({v[0], v[1]}, 0)); }, {{2, 3}, {1, 3}});
    check_op("slice", [](const auto& v) { return weighted_sum(slice(v[0], 1, 1, 3)); }, {{3, 4}});
    check_op("split", [](const auto& v) { return weighted_sum(split(v[0], 0, {1, 2})[1]); }, {{3, 2}});
    check_op("gather", [](const auto& v) { return weighted_sum(gather(v[0], {0, 5, 5, 2})); }, {{2, 3}});
    check_op("scale_rows", [](const auto& v) { return weighted_sum(scale_rows(v[0], v[1])); }, {{3, 4}, {3}});
    check_op("reshape", [](const auto& v) { return weighted_sum(matmul(v[0].reshape({2, 3}), v[1])); }, {{6}, {3, 2}});
}
TEST(TensorGradCheck, Reductions) {
    check_op("sum", [](const auto& v) { return sum(square(v[0])); }, {{4}});
    check_op("mean", [](const auto& v) { return mean(tanh(v[0])); }, {{2, 3}});
    check_op("var", [](const auto& v) { return var(v[0]); }, {{6}});
}
TEST(TensorGradCheck, TwoLayerComposition) {
    check_op("mlp",
             [](const auto& v) { return mean(square(linear(tanh(linear(v[0], v[1], v[2])), v[3], v[4]))); },
             {{4, 3}, {5, 3}, {5}, {2, 5}, {2}});
}

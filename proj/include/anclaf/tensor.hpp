#pragma once
// Dense float64 tensors with tape-style reverse-mode differentiation.
//
// Each operation whose inputs require gradients records a node holding its
// parents and a backward closure. Nodes carry a global sequence number, so
// sorting the nodes reachable from a loss by descending sequence gives the
// reverse of execution order. The graph is rebuilt on every forward pass and
// released when the last handle to the loss goes away.
//
// Binary operations accept equal shapes or a single-element right operand;
// there is no other broadcasting.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "anclaf/errors.hpp"

namespace anclaf {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::uint64_t seq = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<double>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value);
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const { return shape().at(axis); }
    std::size_t size() const;

    std::span<const double> data() const;
    std::span<double> data_mut();
    double at(std::size_t flat_index) const { return data()[flat_index]; }
    double item() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> grad_mut();
    void zero_grad();

    // Copy of the values with no graph history.
    Tensor detach() const;
    Tensor reshape(Shape shape) const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// ---- linear algebra --------------------------------------------------------

// a[m x k] * b[k x p]
Tensor matmul(const Tensor& a, const Tensor& b);

// x * W^T + bias for x of shape [in] or [batch x in], W [out x in], bias [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// ---- elementwise -----------------------------------------------------------

enum class OpKind { add, sub, mul, tanh, sigmoid, relu, scale };

// Unified entry point; unary kinds ignore `b`, `scale` multiplies by `factor`.
Tensor elementwise(OpKind kind, const Tensor& a, const Tensor& b = {}, double factor = 1.0);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
// Derivative at exactly zero is taken as zero.
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
// Gradient passes only where lo < a < hi.
Tensor clamp(const Tensor& a, double lo, double hi);

// x[b, j] * s[b] for x [batch x d] and s with `batch` elements.
Tensor scale_rows(const Tensor& x, const Tensor& s);

// ---- normalization, structure ---------------------------------------------

// Along the last axis, with max subtraction.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

// axis < 0 counts from the end.
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<std::size_t>& sizes);

// Flat-index gather; result is 1-D with indices.size() entries.
Tensor gather(const Tensor& x, const std::vector<std::size_t>& indices);

// ---- reductions over every element (result shape {1}) ---------------------

enum class Stat { mean, var_population, sum };

Tensor reduce(Stat stat, const Tensor& x);
inline Tensor sum(const Tensor& x) { return reduce(Stat::sum, x); }
inline Tensor mean(const Tensor& x) { return reduce(Stat::mean, x); }
inline Tensor var(const Tensor& x) { return reduce(Stat::var_population, x); }

// ---- differentiation -------------------------------------------------------

// Accumulates d(loss)/d(t) into every requires_grad tensor reachable from loss.
void backward(const Tensor& loss);

// Nodes reachable from `loss` that take part in differentiation, in the order
// backward() visits them.
std::vector<const detail::Node*> backward_order(const Tensor& loss);

}  // namespace anclaf

#include "anclaf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "anclaf/kernels.hpp"

namespace anclaf {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

std::uint64_t next_seq() {
    static std::atomic<std::uint64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed) + 1;
}

NodePtr make_node(Shape shape, std::vector<double> data) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->seq = next_seq();
    return n;
}

const NodePtr& checked(const Tensor& t, const char* op) {
    if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
    return t.node();
}

// Builds the result node; attaches parents and the closure only when some
// parent participates in differentiation.
Tensor record(const char* op, Shape shape, std::vector<double> data, std::vector<NodePtr> parents,
              std::function<void(Node&)> backward_fn) {
    NodePtr out = make_node(std::move(shape), std::move(data));
    out->op = op;
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
    if (any) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        out->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(out));
}

std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
    const long r = static_cast<long>(rank);
    const long a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r)
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " out of range for rank " + std::to_string(rank));
    return static_cast<std::size_t>(a);
}

bool is_scalar_operand(const Tensor& b) { return b.size() == 1; }

void check_binary(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape() && !is_scalar_operand(b))
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Deriv deriv) {
    const NodePtr& an = checked(a, op);
    std::vector<double> out(an->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(an->data[i]);
    return record(op, an->shape, std::move(out), {an}, [deriv](Node& self) {
        Node& p = *self.parents[0];
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * deriv(p.data[i], self.data[i]);
    });
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill) {
    for (std::size_t d : shape)
        if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
    const std::size_t n = shape_size(shape);
    node_ = make_node(std::move(shape), std::vector<double>(n, fill));
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
    for (std::size_t d : shape)
        if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
    if (shape_size(shape) != values.size())
        throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    node_ = make_node(std::move(shape), std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
}

const Shape& Tensor::shape() const { return checked(*this, "shape")->shape; }
std::size_t Tensor::size() const { return checked(*this, "size")->data.size(); }
std::span<const double> Tensor::data() const { return checked(*this, "data")->data; }
std::span<double> Tensor::data_mut() { return checked(*this, "data")->data; }

double Tensor::item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

bool Tensor::requires_grad() const { return checked(*this, "requires_grad")->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    checked(*this, "requires_grad")->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const {
    const NodePtr& n = checked(*this, "grad");
    return n->grad.size() == n->data.size();
}

std::span<const double> Tensor::grad() const { return checked(*this, "grad")->grad; }
std::span<double> Tensor::grad_mut() { return checked(*this, "grad")->ensure_grad(); }
void Tensor::zero_grad() { checked(*this, "grad")->grad.clear(); }

Tensor Tensor::detach() const {
    const NodePtr& n = checked(*this, "detach");
    return Tensor(make_node(n->shape, n->data));
}

Tensor Tensor::reshape(Shape shape) const {
    const NodePtr& n = checked(*this, "reshape");
    if (shape_size(shape) != n->data.size())
        throw DimensionError("reshape: " + shape_str(n->shape) + " -> " + shape_str(shape));
    return record("reshape", std::move(shape), n->data, {n}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const NodePtr& an = checked(a, "matmul");
    const NodePtr& bn = checked(b, "matmul");
    if (an->shape.size() != 2 || bn->shape.size() != 2 || an->shape[1] != bn->shape[0])
        throw DimensionError("matmul: incompatible shapes " + shape_str(an->shape) + " and " +
                             shape_str(bn->shape));
    const std::size_t m = an->shape[0], k = an->shape[1], p = bn->shape[1];
    std::vector<double> out(m * p, 0.0);
    kernels::active().gemm_nn(an->data.data(), bn->data.data(), out.data(), m, k, p);
    return record("matmul", {m, p}, std::move(out), {an, bn}, [m, k, p](Node& self) {
        Node& A = *self.parents[0];
        Node& B = *self.parents[1];
        const auto& kt = kernels::active();
        if (A.requires_grad)  // dA += G * B^T
            kt.gemm_nt(self.grad.data(), B.data.data(), A.ensure_grad().data(), m, p, k);
        if (B.requires_grad)  // dB += A^T * G
            kt.gemm_tn(A.data.data(), self.grad.data(), B.ensure_grad().data(), m, k, p);
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const NodePtr& xn = checked(x, "linear");
    const NodePtr& wn = checked(weight, "linear");
    const NodePtr& bn = checked(bias, "linear");
    if (wn->shape.size() != 2)
        throw DimensionError("linear: weight must be 2-D, got " + shape_str(wn->shape));
    const std::size_t out_dim = wn->shape[0], in_dim = wn->shape[1];
    if (bn->data.size() != out_dim)
        throw DimensionError("linear: bias " + shape_str(bn->shape) + " does not match weight " +
                             shape_str(wn->shape));
    std::size_t batch = 0;
    Shape out_shape;
    if (xn->shape.size() == 1 && xn->shape[0] == in_dim) {
        batch = 1;
        out_shape = {out_dim};
    } else if (xn->shape.size() == 2 && xn->shape[1] == in_dim) {
        batch = xn->shape[0];
        out_shape = {batch, out_dim};
    } else {
        throw DimensionError("linear: input " + shape_str(xn->shape) + " incompatible with weight " +
                             shape_str(wn->shape));
    }
    std::vector<double> out(batch * out_dim);
    for (std::size_t i = 0; i < batch; ++i)
        std::copy(bn->data.begin(), bn->data.end(), out.begin() + i * out_dim);
    kernels::active().gemm_nt(xn->data.data(), wn->data.data(), out.data(), batch, in_dim, out_dim);
    return record("linear", std::move(out_shape), std::move(out), {xn, wn, bn},
                  [batch, in_dim, out_dim](Node& self) {
                      Node& X = *self.parents[0];
                      Node& W = *self.parents[1];
                      Node& B = *self.parents[2];
                      const auto& kt = kernels::active();
                      if (X.requires_grad)  // dX += G * W
                          kt.gemm_nn(self.grad.data(), W.data.data(), X.ensure_grad().data(), batch,
                                     out_dim, in_dim);
                      if (W.requires_grad)  // dW += G^T * X
                          kt.gemm_tn(self.grad.data(), X.data.data(), W.ensure_grad().data(), batch,
                                     out_dim, in_dim);
                      if (B.requires_grad) {
                          auto& gb = B.ensure_grad();
                          for (std::size_t i = 0; i < batch; ++i)
                              for (std::size_t o = 0; o < out_dim; ++o)
                                  gb[o] += self.grad[i * out_dim + o];
                      }
                  });
}

// ---- elementwise -----------------------------------------------------------

namespace {

// Right operand may be a single element, in which case its gradient is the
// sum over the broadcast.
template <class Fwd, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
    const NodePtr& an = checked(a, op);
    const NodePtr& bn = checked(b, op);
    check_binary(a, b, op);
    const bool bcast = an->shape != bn->shape;
    std::vector<double> out(an->data.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = fwd(an->data[i], bn->data[bcast ? 0 : i]);
    return record(op, an->shape, std::move(out), {an, bn}, [bcast, da, db](Node& self) {
        Node& A = *self.parents[0];
        Node& B = *self.parents[1];
        const std::size_t n = self.data.size();
        if (A.requires_grad) {
            auto& g = A.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                g[i] += self.grad[i] * da(A.data[i], B.data[bcast ? 0 : i], self.data[i]);
        }
        if (B.requires_grad) {
            auto& g = B.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                g[bcast ? 0 : i] += self.grad[i] * db(A.data[i], B.data[bcast ? 0 : i], self.data[i]);
        }
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double out) { return -out / y; });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(
        "scale", a, [factor](double x) { return factor * x; },
        [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary(
        "add_scalar", a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor tanh(const Tensor& a) {
    return unary(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        "sigmoid", a,
        [](double x) {
            // Kept strictly inside (0, 1) even where the exact value rounds off.
            constexpr double lo = std::numeric_limits<double>::min();
            constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
            const double y = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            return std::clamp(y, lo, hi);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    return unary(
        "relu", a, [](double x) { return x > 0 ? x : 0.0; },
        [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
    return unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
    return unary(
        "sqrt", a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return y > 0 ? 0.5 / y : 0.0; });
}

Tensor square(const Tensor& a) {
    return unary(
        "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return unary(
        "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor elementwise(OpKind kind, const Tensor& a, const Tensor& b, double factor) {
    switch (kind) {
        case OpKind::add: return add(a, b);
        case OpKind::sub: return sub(a, b);
        case OpKind::mul: return mul(a, b);
        case OpKind::tanh: return tanh(a);
        case OpKind::sigmoid: return sigmoid(a);
        case OpKind::relu: return relu(a);
        case OpKind::scale: return scale(a, factor);
    }
    throw std::invalid_argument("elementwise: unknown op kind");
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
    const NodePtr& xn = checked(x, "scale_rows");
    const NodePtr& sn = checked(s, "scale_rows");
    if (xn->shape.size() != 2 || sn->data.size() != xn->shape[0])
        throw DimensionError("scale_rows: " + shape_str(xn->shape) + " rows vs scales " +
                             shape_str(sn->shape));
    const std::size_t rows = xn->shape[0], cols = xn->shape[1];
    std::vector<double> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xn->data[r * cols + c] * sn->data[r];
    return record("scale_rows", xn->shape, std::move(out), {xn, sn}, [rows, cols](Node& self) {
        Node& X = *self.parents[0];
        Node& S = *self.parents[1];
        if (X.requires_grad) {
            auto& g = X.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[r * cols + c] * S.data[r];
        }
        if (S.requires_grad) {
            auto& g = S.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < cols; ++c) acc += self.grad[r * cols + c] * X.data[r * cols + c];
                g[r] += acc;
            }
        }
    });
}

// ---- normalization, structure ---------------------------------------------

Tensor softmax(const Tensor& x) {
    const NodePtr& xn = checked(x, "softmax");
    const std::size_t cols = xn->shape.back();
    const std::size_t rows = xn->data.size() / cols;
    std::vector<double> out(xn->data.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xn->data.data() + r * cols;
        double* o = out.data() + r * cols;
        const double mx = *std::max_element(in, in + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - mx));
        for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
    }
    return record("softmax", xn->shape, std::move(out), {xn}, [rows, cols](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * cols;
            const double* gy = self.grad.data() + r * cols;
            double inner = 0.0;
            for (std::size_t c = 0; c < cols; ++c) inner += gy[c] * y[c];
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (gy[c] - inner);
        }
    });
}

Tensor log_softmax(const Tensor& x) {
    const NodePtr& xn = checked(x, "log_softmax");
    const std::size_t cols = xn->shape.back();
    const std::size_t rows = xn->data.size() / cols;
    std::vector<double> out(xn->data.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xn->data.data() + r * cols;
        const double mx = *std::max_element(in, in + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = in[c] - lse;
    }
    return record("log_softmax", xn->shape, std::move(out), {xn}, [rows, cols](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * cols;
            const double* gy = self.grad.data() + r * cols;
            double total = 0.0;
            for (std::size_t c = 0; c < cols; ++c) total += gy[c];
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += gy[c] - std::exp(y[c]) * total;
        }
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw DimensionError("concat: no parts");
    const Shape& first = checked(parts[0], "concat")->shape;
    const std::size_t ax = norm_axis(axis, first.size(), "concat");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= first[i];
    for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];

    std::vector<NodePtr> nodes;
    std::vector<std::size_t> widths;  // contiguous chunk per outer index
    std::size_t axis_total = 0;
    for (const Tensor& t : parts) {
        const NodePtr& n = checked(t, "concat");
        bool ok = n->shape.size() == first.size();
        for (std::size_t i = 0; ok && i < first.size(); ++i)
            if (i != ax && n->shape[i] != first[i]) ok = false;
        if (!ok)
            throw DimensionError("concat: part " + shape_str(n->shape) + " inconsistent with " +
                                 shape_str(first) + " along axis " + std::to_string(ax));
        nodes.push_back(n);
        widths.push_back(n->shape[ax] * inner);
        axis_total += n->shape[ax];
    }
    if (nodes.size() == 1) return parts[0];

    Shape out_shape = first;
    out_shape[ax] = axis_total;
    const std::size_t row = axis_total * inner;
    std::vector<double> out(outer * row);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < nodes.size(); ++p) {
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(nodes[p]->data.data() + o * widths[p], widths[p], out.data() + o * row + offset);
        offset += widths[p];
    }
    return record("concat", std::move(out_shape), std::move(out), std::move(nodes),
                  [widths, outer, row](Node& self) {
                      std::size_t off = 0;
                      for (std::size_t p = 0; p < self.parents.size(); ++p) {
                          Node& P = *self.parents[p];
                          if (P.requires_grad) {
                              auto& g = P.ensure_grad();
                              for (std::size_t o = 0; o < outer; ++o)
                                  for (std::size_t i = 0; i < widths[p]; ++i)
                                      g[o * widths[p] + i] += self.grad[o * row + off + i];
                          }
                          off += widths[p];
                      }
                  });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
    const NodePtr& xn = checked(x, "slice");
    const std::size_t ax = norm_axis(axis, xn->shape.size(), "slice");
    if (begin >= end || end > xn->shape[ax])
        throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") invalid for axis of length " + std::to_string(xn->shape[ax]));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= xn->shape[i];
    for (std::size_t i = ax + 1; i < xn->shape.size(); ++i) inner *= xn->shape[i];
    const std::size_t row = xn->shape[ax] * inner;
    const std::size_t width = (end - begin) * inner;
    const std::size_t off = begin * inner;
    Shape out_shape = xn->shape;
    out_shape[ax] = end - begin;
    std::vector<double> out(outer * width);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(xn->data.data() + o * row + off, width, out.data() + o * width);
    return record("slice", std::move(out_shape), std::move(out), {xn}, [outer, row, width, off](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < width; ++i) g[o * row + off + i] += self.grad[o * width + i];
    });
}

std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<std::size_t>& sizes) {
    const std::size_t ax = norm_axis(axis, x.rank(), "split");
    std::size_t total = 0;
    for (std::size_t s : sizes) total += s;
    if (total != x.dim(ax))
        throw DimensionError("split: sizes sum to " + std::to_string(total) + " but axis has " +
                             std::to_string(x.dim(ax)));
    std::vector<Tensor> parts;
    std::size_t begin = 0;
    for (std::size_t s : sizes) {
        parts.push_back(slice(x, static_cast<int>(ax), begin, begin + s));
        begin += s;
    }
    return parts;
}

Tensor gather(const Tensor& x, const std::vector<std::size_t>& indices) {
    const NodePtr& xn = checked(x, "gather");
    if (indices.empty()) throw DimensionError("gather: empty index list");
    std::vector<double> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= xn->data.size())
            throw DimensionError("gather: index " + std::to_string(indices[i]) + " out of range for " +
                                 shape_str(xn->shape));
        out[i] = xn->data[indices[i]];
    }
    return record("gather", {indices.size()}, std::move(out), {xn}, [indices](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < indices.size(); ++i) g[indices[i]] += self.grad[i];
    });
}

// ---- reductions ------------------------------------------------------------

Tensor reduce(Stat stat, const Tensor& x) {
    const NodePtr& xn = checked(x, "reduce");
    const std::size_t n = xn->data.size();
    if (n == 0) throw DegenerateInputError("reduce: empty input");
    double total = 0.0;
    for (double v : xn->data) total += v;
    const double mu = total / static_cast<double>(n);
    switch (stat) {
        case Stat::sum:
            return record("sum", {1}, {total}, {xn}, [](Node& self) {
                auto& g = self.parents[0]->ensure_grad();
                for (double& v : g) v += self.grad[0];
            });
        case Stat::mean:
            return record("mean", {1}, {mu}, {xn}, [n](Node& self) {
                auto& g = self.parents[0]->ensure_grad();
                const double s = self.grad[0] / static_cast<double>(n);
                for (double& v : g) v += s;
            });
        case Stat::var_population: {
            double ss = 0.0;
            for (double v : xn->data) ss += (v - mu) * (v - mu);
            return record("var", {1}, {ss / static_cast<double>(n)}, {xn}, [n, mu](Node& self) {
                Node& P = *self.parents[0];
                auto& g = P.ensure_grad();
                const double s = 2.0 * self.grad[0] / static_cast<double>(n);
                for (std::size_t i = 0; i < n; ++i) g[i] += s * (P.data[i] - mu);
            });
        }
    }
    throw std::invalid_argument("reduce: unknown statistic");
}

// ---- differentiation -------------------------------------------------------

namespace {

std::vector<Node*> collect(const NodePtr& root) {
    std::vector<Node*> order;
    std::unordered_set<const Node*> seen;
    std::vector<Node*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const NodePtr& p : n->parents)
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });
    return order;
}

}  // namespace

std::vector<const detail::Node*> backward_order(const Tensor& loss) {
    const NodePtr& root = checked(loss, "backward");
    if (!root->requires_grad) return {};
    auto nodes = collect(root);
    return {nodes.begin(), nodes.end()};
}

void backward(const Tensor& loss) {
    const NodePtr& root = checked(loss, "backward");
    if (root->data.size() != 1)
        throw DimensionError("backward: loss must be scalar, got " + shape_str(root->shape));
    if (!root->requires_grad) return;
    root->ensure_grad()[0] += 1.0;
    for (Node* n : collect(root))
        if (n->backward_fn && n->grad.size() == n->data.size()) n->backward_fn(*n);
}

}  // namespace anclaf

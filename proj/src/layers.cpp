#include "anclaf/layers.hpp"

#include <cmath>
#include <unordered_set>

namespace anclaf {

Tensor activate(Activation act, const Tensor& x) {
    switch (act) {
        case Activation::none: return x;
        case Activation::tanh: return tanh(x);
        case Activation::relu: return relu(x);
        case Activation::sigmoid: return sigmoid(x);
    }
    return x;
}

// ---- ParamSet --------------------------------------------------------------

void ParamSet::add(std::string name, Tensor tensor) {
    for (const auto& [n, t] : entries_) {
        if (n == name) throw std::invalid_argument("duplicate parameter name: " + name);
        if (t.node() == tensor.node())
            throw std::invalid_argument("parameter " + name + " already registered as " + n);
    }
    entries_.emplace_back(std::move(name), std::move(tensor));
}

void ParamSet::append(const std::string& prefix, const ParamSet& other) {
    for (const auto& [n, t] : other.entries_) add(prefix + n, t);
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
}

const Tensor* ParamSet::find(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.first == name) return &e.second;
    return nullptr;
}

void ParamSet::zero_grad() const {
    for (const auto& e : entries_) Tensor(e.second).zero_grad();
}

// ---- initialization --------------------------------------------------------

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Tensor ParamInit::glorot(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out) {
    if (rows == 0 || cols == 0) throw DimensionError("parameter dimensions must be positive");
    const double lim = glorot_limit(fan_in, fan_out);
    std::uniform_real_distribution<double> dist(-lim, lim);
    std::vector<double> values(rows * cols);
    for (double& v : values) v = dist(rng_);
    Tensor t(Shape{rows, cols}, std::move(values));
    t.set_requires_grad(true);
    return t;
}

// ---- affine ----------------------------------------------------------------

AffineLayer AffineLayer::create(ParamInit& init, std::size_t in, std::size_t out, Activation act) {
    AffineLayer layer;
    layer.weight = init.glorot(out, in, in, out);
    layer.bias = Tensor(Shape{out}, 0.0);
    layer.bias.set_requires_grad(true);
    layer.activation = act;
    return layer;
}

void AffineLayer::register_params(const std::string& prefix, ParamSet& set) const {
    set.add(prefix + "weight", weight);
    set.add(prefix + "bias", bias);
}

Tensor affine_forward(const AffineLayer& layer, const Tensor& x) {
    return activate(layer.activation, linear(x, layer.weight, layer.bias));
}

DenseStack DenseStack::create(ParamInit& init, const std::vector<std::size_t>& dims, Activation hidden,
                              Activation last) {
    if (dims.size() < 2) throw DimensionError("dense stack needs at least input and output dims");
    DenseStack stack;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
        stack.layers.push_back(
            AffineLayer::create(init, dims[i], dims[i + 1], i + 2 == dims.size() ? last : hidden));
    return stack;
}

Tensor DenseStack::forward(const Tensor& x) const {
    Tensor y = x;
    for (const AffineLayer& l : layers) y = affine_forward(l, y);
    return y;
}

void DenseStack::register_params(const std::string& prefix, ParamSet& set) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
        layers[i].register_params(prefix + std::to_string(i) + ".", set);
}

// ---- LSTM ------------------------------------------------------------------

LstmCell LstmCell::create(ParamInit& init, std::size_t input, std::size_t hidden) {
    if (input == 0 || hidden == 0) throw DimensionError("lstm dimensions must be positive");
    LstmCell cell;
    cell.weight = init.glorot(4 * hidden, input + hidden, input + hidden, 4 * hidden);
    std::vector<double> b(4 * hidden, 0.0);
    for (std::size_t i = hidden; i < 2 * hidden; ++i) b[i] = 1.0;  // forget gate
    cell.bias = Tensor(Shape{4 * hidden}, std::move(b));
    cell.bias.set_requires_grad(true);
    return cell;
}

void LstmCell::register_params(const std::string& prefix, ParamSet& set) const {
    set.add(prefix + "weight", weight);
    set.add(prefix + "bias", bias);
}

LstmCell LstmCell::widened_front(std::size_t extra) const {
    const std::size_t rows = weight.dim(0), cols = weight.dim(1);
    std::vector<double> w(rows * (cols + extra), 0.0);
    auto src = weight.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) w[r * (cols + extra) + extra + c] = src[r * cols + c];
    LstmCell out;
    out.weight = Tensor(Shape{rows, cols + extra}, std::move(w));
    out.weight.set_requires_grad(true);
    out.bias = bias.detach();
    out.bias.set_requires_grad(true);
    return out;
}

LstmState LstmState::zeros(std::size_t hidden, std::size_t batch) {
    const Shape s = batch == 0 ? Shape{hidden} : Shape{batch, hidden};
    return {Tensor(s, 0.0), Tensor(s, 0.0)};
}

LstmStepResult lstm_step(const LstmCell& cell, const Tensor& x, const LstmState& state) {
    const std::size_t h = cell.hidden();
    if (x.shape().back() != cell.input() || state.h.shape().back() != h || state.c.shape() != state.h.shape() ||
        x.rank() != state.h.rank() || (x.rank() == 2 && x.dim(0) != state.h.dim(0)))
        throw DimensionError("lstm_step: input " + shape_str(x.shape()) + ", state " +
                             shape_str(state.h.shape()) + " incompatible with cell " +
                             shape_str(cell.weight.shape()));
    const Tensor gates = linear(concat({x, state.h}, -1), cell.weight, cell.bias);
    const auto parts = split(gates, -1, {h, h, h, h});
    const Tensor i = sigmoid(parts[0]);
    const Tensor f = sigmoid(parts[1]);
    const Tensor g = tanh(parts[2]);
    const Tensor o = sigmoid(parts[3]);
    const Tensor c = add(mul(f, state.c), mul(i, g));
    const Tensor hn = mul(o, tanh(c));
    return {hn, {hn, c}};
}

LstmRollout lstm_unroll(const LstmCell& cell, const std::vector<Tensor>& xs, const LstmState& state0) {
    if (xs.empty()) throw DimensionError("lstm_unroll: empty sequence");
    LstmRollout r;
    LstmState s = state0;
    for (const Tensor& x : xs) {
        auto step = lstm_step(cell, x, s);
        s = step.state;
        r.outputs.push_back(step.output);
        r.states.push_back(s);
    }
    r.final_state = s;
    return r;
}

}  // namespace anclaf

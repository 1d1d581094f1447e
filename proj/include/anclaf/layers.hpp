#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "anclaf/tensor.hpp"

namespace anclaf {

enum class Activation { none, tanh, relu, sigmoid };

Tensor activate(Activation act, const Tensor& x);

// Ordered registry of named parameter tensors. Names and underlying storage
// must both be unique.
class ParamSet {
public:
    void add(std::string name, Tensor tensor);
    void append(const std::string& prefix, const ParamSet& other);

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count() const;
    const Tensor* find(const std::string& name) const;

    // Tensors are handles, so clearing gradients does not mutate the set.
    void zero_grad() const;

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

// Glorot-uniform weights, zero biases. Deterministic for a given seed and
// call sequence.
class ParamInit {
public:
    explicit ParamInit(std::uint64_t seed) : rng_(seed) {}

    Tensor glorot(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out);
    std::mt19937_64& rng() { return rng_; }

private:
    std::mt19937_64 rng_;
};

double glorot_limit(std::size_t fan_in, std::size_t fan_out);

struct AffineLayer {
    Tensor weight;  // [out x in]
    Tensor bias;    // [out]
    Activation activation = Activation::none;

    static AffineLayer create(ParamInit& init, std::size_t in, std::size_t out, Activation act);

    std::size_t in_dim() const { return weight.dim(1); }
    std::size_t out_dim() const { return weight.dim(0); }
    void register_params(const std::string& prefix, ParamSet& set) const;
};

// activation(W x + b); x is [in] or [batch x in].
Tensor affine_forward(const AffineLayer& layer, const Tensor& x);

// Fully connected stack used for encoders and decoders.
struct DenseStack {
    std::vector<AffineLayer> layers;

    // dims = {in, h1, ..., out}; hidden layers use `hidden`, the last `last`.
    static DenseStack create(ParamInit& init, const std::vector<std::size_t>& dims, Activation hidden,
                             Activation last);

    std::size_t in_dim() const { return layers.front().in_dim(); }
    std::size_t out_dim() const { return layers.back().out_dim(); }
    Tensor forward(const Tensor& x) const;
    void register_params(const std::string& prefix, ParamSet& set) const;
};

using EncoderStack = DenseStack;
using DecoderStack = DenseStack;

// Gate rows are laid out as (input, forget, cell, output) blocks of `hidden`
// rows each; columns are [x ; h].
struct LstmCell {
    Tensor weight;  // [4h x (in + h)]
    Tensor bias;    // [4h]

    static LstmCell create(ParamInit& init, std::size_t input, std::size_t hidden);

    std::size_t hidden() const { return weight.dim(0) / 4; }
    std::size_t input() const { return weight.dim(1) - hidden(); }
    void register_params(const std::string& prefix, ParamSet& set) const;

    // Copy with `extra` zero columns inserted in front of the input columns.
    LstmCell widened_front(std::size_t extra) const;
};

struct LstmState {
    Tensor h;
    Tensor c;

    // batch == 0 gives unbatched [hidden] tensors.
    static LstmState zeros(std::size_t hidden, std::size_t batch = 0);
};

struct LstmStepResult {
    Tensor output;  // equals state.h
    LstmState state;
};

LstmStepResult lstm_step(const LstmCell& cell, const Tensor& x, const LstmState& state);

struct LstmRollout {
    std::vector<Tensor> outputs;
    std::vector<LstmState> states;  // state after each step
    LstmState final_state;
};

LstmRollout lstm_unroll(const LstmCell& cell, const std::vector<Tensor>& xs, const LstmState& state0);

}  // namespace anclaf

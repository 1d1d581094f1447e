#pragma once
// Attention over previous combined LSTM states S = [h ; c].
//
// concat mode scores each stored state against the current one with a single
// shared row vector W_a over [S_t ; S_j]; location mode scores stored states
// alone with W_a over S_j. Scores go through a softmax and the context is the
// weighted sum of stored states divided by the window count k.

#include <deque>
#include <string>

#include "anclaf/layers.hpp"

namespace anclaf {

enum class AttentionMode { concat, location };

std::string to_string(AttentionMode mode);
AttentionMode attention_mode_from_string(const std::string& s);

struct AttentionParams {
    Tensor weight;  // [1 x 4h] (concat) or [1 x 2h] (location)
    AttentionMode mode = AttentionMode::concat;

    static AttentionParams create(ParamInit& init, std::size_t hidden, AttentionMode mode);

    std::size_t state_dim() const {
        return mode == AttentionMode::concat ? weight.dim(1) / 2 : weight.dim(1);
    }
    void register_params(const std::string& prefix, ParamSet& set) const;
};

// [h ; c] along the last axis.
Tensor combined_state(const LstmState& state);

// Holds at most `capacity` states, oldest first.
class StateWindow {
public:
    explicit StateWindow(std::size_t capacity) : capacity_(capacity) {}

    void push(Tensor state);
    void clear() { states_.clear(); }
    bool empty() const { return states_.empty(); }
    std::size_t size() const { return states_.size(); }
    std::size_t capacity() const { return capacity_; }
    const std::deque<Tensor>& states() const { return states_; }

private:
    std::size_t capacity_;
    std::deque<Tensor> states_;
};

// Softmax weights over the window: [k], or [batch x k] for batched states.
Tensor alignment(const AttentionParams& params, const Tensor& current, const StateWindow& window);

// (sum_j a_j * S_j) / k, or the undivided sum when divide_by_k is false.
Tensor context_vector(const Tensor& weights, const StateWindow& window, bool divide_by_k = true);

struct AugmentedInput {
    Tensor input;    // [C_t ; ZQ]
    Tensor weights;  // undefined when the window was empty
};

// Builds the combiner LSTM input for one frame. An empty window yields a
// zero context. The caller pushes the post-step combined state afterwards.
AugmentedInput attend_and_augment(const AttentionParams& params, const Tensor& zq, const LstmState& state,
                                  const StateWindow& window, bool divide_by_k = true);

}  // namespace anclaf

#include "anclaf/attention.hpp"

namespace anclaf {

std::string to_string(AttentionMode mode) { return mode == AttentionMode::concat ? "concat" : "location"; }

AttentionMode attention_mode_from_string(const std::string& s) {
    if (s == "concat") return AttentionMode::concat;
    if (s == "location") return AttentionMode::location;
    throw std::invalid_argument("unknown attention mode: " + s);
}

AttentionParams AttentionParams::create(ParamInit& init, std::size_t hidden, AttentionMode mode) {
    const std::size_t width = mode == AttentionMode::concat ? 4 * hidden : 2 * hidden;
    return {init.glorot(1, width, width, 1), mode};
}

void AttentionParams::register_params(const std::string& prefix, ParamSet& set) const {
    set.add(prefix + "weight", weight);
}

Tensor combined_state(const LstmState& state) { return concat({state.h, state.c}, -1); }

void StateWindow::push(Tensor state) {
    if (!states_.empty() && states_.front().shape() != state.shape())
        throw DimensionError("state window: " + shape_str(state.shape()) + " does not match stored " +
                             shape_str(states_.front().shape()));
    if (capacity_ == 0) return;
    if (states_.size() == capacity_) states_.pop_front();
    states_.push_back(std::move(state));
}

Tensor alignment(const AttentionParams& params, const Tensor& current, const StateWindow& window) {
    if (window.empty()) throw DimensionError("alignment: empty state window");
    const std::size_t sd = params.state_dim();
    const Tensor zero_bias(Shape{1}, 0.0);
    Tensor current_score;
    Tensor state_w = params.weight;
    if (params.mode == AttentionMode::concat) {
        if (current.shape().back() != sd)
            throw DimensionError("alignment: current state " + shape_str(current.shape()) +
                                 " vs attention width " + std::to_string(sd));
        current_score = linear(current, slice(params.weight, 1, 0, sd), zero_bias);
        state_w = slice(params.weight, 1, sd, 2 * sd);
    }
    std::vector<Tensor> scores;
    scores.reserve(window.size());
    for (const Tensor& s : window.states()) {
        if (s.shape().back() != sd)
            throw DimensionError("alignment: stored state " + shape_str(s.shape()) +
                                 " vs attention width " + std::to_string(sd));
        Tensor score = linear(s, state_w, zero_bias);
        if (current_score.defined()) score = add(score, current_score);
        scores.push_back(std::move(score));
    }
    return softmax(concat(scores, -1));
}

Tensor context_vector(const Tensor& weights, const StateWindow& window, bool divide_by_k) {
    const std::size_t k = window.size();
    if (k == 0 || weights.shape().back() != k)
        throw DimensionError("context_vector: " + std::to_string(weights.shape().back()) +
                             " weights for a window of " + std::to_string(k));
    const bool batched = weights.rank() == 2;
    Tensor total;
    std::size_t j = 0;
    for (const Tensor& s : window.states()) {
        const Tensor a = slice(weights, -1, j, j + 1);
        const Tensor term = batched ? scale_rows(s, a) : mul(s, a);
        total = total.defined() ? add(total, term) : term;
        ++j;
    }
    return divide_by_k ? scale(total, 1.0 / static_cast<double>(k)) : total;
}

AugmentedInput attend_and_augment(const AttentionParams& params, const Tensor& zq, const LstmState& state,
                                  const StateWindow& window, bool divide_by_k) {
    const Tensor current = combined_state(state);
    if (window.empty()) {
        Shape ctx_shape = current.shape();
        return {concat({Tensor(ctx_shape, 0.0), zq}, -1), {}};
    }
    Tensor weights = alignment(params, current, window);
    Tensor context = context_vector(weights, window, divide_by_k);
    return {concat({context, zq}, -1), weights};
}

}  // namespace anclaf

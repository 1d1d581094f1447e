#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace anclaf {

// Training hyperparameters. JSON config keys use these field names verbatim.
struct TrainConfig {
    std::uint64_t seed = 1;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 16;  // windows per batch in the sequence stages
    std::size_t epochs_per_stage = 20;
    std::vector<std::size_t> curriculum = {2, 4, 8, 16, 32};
    double lambda_rec = 10.0;
    double lambda_q = 1.0;
    bool freeze_gd_stage2 = true;
    std::string attention_mode = "concat";
    bool eq7_divide_by_n = true;

    std::size_t stage1_epochs = 20;
    std::size_t stage1_batch_size = 32;  // frames per batch in stage 1
    std::size_t folds = 5;
    bool minimax_generator = false;
    bool class_weight_literal = false;
    bool hard_quadrant = false;

    // Throws std::invalid_argument describing the first violated invariant.
    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

}  // namespace anclaf

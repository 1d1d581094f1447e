#pragma once
// Affect regression metrics (population moments throughout), the composite
// training objective, adversarial and quadrant losses, and per-fold report
// arithmetic.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "anclaf/tensor.hpp"

namespace anclaf {

struct AffectLabel {
    double valence = 0.0;
    double arousal = 0.0;

    double operator[](std::size_t dim) const { return dim == 0 ? valence : arousal; }
    // Throws std::invalid_argument unless both values are finite and in [-1, 1].
    void validate() const;
};

using Series = std::span<const double>;

double rmse(Series pred, Series truth);
// Throws DegenerateInputError when either series has zero variance.
double pearson_cor(Series pred, Series truth);
// Throws DegenerateInputError when both series are constant with equal means.
double ccc(Series pred, Series truth);
// Throws DegenerateInputError when both variances are zero.
double icc(Series pred, Series truth);

// Ten equal-width bins per dimension over [-1, 1].
struct ClassWeights {
    static constexpr std::size_t kBins = 10;
    std::array<std::array<std::size_t, kBins>, 2> counts{};
    std::array<std::array<double, kBins>, 2> weights{};

    static std::size_t bin_of(double value);
};

// Normalized inverse frequency over occupied bins (empty bins weigh 0). With
// `literal_frequency` the weights are f_i / F instead.
ClassWeights class_weights(std::span<const AffectLabel> labels, bool literal_frequency = false);

// preds is [N x 2] (valence, arousal). Per dimension: class-weighted RMSE over
// the bins present in the batch, plus (1 - COR) + (1 - CCC) + (1 - ICC) on the
// whole batch; the two dimensions are averaged. A correlation term whose
// variances are degenerate contributes 0.
Tensor affect_loss(const Tensor& preds, std::span<const AffectLabel> truths, const ClassWeights& weights);

struct AdversarialLosses {
    Tensor discriminator;
    Tensor generator;
};

inline constexpr double kProbClamp = 1e-7;

// Probabilities in [0, 1], clamped kProbClamp away from the ends. The
// generator term is -mean(log d_fake) unless `minimax`, which uses
// mean(log(1 - d_fake)).
AdversarialLosses adversarial_losses(const Tensor& d_real, const Tensor& d_fake, bool minimax = false);

// Mean of -log softmax(logits)[q] over rows; logits [4] or [batch x 4].
Tensor quadrant_cross_entropy(const Tensor& logits, std::span<const int> quadrants);
Tensor quadrant_cross_entropy(const Tensor& logits, int quadrant);

struct DimMetrics {
    double rmse = 0.0;
    double cor = 0.0;
    double ccc = 0.0;
    double icc = 0.0;
};

struct MetricReport {
    std::string model;
    int fold = -1;  // -1 for cross-fold aggregates
    std::size_t sequence_length = 1;
    DimMetrics valence;
    DimMetrics arousal;
    DimMetrics average;
};

DimMetrics mean_of(const DimMetrics& a, const DimMetrics& b);

// Degenerate correlation statistics are reported as 0.
MetricReport compute_report(std::span<const AffectLabel> preds, std::span<const AffectLabel> truths,
                            std::string model, int fold, std::size_t sequence_length);

// Cell-wise mean across folds; AVG recomputed as (VAL + ARO) / 2.
MetricReport aggregate_report(std::span<const MetricReport> per_fold);

}  // namespace anclaf

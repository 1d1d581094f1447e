#include "anclaf/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace anclaf {

namespace {

constexpr double kVarEps = 1e-12;

struct Moments {
    double mean_p = 0, mean_t = 0, var_p = 0, var_t = 0, cov = 0;
};

void check_pair(Series pred, Series truth, const char* what) {
    if (pred.size() != truth.size())
        throw DimensionError(std::string(what) + ": length mismatch " + std::to_string(pred.size()) +
                             " vs " + std::to_string(truth.size()));
    if (pred.empty()) throw DegenerateInputError(std::string(what) + ": empty series");
}

Moments moments(Series p, Series t) {
    Moments m;
    const double n = static_cast<double>(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        m.mean_p += p[i];
        m.mean_t += t[i];
    }
    m.mean_p /= n;
    m.mean_t /= n;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double dp = p[i] - m.mean_p, dt = t[i] - m.mean_t;
        m.var_p += dp * dp;
        m.var_t += dt * dt;
        m.cov += dp * dt;
    }
    m.var_p /= n;
    m.var_t /= n;
    m.cov /= n;
    return m;
}

}  // namespace

void AffectLabel::validate() const {
    if (!std::isfinite(valence) || !std::isfinite(arousal) || std::abs(valence) > 1.0 ||
        std::abs(arousal) > 1.0)
        throw std::invalid_argument("affect label out of range: (" + std::to_string(valence) + ", " +
                                    std::to_string(arousal) + ")");
}

double rmse(Series pred, Series truth) {
    check_pair(pred, truth, "rmse");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    return std::sqrt(s / static_cast<double>(pred.size()));
}

double pearson_cor(Series pred, Series truth) {
    check_pair(pred, truth, "pearson_cor");
    const Moments m = moments(pred, truth);
    if (m.var_p <= 0.0 || m.var_t <= 0.0) throw DegenerateInputError("pearson_cor: zero-variance series");
    return m.cov / std::sqrt(m.var_p * m.var_t);
}

double ccc(Series pred, Series truth) {
    check_pair(pred, truth, "ccc");
    const Moments m = moments(pred, truth);
    const double dm = m.mean_p - m.mean_t;
    const double denom = m.var_p + m.var_t + dm * dm;
    if (denom <= 0.0) throw DegenerateInputError("ccc: both series constant with equal means");
    return 2.0 * m.cov / denom;
}

double icc(Series pred, Series truth) {
    check_pair(pred, truth, "icc");
    const Moments m = moments(pred, truth);
    const double denom = m.var_p + m.var_t;
    if (denom <= 0.0) throw DegenerateInputError("icc: both series constant");
    return 2.0 * m.cov / denom;
}

// ---- class weights ---------------------------------------------------------

std::size_t ClassWeights::bin_of(double value) {
    const double pos = (std::clamp(value, -1.0, 1.0) + 1.0) / 2.0 * static_cast<double>(kBins);
    return std::min(kBins - 1, static_cast<std::size_t>(pos));
}

ClassWeights class_weights(std::span<const AffectLabel> labels, bool literal_frequency) {
    if (labels.empty()) throw DegenerateInputError("class_weights: empty label set");
    ClassWeights cw;
    for (const AffectLabel& l : labels)
        for (std::size_t d = 0; d < 2; ++d) ++cw.counts[d][ClassWeights::bin_of(l[d])];
    for (std::size_t d = 0; d < 2; ++d) {
        double total = 0.0;
        for (std::size_t b = 0; b < ClassWeights::kBins; ++b) {
            const std::size_t f = cw.counts[d][b];
            const double w = f == 0 ? 0.0 : (literal_frequency ? static_cast<double>(f) : 1.0 / static_cast<double>(f));
            cw.weights[d][b] = w;
            total += w;
        }
        for (double& w : cw.weights[d]) w /= total;
    }
    return cw;
}

// ---- composite affect loss -------------------------------------------------

Tensor affect_loss(const Tensor& preds, std::span<const AffectLabel> truths, const ClassWeights& weights) {
    if (truths.empty()) throw DegenerateInputError("affect_loss: empty batch");
    const std::size_t n = truths.size();
    if (preds.rank() != 2 || preds.dim(0) != n || preds.dim(1) != 2)
        throw DimensionError("affect_loss: predictions " + shape_str(preds.shape()) + " for " +
                             std::to_string(n) + " labels");
    Tensor total;
    for (std::size_t d = 0; d < 2; ++d) {
        std::vector<std::size_t> col(n);
        std::vector<double> t(n);
        for (std::size_t i = 0; i < n; ++i) {
            col[i] = i * 2 + d;
            t[i] = truths[i][d];
        }
        const Tensor p = gather(preds, col);

        // class-weighted RMSE over the bins present in this batch
        std::array<std::vector<std::size_t>, ClassWeights::kBins> members;
        for (std::size_t i = 0; i < n; ++i) members[ClassWeights::bin_of(t[i])].push_back(i);
        Tensor weighted;
        double weight_sum = 0.0;
        for (std::size_t b = 0; b < ClassWeights::kBins; ++b) {
            if (members[b].empty() || weights.weights[d][b] <= 0.0) continue;
            std::vector<double> tb;
            for (std::size_t i : members[b]) tb.push_back(t[i]);
            const Tensor diff = sub(gather(p, members[b]), Tensor::vector(std::move(tb)));
            const Tensor term = scale(sqrt(mean(square(diff))), weights.weights[d][b]);
            weighted = weighted.defined() ? add(weighted, term) : term;
            weight_sum += weights.weights[d][b];
        }
        Tensor dim_loss = weighted.defined() ? scale(weighted, 1.0 / weight_sum)
                                             : sqrt(mean(square(sub(p, Tensor::vector(t)))));

        // batch-level correlation terms
        double mt = 0.0;
        for (double v : t) mt += v;
        mt /= static_cast<double>(n);
        double vt = 0.0;
        std::vector<double> tc(n);
        for (std::size_t i = 0; i < n; ++i) {
            tc[i] = t[i] - mt;
            vt += tc[i] * tc[i];
        }
        vt /= static_cast<double>(n);
        if (n >= 2 && vt > kVarEps) {
            const Tensor mp = mean(p);
            const Tensor vp = var(p);
            const Tensor cov = mean(mul(sub(p, mp), Tensor::vector(tc)));
            const double vp_value = vp.item();
            Tensor corr_sum;
            if (vp_value > kVarEps) {
                const Tensor cor = div(cov, sqrt(scale(vp, vt)));
                corr_sum = add_scalar(scale(cor, -1.0), 1.0);
            }
            const Tensor dm = add_scalar(mp, -mt);
            const Tensor ccc_t = div(scale(cov, 2.0), add(add_scalar(vp, vt), square(dm)));
            const Tensor icc_t = div(scale(cov, 2.0), add_scalar(vp, vt));
            Tensor rest = add_scalar(scale(add(ccc_t, icc_t), -1.0), 2.0);
            corr_sum = corr_sum.defined() ? add(corr_sum, rest) : rest;
            dim_loss = add(dim_loss, corr_sum);
        }
        total = total.defined() ? add(total, dim_loss) : dim_loss;
    }
    return scale(total, 0.5);
}

// ---- adversarial / quadrant ------------------------------------------------

namespace {

void check_probs(const Tensor& t, const char* what) {
    for (double v : t.data())
        if (!(v >= 0.0 && v <= 1.0))
            throw std::invalid_argument(std::string(what) + ": probability outside [0, 1]: " + std::to_string(v));
}

Tensor one_minus(const Tensor& x) { return add_scalar(scale(x, -1.0), 1.0); }

}  // namespace

AdversarialLosses adversarial_losses(const Tensor& d_real, const Tensor& d_fake, bool minimax) {
    check_probs(d_real, "adversarial_losses(d_real)");
    check_probs(d_fake, "adversarial_losses(d_fake)");
    const Tensor r = clamp(d_real, kProbClamp, 1.0 - kProbClamp);
    const Tensor f = clamp(d_fake, kProbClamp, 1.0 - kProbClamp);
    const Tensor loss_d = scale(add(mean(log(r)), mean(log(one_minus(f)))), -1.0);
    const Tensor loss_g = minimax ? mean(log(one_minus(f))) : scale(mean(log(f)), -1.0);
    return {loss_d, loss_g};
}

Tensor quadrant_cross_entropy(const Tensor& logits, std::span<const int> quadrants) {
    if (logits.shape().back() != 4)
        throw DimensionError("quadrant_cross_entropy: expected 4 logits, got " + shape_str(logits.shape()));
    const std::size_t rows = logits.size() / 4;
    if (quadrants.size() != rows)
        throw DimensionError("quadrant_cross_entropy: " + std::to_string(quadrants.size()) + " labels for " +
                             std::to_string(rows) + " rows");
    std::vector<std::size_t> idx(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        if (quadrants[r] < 0 || quadrants[r] > 3)
            throw std::out_of_range("quadrant index out of range: " + std::to_string(quadrants[r]));
        idx[r] = r * 4 + static_cast<std::size_t>(quadrants[r]);
    }
    return scale(mean(gather(log_softmax(logits), idx)), -1.0);
}

Tensor quadrant_cross_entropy(const Tensor& logits, int quadrant) {
    const int q[1] = {quadrant};
    return quadrant_cross_entropy(logits, std::span<const int>(q, 1));
}

// ---- reports ---------------------------------------------------------------

DimMetrics mean_of(const DimMetrics& a, const DimMetrics& b) {
    return {(a.rmse + b.rmse) / 2.0, (a.cor + b.cor) / 2.0, (a.ccc + b.ccc) / 2.0, (a.icc + b.icc) / 2.0};
}

namespace {

template <class F>
double or_zero(F f) {
    try {
        return f();
    } catch (const DegenerateInputError&) {
        return 0.0;
    }
}

DimMetrics dim_metrics(const std::vector<double>& p, const std::vector<double>& t) {
    DimMetrics m;
    m.rmse = rmse(p, t);
    m.cor = or_zero([&] { return pearson_cor(p, t); });
    m.ccc = or_zero([&] { return ccc(p, t); });
    m.icc = or_zero([&] { return icc(p, t); });
    return m;
}

}  // namespace

MetricReport compute_report(std::span<const AffectLabel> preds, std::span<const AffectLabel> truths,
                            std::string model, int fold, std::size_t sequence_length) {
    if (preds.size() != truths.size())
        throw DimensionError("compute_report: " + std::to_string(preds.size()) + " predictions for " +
                             std::to_string(truths.size()) + " labels");
    std::vector<double> pv, pa, tv, ta;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        pv.push_back(preds[i].valence);
        pa.push_back(preds[i].arousal);
        tv.push_back(truths[i].valence);
        ta.push_back(truths[i].arousal);
    }
    MetricReport r;
    r.model = std::move(model);
    r.fold = fold;
    r.sequence_length = sequence_length;
    r.valence = dim_metrics(pv, tv);
    r.arousal = dim_metrics(pa, ta);
    r.average = mean_of(r.valence, r.arousal);
    return r;
}

MetricReport aggregate_report(std::span<const MetricReport> per_fold) {
    if (per_fold.empty()) throw DegenerateInputError("aggregate_report: no folds");
    if (per_fold.size() == 1) return per_fold[0];
    MetricReport out;
    out.model = per_fold[0].model;
    out.sequence_length = per_fold[0].sequence_length;
    const double k = static_cast<double>(per_fold.size());
    auto acc = [](DimMetrics& dst, const DimMetrics& src) {
        dst.rmse += src.rmse;
        dst.cor += src.cor;
        dst.ccc += src.ccc;
        dst.icc += src.icc;
    };
    auto div_by = [k](DimMetrics& m) {
        m.rmse /= k;
        m.cor /= k;
        m.ccc /= k;
        m.icc /= k;
    };
    for (const MetricReport& r : per_fold) {
        if (r.model != out.model)
            throw std::invalid_argument("aggregate_report: mixed models " + out.model + " and " + r.model);
        acc(out.valence, r.valence);
        acc(out.arousal, r.arousal);
    }
    div_by(out.valence);
    div_by(out.arousal);
    out.average = mean_of(out.valence, out.arousal);
    return out;
}

}  // namespace anclaf

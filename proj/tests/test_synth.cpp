#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "anclaf/metrics.hpp"
#include "anclaf/synth.hpp"

using namespace anclaf;

namespace {

const Dataset& reference() {
    static const Dataset ds = gen_dataset(40, 300, 7);
    return ds;
}

double region_max(const Image& img, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
    double m = 0;
    for (std::size_t r = r0; r <= r1; ++r)
        for (std::size_t c = c0; c <= c1; ++c) m = std::max(m, img[r * kImageSide + c]);
    return m;
}

// Ridge regression from pixels (plus a bias) to one target via normal equations.
std::vector<double> ridge(const std::vector<const Image*>& x, const std::vector<double>& y, double lambda) {
    const std::size_t d = kImagePixels + 1;
    std::vector<double> a(d * d, 0.0), b(d, 0.0);
    std::vector<double> row(d);
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::copy(x[i]->begin(), x[i]->end(), row.begin());
        row[kImagePixels] = 1.0;
        for (std::size_t p = 0; p < d; ++p) {
            b[p] += row[p] * y[i];
            for (std::size_t q = 0; q <= p; ++q) a[p * d + q] += row[p] * row[q];
        }
    }
    for (std::size_t p = 0; p < d; ++p) {
        a[p * d + p] += lambda;
        for (std::size_t q = 0; q < p; ++q) a[q * d + p] = a[p * d + q];
    }
    // Cholesky: a = L L^T, stored in the lower triangle
    for (std::size_t j = 0; j < d; ++j) {
        double s = a[j * d + j];
        for (std::size_t k = 0; k < j; ++k) s -= a[j * d + k] * a[j * d + k];
        a[j * d + j] = std::sqrt(s);
        for (std::size_t i = j + 1; i < d; ++i) {
            double t = a[i * d + j];
            for (std::size_t k = 0; k < j; ++k) t -= a[i * d + k] * a[j * d + k];
            a[i * d + j] = t / a[j * d + j];
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t k = 0; k < i; ++k) b[i] -= a[i * d + k] * b[k];
        b[i] /= a[i * d + i];
    }
    for (std::size_t i = d; i-- > 0;) {
        for (std::size_t k = i + 1; k < d; ++k) b[i] -= a[k * d + i] * b[k];
        b[i] /= a[i * d + i];
    }
    return b;
}

double predict(const std::vector<double>& w, const Image& img) {
    double s = w[kImagePixels];
    for (std::size_t p = 0; p < kImagePixels; ++p) s += w[p] * img[p];
    return s;
}

}  // namespace

TEST(Quadrant, Examples) {
    EXPECT_EQ(quadrant_of({0.5, 0.5}), 0);
    EXPECT_EQ(quadrant_of({-0.5, 0.5}), 1);
    EXPECT_EQ(quadrant_of({-0.5, -0.5}), 2);
    EXPECT_EQ(quadrant_of({0.5, -0.5}), 3);
    EXPECT_EQ(quadrant_of({0.0, 0.0}), 0);
    EXPECT_THROW(quadrant_of({std::nan(""), 0.0}), std::invalid_argument);
}

TEST(Quadrant, ScaleInvariant) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1, 1), s(0.01, 1);
    for (int i = 0; i < 1000; ++i) {
        const AffectLabel l{u(rng), u(rng)};
        const double k = s(rng);
        EXPECT_EQ(quadrant_of(l), quadrant_of({l.valence * k, l.arousal * k}));
    }
}

TEST(Trajectory, Properties) {
    const AffectTrajectory a = gen_trajectory(5, 500, 1.0), b = gen_trajectory(5, 500, 1.0);
    ASSERT_EQ(a.length(), 500u);
    for (std::size_t t = 0; t < a.length(); ++t) {
        EXPECT_EQ(a.frames[t].valence, b.frames[t].valence);
        EXPECT_GE(a.frames[t].valence, -1.0);
        EXPECT_LE(a.frames[t].arousal, 1.0);
        if (t > 0) EXPECT_LE(std::abs(a.frames[t].valence - a.frames[t - 1].valence), 0.25 + 0.1 + 1e-12);
    }
    const AffectTrajectory still = gen_trajectory(5, 100, 1e-12);
    for (const auto& f : still.frames) {
        EXPECT_NEAR(f.valence, still.frames[0].valence, 1e-9);
        EXPECT_NEAR(f.arousal, still.frames[0].arousal, 1e-9);
    }
    EXPECT_THROW(gen_trajectory(5, 0, 1.0), std::invalid_argument);
    EXPECT_THROW(gen_trajectory(5, 10, 0.0), std::invalid_argument);
    EXPECT_THROW(gen_trajectory(5, 10, 1.5), std::invalid_argument);
}

TEST(Render, DeterministicAndInRange) {
    const SubjectSpec spec = SubjectSpec::sample(3, 99);
    const Image a = render_face(spec, {0.3, -0.2}), b = render_face(spec, {0.3, -0.2});
    ASSERT_EQ(a.size(), kImagePixels);
    EXPECT_EQ(a, b);
    for (double v : a) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Render, ValenceChangesOnlyTheMouthRegion) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const SubjectSpec spec = SubjectSpec::sample(0, seed);
        const Image smile = render_face(spec, {1.0, 0.2}), frown = render_face(spec, {-1.0, 0.2});
        std::size_t changed = 0;
        for (std::size_t r = 0; r < kImageSide; ++r)
            for (std::size_t c = 0; c < kImageSide; ++c) {
                if (smile[r * kImageSide + c] == frown[r * kImageSide + c]) continue;
                ++changed;
                // mouth box: rows around y = 11.5, columns within half the widest mouth
                EXPECT_TRUE(r >= 10 && r <= 12 && c >= 4 && c <= 11) << "pixel " << r << "," << c;
            }
        EXPECT_GT(changed, 0u);
    }
}

TEST(Render, ClosedEyesStayBelowOpenThreshold) {
    constexpr double kOpen = 0.8;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const SubjectSpec spec = SubjectSpec::sample(0, seed);
        for (double v : {-1.0, 0.0, 1.0}) {
            EXPECT_LT(region_max(render_face(spec, {v, -1.0}), 3, 8, 0, 15), kOpen);
            EXPECT_GT(region_max(render_face(spec, {v, 1.0}), 3, 8, 0, 15), kOpen);
        }
    }
}

TEST(Render, InjectiveOnLabelGrid) {
    const SubjectSpec spec = SubjectSpec::sample(1, 1234);
    std::set<Image> seen;
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j) seen.insert(render_face(spec, {-0.9 + 0.2 * i, -0.9 + 0.2 * j}));
    EXPECT_EQ(seen.size(), 100u);
}

TEST(Distort, Properties) {
    const Image face = render_face(SubjectSpec::sample(0, 5), {0.1, 0.4});
    std::mt19937_64 rng(7);
    for (int i = 0; i < 200; ++i)
        for (double v : distort(face, rng)) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }

    const Image ones(kImagePixels, 1.0);
    const Distortion occ[] = {Distortion::occlusion_block};
    for (int i = 0; i < 50; ++i) {
        const Image o = distort(ones, rng, occ);
        EXPECT_EQ(std::count(o.begin(), o.end(), 0.0), 16);
    }

    const Image flat(kImagePixels, 0.37);
    const Distortion blur[] = {Distortion::blur};
    for (double v : distort(flat, rng, blur)) EXPECT_NEAR(v, 0.37, 1e-15);

    std::mt19937_64 r1(3), r2(3);
    EXPECT_EQ(distort(face, r1), distort(face, r2));
    EXPECT_THROW(distort(face, rng, std::span<const Distortion>{}), std::invalid_argument);
}

TEST(GenDataset, CountsAndDeterminism) {
    const Dataset a = gen_dataset(6, 20, 11), b = gen_dataset(6, 20, 11), c = gen_dataset(6, 20, 12);
    ASSERT_EQ(a.records.size(), 120u);
    EXPECT_EQ(a.manifest.subjects.size(), 6u);
    bool differs = false;
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        EXPECT_EQ(a.records[i].image, b.records[i].image);
        EXPECT_EQ(a.records[i].label.valence, b.records[i].label.valence);
        EXPECT_EQ(a.records[i].quadrant, quadrant_of(a.records[i].label));
        for (double v : a.records[i].image) EXPECT_EQ(v, quantize_pixel(v));
        differs |= a.records[i].image != c.records[i].image;
    }
    EXPECT_TRUE(differs);
    EXPECT_EQ(a.subject_frames(4).size(), 20u);
    EXPECT_EQ(a.subject_frames(4)[0].subject_id, 4u);
    EXPECT_THROW(a.subject_frames(99), std::out_of_range);
    EXPECT_THROW(gen_dataset(4, 20, 1), std::invalid_argument);
    EXPECT_THROW(gen_dataset(5, 0, 1), std::invalid_argument);
}

TEST(GenDataset, ReferenceHistogramIsNonDegenerate) {
    const Dataset& ds = reference();
    std::size_t hv[10] = {}, ha[10] = {};
    for (const FrameRecord& r : ds.records) {
        ++hv[std::min<std::size_t>(9, static_cast<std::size_t>((r.label.valence + 1) / 0.2))];
        ++ha[std::min<std::size_t>(9, static_cast<std::size_t>((r.label.arousal + 1) / 0.2))];
    }
    for (std::size_t b = 1; b < 9; ++b) {
        EXPECT_GE(hv[b], ds.records.size() / 100) << "valence bin " << b;
        EXPECT_GE(ha[b], ds.records.size() / 100) << "arousal bin " << b;
    }
}

TEST(SplitFolds, Examples) {
    Manifest m = gen_dataset(10, 1, 1).manifest;
    auto folds = split_folds(m);
    ASSERT_EQ(folds.size(), 5u);
    for (const auto& f : folds) EXPECT_EQ(f.size(), 2u);

    std::reverse(m.subjects.begin(), m.subjects.end());
    EXPECT_EQ(split_folds(m), folds);

    std::set<std::uint32_t> all;
    std::size_t total = 0;
    for (const auto& f : folds) {
        all.insert(f.begin(), f.end());
        total += f.size();
    }
    EXPECT_EQ(all.size(), 10u);
    EXPECT_EQ(total, 10u);

    const auto seven = split_folds(gen_dataset(7, 1, 1).manifest);
    std::vector<std::size_t> sizes;
    for (const auto& f : seven) sizes.push_back(f.size());
    EXPECT_EQ(sizes, (std::vector<std::size_t>{2, 2, 1, 1, 1}));
    EXPECT_THROW(split_folds(gen_dataset(5, 1, 1).manifest, 6), std::invalid_argument);
}

TEST(GenDataset, LinearRegressorLearnsButShuffledLabelsDoNot) {
    const Dataset& ds = reference();
    const auto folds = split_folds(ds.manifest);
    const std::set<std::uint32_t> held(folds[0].begin(), folds[0].end());
    std::vector<const Image*> xtr;
    std::vector<double> vtr, atr;
    std::vector<const FrameRecord*> test;
    for (const FrameRecord& r : ds.records) {
        if (held.count(r.subject_id)) {
            test.push_back(&r);
        } else {
            xtr.push_back(&r.image);
            vtr.push_back(r.label.valence);
            atr.push_back(r.label.arousal);
        }
    }
    auto score = [&](const std::vector<double>& yv, const std::vector<double>& ya) {
        const auto wv = ridge(xtr, yv, 1e-2), wa = ridge(xtr, ya, 1e-2);
        std::vector<double> pv, pa, tv, ta;
        for (const FrameRecord* r : test) {
            pv.push_back(predict(wv, r->image));
            pa.push_back(predict(wa, r->image));
            tv.push_back(r->label.valence);
            ta.push_back(r->label.arousal);
        }
        return std::pair{ccc(tv, pv), ccc(ta, pa)};
    };

    const auto [cv, ca] = score(vtr, atr);
    EXPECT_GE(cv, 0.4);
    EXPECT_GE(ca, 0.4);

    std::vector<std::size_t> perm(vtr.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(42));
    std::vector<double> sv(perm.size()), sa(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        sv[i] = vtr[perm[i]];
        sa[i] = atr[perm[i]];
    }
    const auto [sv_ccc, sa_ccc] = score(sv, sa);
    EXPECT_LE(sv_ccc, 0.1);
    EXPECT_LE(sa_ccc, 0.1);
}

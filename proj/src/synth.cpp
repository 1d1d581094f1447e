#include "anclaf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace anclaf {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr double kBackground = 0.0;
constexpr double kSkin = 0.55;
constexpr double kEyeWhite = 1.0;
constexpr double kLip = 0.05;
constexpr double kCenterX = 7.5;
constexpr double kEyeY = 5.5;
constexpr double kMouthY = 11.5;
constexpr double kMouthBend = 1.6;
constexpr double kLipHalfThickness = 0.45;
constexpr int kSuper = 4;  // supersamples per axis

}  // namespace

int quadrant_of(const AffectLabel& label) {
    if (!std::isfinite(label.valence) || !std::isfinite(label.arousal))
        throw std::invalid_argument("quadrant_of: non-finite label");
    const bool v = label.valence >= 0.0;
    const bool a = label.arousal >= 0.0;
    if (v && a) return 0;
    if (!v && a) return 1;
    if (!v && !a) return 2;
    return 3;
}

SubjectSpec SubjectSpec::sample(std::uint32_t id, std::uint64_t seed) {
    SubjectSpec s;
    s.subject_id = id;
    s.rng_seed = seed;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    s.face_scale = 0.85 + 0.20 * u(rng);
    s.eye_spacing = 2.4 + 0.8 * u(rng);
    s.mouth_width = 4.0 + 2.0 * u(rng);
    return s;
}

AffectTrajectory gen_trajectory(std::uint64_t seed, std::size_t length, double smoothness) {
    if (length == 0) throw std::invalid_argument("gen_trajectory: length must be >= 1");
    if (!(smoothness > 0.0 && smoothness <= 1.0))
        throw std::invalid_argument("gen_trajectory: smoothness must lie in (0, 1]");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> start(-0.5, 0.5);
    std::uniform_real_distribution<double> eta(-0.25, 0.25);
    AffectTrajectory traj;
    traj.frames.reserve(length);
    double x[2] = {start(rng), start(rng)};
    traj.frames.push_back({x[0], x[1]});
    for (std::size_t t = 1; t < length; ++t) {
        for (double& xi : x) xi = std::clamp(xi + smoothness * (eta(rng) - 0.1 * xi), -1.0, 1.0);
        traj.frames.push_back({x[0], x[1]});
    }
    return traj;
}

Image render_face(const SubjectSpec& spec, const AffectLabel& label) {
    label.validate();
    const double rx = 6.0 * spec.face_scale;
    const double ry = 7.2 * spec.face_scale;
    const double openness = 0.5 * (1.0 + label.arousal);
    const double eye_rx = 1.3;
    const double eye_ry = 0.15 + 1.35 * openness;
    const double half_mouth = spec.mouth_width / 2.0;
    const double bend = kMouthBend * label.valence;

    auto shade = [&](double x, double y) {
        double v = kBackground;
        const double hx = (x - kCenterX) / rx, hy = (y - 8.0) / ry;
        if (hx * hx + hy * hy <= 1.0) v = kSkin;
        for (double side : {-1.0, 1.0}) {
            const double ex = (x - (kCenterX + side * spec.eye_spacing)) / eye_rx;
            const double ey = (y - kEyeY) / eye_ry;
            if (ex * ex + ey * ey <= 1.0) v = kEyeWhite;
        }
        const double dx = x - kCenterX;
        if (std::abs(dx) <= half_mouth) {
            const double u = dx / half_mouth;
            // positive valence lowers the middle and lifts the corners
            const double arc_y = kMouthY + bend * ((1.0 - u * u) - 0.5);
            if (std::abs(y - arc_y) <= kLipHalfThickness) v = kLip;
        }
        return v;
    };

    Image img(kImagePixels);
    constexpr double step = 1.0 / kSuper;
    for (std::size_t r = 0; r < kImageSide; ++r) {
        for (std::size_t c = 0; c < kImageSide; ++c) {
            double acc = 0.0;
            for (int sy = 0; sy < kSuper; ++sy)
                for (int sx = 0; sx < kSuper; ++sx)
                    acc += shade(static_cast<double>(c) + (sx + 0.5) * step,
                                 static_cast<double>(r) + (sy + 0.5) * step);
            img[r * kImageSide + c] = acc / (kSuper * kSuper);
        }
    }
    return img;
}

Image distort(const Image& image, std::mt19937_64& rng, std::span<const Distortion> kinds) {
    if (kinds.empty()) throw std::invalid_argument("distort: empty distortion set");
    if (image.size() != kImagePixels) throw DimensionError("distort: expected a 16x16 image");
    std::uniform_int_distribution<std::size_t> pick(0, kinds.size() - 1);
    Image out = image;
    switch (kinds[pick(rng)]) {
        case Distortion::gaussian_noise: {
            std::normal_distribution<double> noise(0.0, 0.1);
            for (double& v : out) v = std::clamp(v + noise(rng), 0.0, 1.0);
            break;
        }
        case Distortion::occlusion_block: {
            std::uniform_int_distribution<std::size_t> pos(0, kImageSide - 4);
            const std::size_t r0 = pos(rng), c0 = pos(rng);
            for (std::size_t r = r0; r < r0 + 4; ++r)
                for (std::size_t c = c0; c < c0 + 4; ++c) out[r * kImageSide + c] = 0.0;
            break;
        }
        case Distortion::blur: {
            const long side = static_cast<long>(kImageSide);
            for (long r = 0; r < side; ++r) {
                for (long c = 0; c < side; ++c) {
                    double acc = 0.0;
                    int cnt = 0;
                    for (long dr = -1; dr <= 1; ++dr)
                        for (long dc = -1; dc <= 1; ++dc) {
                            const long rr = r + dr, cc = c + dc;
                            if (rr < 0 || cc < 0 || rr >= side || cc >= side) continue;
                            acc += image[static_cast<std::size_t>(rr * side + cc)];
                            ++cnt;
                        }
                    out[static_cast<std::size_t>(r * side + c)] = acc / cnt;
                }
            }
            break;
        }
    }
    return out;
}

Image distort(const Image& image, std::mt19937_64& rng) {
    static constexpr Distortion all[] = {Distortion::gaussian_noise, Distortion::occlusion_block,
                                         Distortion::blur};
    return distort(image, rng, all);
}

double quantize_pixel(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

std::span<const FrameRecord> Dataset::subject_frames(std::uint32_t subject_id) const {
    auto lo = std::lower_bound(records.begin(), records.end(), subject_id,
                               [](const FrameRecord& r, std::uint32_t id) { return r.subject_id < id; });
    auto hi = std::upper_bound(lo, records.end(), subject_id,
                               [](std::uint32_t id, const FrameRecord& r) { return id < r.subject_id; });
    if (lo == hi) throw std::out_of_range("unknown subject " + std::to_string(subject_id));
    return {&*lo, static_cast<std::size_t>(hi - lo)};
}

std::vector<std::uint32_t> Dataset::subject_ids() const {
    std::vector<std::uint32_t> ids;
    for (const SubjectInfo& s : manifest.subjects) ids.push_back(s.spec.subject_id);
    return ids;
}

Dataset gen_dataset(std::size_t n_subjects, std::size_t frames_per_subject, std::uint64_t seed,
                    double smoothness) {
    if (n_subjects < 5) throw std::invalid_argument("gen_dataset: at least 5 subjects are required");
    if (frames_per_subject == 0) throw std::invalid_argument("gen_dataset: frames_per_subject must be >= 1");
    Dataset ds;
    ds.manifest.seed = seed;
    ds.manifest.frames_per_subject = frames_per_subject;
    ds.manifest.smoothness = smoothness;
    ds.records.reserve(n_subjects * frames_per_subject);
    for (std::size_t s = 0; s < n_subjects; ++s) {
        const auto id = static_cast<std::uint32_t>(s);
        const std::uint64_t subject_seed = splitmix64(seed ^ splitmix64(s + 1));
        const SubjectSpec spec = SubjectSpec::sample(id, subject_seed);
        const AffectTrajectory traj = gen_trajectory(splitmix64(subject_seed), frames_per_subject, smoothness);
        for (std::size_t f = 0; f < frames_per_subject; ++f) {
            FrameRecord rec;
            rec.subject_id = id;
            rec.frame_index = static_cast<std::uint32_t>(f);
            rec.label = traj.frames[f];
            rec.quadrant = quadrant_of(rec.label);
            rec.image = render_face(spec, rec.label);
            for (double& v : rec.image) v = quantize_pixel(v);
            ds.records.push_back(std::move(rec));
        }
        ds.manifest.subjects.push_back({spec, static_cast<std::uint32_t>(frames_per_subject)});
    }
    return ds;
}

std::vector<std::vector<std::uint32_t>> split_folds(const Manifest& manifest, std::size_t k) {
    if (k == 0 || manifest.subjects.size() < k)
        throw std::invalid_argument("split_folds: need at least " + std::to_string(k) + " subjects, have " +
                                    std::to_string(manifest.subjects.size()));
    std::vector<std::uint32_t> ids;
    for (const SubjectInfo& s : manifest.subjects) ids.push_back(s.spec.subject_id);
    std::sort(ids.begin(), ids.end());
    std::vector<std::vector<std::uint32_t>> folds(k);
    for (std::size_t i = 0; i < ids.size(); ++i) folds[i % k].push_back(ids[i]);
    return folds;
}

}  // namespace anclaf

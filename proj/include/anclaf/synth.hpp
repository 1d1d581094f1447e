#pragma once
// Parametric 16x16 face videos with known valence/arousal trajectories.
//
// Identity (head size, eye spacing, mouth width) is fixed per subject and
// independent of affect. Arousal opens the eyes, valence bends the mouth.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "anclaf/metrics.hpp"

namespace anclaf {

inline constexpr std::size_t kImageSide = 16;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide;
inline constexpr double kFrameRate = 50.0;
inline constexpr double kDefaultSmoothness = 1.0;
inline constexpr const char* kGeneratorVersion = "faces-1";

using Image = std::vector<double>;  // kImagePixels values in [0, 1], row-major

// Circumplex quadrant: 0 (V>=0, A>=0), 1 (V<0, A>=0), 2 (V<0, A<0), 3 (V>=0, A<0).
int quadrant_of(const AffectLabel& label);

struct SubjectSpec {
    std::uint32_t subject_id = 0;
    double face_scale = 1.0;   // [0.85, 1.05]
    double eye_spacing = 2.8;  // [2.4, 3.2] px from the vertical midline
    double mouth_width = 5.0;  // [4.0, 6.0] px
    std::uint64_t rng_seed = 0;

    static SubjectSpec sample(std::uint32_t id, std::uint64_t seed);
};

struct AffectTrajectory {
    std::vector<AffectLabel> frames;
    std::size_t length() const { return frames.size(); }
};

// Per dimension: x' = clamp(x + s * (eta - 0.1 x)), eta ~ U(-0.25, 0.25),
// starting from U(-0.5, 0.5).
AffectTrajectory gen_trajectory(std::uint64_t seed, std::size_t length, double smoothness);

Image render_face(const SubjectSpec& spec, const AffectLabel& label);

enum class Distortion { gaussian_noise, occlusion_block, blur };

// Applies one uniformly chosen kind from `kinds`.
Image distort(const Image& image, std::mt19937_64& rng, std::span<const Distortion> kinds);
Image distort(const Image& image, std::mt19937_64& rng);

struct FrameRecord {
    std::uint32_t subject_id = 0;
    std::uint32_t frame_index = 0;
    Image image;
    AffectLabel label;
    int quadrant = 0;
};

struct SubjectInfo {
    SubjectSpec spec;
    std::uint32_t frame_count = 0;
};

struct Manifest {
    std::vector<SubjectInfo> subjects;  // ascending subject id
    std::uint64_t seed = 0;
    std::size_t frames_per_subject = 0;
    double smoothness = kDefaultSmoothness;
    std::string generator_version = kGeneratorVersion;
};

struct Dataset {
    Manifest manifest;
    std::vector<FrameRecord> records;  // grouped by subject, frames in order

    // Frames of one subject, in order.
    std::span<const FrameRecord> subject_frames(std::uint32_t subject_id) const;
    std::vector<std::uint32_t> subject_ids() const;
};

// Pixels are quantized to 8-bit levels so that in-memory and on-disk datasets
// agree exactly.
Dataset gen_dataset(std::size_t n_subjects, std::size_t frames_per_subject, std::uint64_t seed,
                    double smoothness = kDefaultSmoothness);

// Subjects sorted by id and dealt round-robin; result[f] lists fold f's ids.
std::vector<std::vector<std::uint32_t>> split_folds(const Manifest& manifest, std::size_t k = 5);

double quantize_pixel(double v);

}  // namespace anclaf

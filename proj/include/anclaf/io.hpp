#pragma once
// On-disk formats.
//
//   dataset:    <dir>/manifest.json + <dir>/subject_<id>.bin; each .bin holds a
//               16-byte header (subject_id, frame_count, width, height as
//               little-endian u32) then per frame width*height u8 pixels
//               followed by valence and arousal as little-endian f64.
//   checkpoint: "ANCLAFCK" magic, u64 LE header length, JSON header, then
//               every parameter array as little-endian f64 in header order.
//   report:     JSON, see report_to_json.
//   trace:      CSV with a TraceRow header, 17 significant digits.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "anclaf/config.hpp"
#include "anclaf/model.hpp"
#include "anclaf/synth.hpp"
#include "json.hpp"

namespace anclaf {

namespace fs = std::filesystem;

inline constexpr int kCheckpointFormatVersion = 1;

// Config/usage problems (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Writes via a sibling temp file and rename.
void write_file_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

// ---- config ----------------------------------------------------------------

nlohmann::json config_to_json(const TrainConfig& config);
// Unknown keys and type mismatches are ConfigErrors; missing keys keep defaults.
TrainConfig config_from_json(const nlohmann::json& j);
// Parse errors report the 1-based line number.
TrainConfig parse_config(const std::string& text);

// ---- dataset ---------------------------------------------------------------

void write_dataset(const fs::path& dir, const Dataset& dataset);
Dataset read_dataset(const fs::path& dir);
std::string encode_subject_file(std::uint32_t subject_id, std::span<const FrameRecord> frames);

// ---- checkpoints -----------------------------------------------------------

struct Checkpoint {
    AnclafModel model;
    TrainConfig config;
    std::string stage;  // "base", "seq-8", "attn-8", ...
    int fold = -1;
    std::vector<std::uint32_t> validation_subjects;
    std::string rng_state;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const fs::path& path);
Checkpoint load_checkpoint(const fs::path& path);

// Copies every parameter of `source` into the same-named parameter of
// `target`. Throws DimensionError on a missing name or a shape change.
void load_parameters(AnclafModel& target, const AnclafModel& source);

// ---- reports ---------------------------------------------------------------

nlohmann::json report_to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);
void write_report(const fs::path& path, const MetricReport& report);
void write_reports(const fs::path& path, const std::vector<MetricReport>& reports);

// ---- traces ----------------------------------------------------------------

struct TraceRow {
    std::uint32_t subject_id = 0;
    std::uint32_t frame_index = 0;
    double v_true = 0, a_true = 0, v_pred = 0, a_pred = 0;
    int quadrant_true = 0, quadrant_pred = 0;
    std::vector<double> attention;  // up to n weights, oldest first
};

std::string trace_header(std::size_t attention_columns);
std::string encode_trace_csv(const std::vector<TraceRow>& rows, std::size_t attention_columns);
std::vector<TraceRow> decode_trace_csv(const std::string& text, std::size_t* attention_columns = nullptr);

// ---- feature cache ---------------------------------------------------------

struct FeatureKey {
    std::uint32_t subject_id;
    std::uint32_t frame_index;
    auto operator<=>(const FeatureKey&) const = default;
};

using FeatureCache = std::map<FeatureKey, std::vector<double>>;

void write_feature_cache(const fs::path& path, const FeatureCache& cache);
FeatureCache read_feature_cache(const fs::path& path);

}  // namespace anclaf

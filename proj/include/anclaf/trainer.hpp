#pragma once
// Two-stage training: joint adversarial training of G, D and the frame
// combiner, then curriculum training of the sequence combiners over the
// cached ZQ features followed by attention fine-tuning.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "anclaf/config.hpp"
#include "anclaf/io.hpp"
#include "anclaf/model.hpp"
#include "anclaf/synth.hpp"

namespace anclaf {

// ---- optimizer -------------------------------------------------------------

struct AdamSlot {
    std::vector<double> m;
    std::vector<double> v;
};

struct AdamState {
    std::uint64_t step = 0;
    std::vector<AdamSlot> slots;  // parallel to the ParamSet entries
};

struct AdamHyper {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamHyper from(const TrainConfig& config) {
        return {config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps};
    }
};

// One bias-corrected Adam update of every parameter in `params` from its
// accumulated gradient (a missing gradient counts as zero). Throws
// DivergenceError(stage) on a non-finite gradient, before touching anything.
void adam_step(const ParamSet& params, AdamState& state, const AdamHyper& hyper, const std::string& stage = "adam");

// ---- data views ------------------------------------------------------------

// One subject's per-frame inputs and labels.
struct SubjectSeries {
    std::uint32_t subject_id = 0;
    std::vector<std::vector<double>> zq;  // cached features (stage 2)
    std::vector<AffectLabel> labels;
};

using FeatureSet = std::vector<SubjectSeries>;

// Rows of ZQ for every frame of `subjects`, computed from clean images with
// the (frozen) G and D of `model`. Deterministic.
FeatureCache extract_features(const AnclafModel& model, const Dataset& dataset,
                              const std::vector<std::uint32_t>& subjects);
FeatureSet feature_set(const FeatureCache& cache, const Dataset& dataset, const std::vector<std::uint32_t>& subjects);

// ---- results ---------------------------------------------------------------

struct StageResult {
    std::string stage;           // "base", "seq-8", "attn-8"
    double initial_val_loss = 0; // before the first update
    double final_train_loss = 0; // mean over the last epoch
    MetricReport validation;
    std::filesystem::path checkpoint;
    double seconds = 0;
    std::size_t dropped_tail_frames = 0;
};

// Receives `stage=<name> epoch=<e> loss=<v> val_ccc=<v>` lines.
using ProgressSink = std::function<void(const std::string&)>;

struct FoldContext {
    TrainConfig config;
    int fold = 0;
    std::vector<std::uint32_t> train_subjects;
    std::vector<std::uint32_t> validation_subjects;
    std::filesystem::path out_dir;  // empty: no files written
    ProgressSink progress;
};

// ---- stage 1 ---------------------------------------------------------------

struct Stage1Output {
    AnclafModel model;  // frame variant: G, D, frame combiner
    StageResult result;
};

Stage1Output train_stage1(const FoldContext& ctx, const Dataset& dataset);

// Same as train_stage1 but starting from `initial`, for `epochs` epochs.
Stage1Output train_stage1_from(const FoldContext& ctx, const Dataset& dataset, AnclafModel initial,
                               std::size_t epochs);

// Frame-model evaluation on whole subjects.
MetricReport evaluate_frame_model(const AnclafModel& model, const Dataset& dataset,
                                  const std::vector<std::uint32_t>& subjects, int fold);

// ---- stage 2 ---------------------------------------------------------------

struct SequenceStage {
    AnclafModel model;
    StageResult result;
};

// Predictions of a sequence model over whole subjects: state resets every n
// frames, and a short tail window is still evaluated.
std::vector<std::vector<AffectLabel>> predict_sequences(const AnclafModel& model, const FeatureSet& features);
// affect_loss over the pooled predictions of predict_sequences.
double sequence_loss(const AnclafModel& model, const FeatureSet& features, const ClassWeights& weights);
MetricReport evaluate_sequence_model(const AnclafModel& model, const FeatureSet& features, int fold);

// Non-overlapping windows of n frames; tails shorter than n are dropped and
// counted in `dropped`.
struct Window {
    std::size_t subject = 0;  // index into the FeatureSet
    std::size_t start = 0;
};
std::vector<Window> make_windows(const FeatureSet& features, std::size_t n, std::size_t* dropped = nullptr);

// Trains `model` (sequence or attention variant) for `epochs` epochs.
SequenceStage train_sequence_stage(const FoldContext& ctx, AnclafModel model, const FeatureSet& train,
                                   const FeatureSet& validation, const std::string& stage, std::size_t epochs,
                                   std::uint64_t seed);

// First length from a fresh combiner on top of `base`; every later length
// starts from the previous stage's parameters.
std::vector<SequenceStage> train_curriculum(const FoldContext& ctx, const AnclafModel& base, const FeatureSet& train,
                                            const FeatureSet& validation);

// One attention stage per S-n model, each starting from its zero-widened copy.
std::vector<SequenceStage> train_attention(const FoldContext& ctx, const std::vector<AnclafModel>& s_models,
                                           const FeatureSet& train, const FeatureSet& validation);

// ---- pipeline --------------------------------------------------------------

enum class StageSelection { base, seq, attn, all };
StageSelection stage_selection_from_string(const std::string& s);

struct FoldRun {
    int fold = 0;
    std::vector<StageResult> stages;
};

struct PipelineOptions {
    StageSelection stages = StageSelection::all;
    std::filesystem::path out_dir;    // <out>/fold<k>/...
    std::vector<int> folds;           // empty: every fold
    std::size_t threads = 1;          // parallel folds
    ProgressSink progress;
};

// Runs the selected stages fold by fold. `--stage seq` and `--stage attn`
// reuse checkpoints already present under out_dir.
std::vector<FoldRun> run_pipeline(const TrainConfig& config, const Dataset& dataset, const PipelineOptions& options);

// Full pipeline on every fold; returns one aggregated report per model name.
std::vector<MetricReport> run_cross_validation(const TrainConfig& config, const Dataset& dataset,
                                               const PipelineOptions& options);

std::filesystem::path fold_dir(const std::filesystem::path& out, int fold);
std::string checkpoint_name(const std::string& stage);  // "base" -> "anclaf.ckpt", "seq-8" -> "s8.ckpt"

// Report for a checkpoint evaluated on its own validation subjects.
MetricReport evaluate_checkpoint(const Checkpoint& ckpt, const Dataset& dataset);

// Whole-subject trace with state carried across the sequence and the
// attention window capped at the model's n.
std::vector<TraceRow> trace_subject(const AnclafModel& model, const Dataset& dataset, std::uint32_t subject);

// ANCLAF_THREADS if set and positive, else hardware concurrency (at least 1).
std::size_t worker_limit();

}  // namespace anclaf

#include "anclaf/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace anclaf {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string progress_line(const std::string& stage, std::size_t epoch, double loss, double val_ccc) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "stage=%s epoch=%zu loss=%.6f val_ccc=%.6f", stage.c_str(), epoch, loss, val_ccc);
    return buf;
}

void emit(const FoldContext& ctx, const std::string& line) {
    if (ctx.progress) ctx.progress(line);
}

std::string stage_label(const FoldContext& ctx, const std::string& stage) {
    return "f" + std::to_string(ctx.fold) + "." + stage;
}

void check_finite(const Tensor& loss, const std::string& stage) {
    if (!std::isfinite(loss.item())) throw DivergenceError(stage, "non-finite loss in stage " + stage);
}

// Catches a blown-up D before the loss functions reject its range.
void check_probabilities(const Tensor& p, const std::string& stage) {
    for (double v : p.data())
        if (!std::isfinite(v)) throw DivergenceError(stage, "non-finite discriminator output in stage " + stage);
}

std::string rng_state(const std::mt19937_64& rng) {
    std::ostringstream ss;
    ss << rng;
    return ss.str();
}

// Row-stacked tensor of the given images.
Tensor image_batch(const Dataset& ds, std::span<const std::size_t> rows) {
    std::vector<double> data;
    data.reserve(rows.size() * kImagePixels);
    for (std::size_t r : rows) data.insert(data.end(), ds.records[r].image.begin(), ds.records[r].image.end());
    return Tensor({rows.size(), kImagePixels}, std::move(data));
}

std::vector<std::size_t> record_rows(const Dataset& ds, const std::vector<std::uint32_t>& subjects) {
    std::vector<std::size_t> out;
    for (std::uint32_t id : subjects) {
        bool found = false;
        for (std::size_t r = 0; r < ds.records.size(); ++r)
            if (ds.records[r].subject_id == id) {
                out.push_back(r);
                found = true;
            }
        if (!found) throw std::invalid_argument("subject " + std::to_string(id) + " has no frames in the dataset");
    }
    return out;
}

std::vector<AffectLabel> labels_of(const Dataset& ds, std::span<const std::size_t> rows) {
    std::vector<AffectLabel> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back(ds.records[r].label);
    return out;
}

std::vector<AffectLabel> rows_to_labels(const Tensor& preds) {
    std::vector<AffectLabel> out(preds.size() / 2);
    auto d = preds.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = {d[2 * i], d[2 * i + 1]};
    return out;
}

Tensor labels_to_rows(std::span<const AffectLabel> labels) {
    std::vector<double> v;
    v.reserve(labels.size() * 2);
    for (const AffectLabel& l : labels) {
        v.push_back(l.valence);
        v.push_back(l.arousal);
    }
    return Tensor({labels.size(), 2}, std::move(v));
}

std::vector<AffectLabel> all_labels(const FeatureSet& fs) {
    std::vector<AffectLabel> out;
    for (const SubjectSeries& s : fs) out.insert(out.end(), s.labels.begin(), s.labels.end());
    return out;
}

ModelOptions options_from(const TrainConfig& c) {
    ModelOptions o;
    o.attention_mode = attention_mode_from_string(c.attention_mode);
    o.divide_by_k = c.eq7_divide_by_n;
    o.hard_quadrant = c.hard_quadrant;
    return o;
}

std::uint64_t fold_seed(const TrainConfig& c, int fold) { return derive_seed(c.seed, 100 + static_cast<std::uint64_t>(fold)); }

constexpr std::size_t kEvalChunk = 512;

}  // namespace

// ---- optimizer -------------------------------------------------------------

void adam_step(const ParamSet& params, AdamState& state, const AdamHyper& h, const std::string& stage) {
    const auto& entries = params.entries();
    if (state.slots.empty()) {
        state.slots.resize(entries.size());
        for (std::size_t i = 0; i < entries.size(); ++i) {
            state.slots[i].m.assign(entries[i].second.size(), 0.0);
            state.slots[i].v.assign(entries[i].second.size(), 0.0);
        }
    }
    if (state.slots.size() != entries.size()) throw DimensionError("adam_step: optimizer state does not match parameters");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const Tensor& p = entries[i].second;
        if (state.slots[i].m.size() != p.size())
            throw DimensionError("adam_step: state of " + entries[i].first + " does not match its shape");
        if (!p.has_grad()) continue;
        for (double g : p.grad())
            if (!std::isfinite(g)) throw DivergenceError(stage, "non-finite gradient for " + entries[i].first + " in stage " + stage);
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        Tensor p = entries[i].second;
        AdamSlot& s = state.slots[i];
        auto data = p.data_mut();
        const bool has = p.has_grad();
        const auto grad = has ? p.grad() : std::span<const double>{};
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double g = has ? grad[j] : 0.0;
            s.m[j] = h.beta1 * s.m[j] + (1.0 - h.beta1) * g;
            s.v[j] = h.beta2 * s.v[j] + (1.0 - h.beta2) * g * g;
            const double mhat = s.m[j] / bc1;
            const double vhat = s.v[j] / bc2;
            data[j] -= h.learning_rate * mhat / (std::sqrt(vhat) + h.eps);
        }
    }
}

// ---- features --------------------------------------------------------------

FeatureCache extract_features(const AnclafModel& model, const Dataset& dataset,
                              const std::vector<std::uint32_t>& subjects) {
    FeatureCache cache;
    for (std::uint32_t id : subjects) {
        const auto frames = dataset.subject_frames(id);
        if (frames.empty()) throw std::invalid_argument("extract_features: subject " + std::to_string(id) + " has no frames");
        for (std::size_t begin = 0; begin < frames.size(); begin += kEvalChunk) {
            const std::size_t end = std::min(frames.size(), begin + kEvalChunk);
            std::vector<double> px;
            px.reserve((end - begin) * kImagePixels);
            for (std::size_t f = begin; f < end; ++f) px.insert(px.end(), frames[f].image.begin(), frames[f].image.end());
            const LatentFeature lf = extract_latent(model, Tensor({end - begin, kImagePixels}, std::move(px)));
            const std::size_t w = model.arch.zq_dim();
            auto d = lf.zq.data();
            for (std::size_t f = begin; f < end; ++f) {
                const std::size_t r = f - begin;
                cache.emplace(FeatureKey{id, frames[f].frame_index},
                              std::vector<double>(d.begin() + static_cast<long>(r * w), d.begin() + static_cast<long>((r + 1) * w)));
            }
        }
    }
    return cache;
}

FeatureSet feature_set(const FeatureCache& cache, const Dataset& dataset, const std::vector<std::uint32_t>& subjects) {
    FeatureSet out;
    for (std::uint32_t id : subjects) {
        SubjectSeries s;
        s.subject_id = id;
        for (const FrameRecord& f : dataset.subject_frames(id)) {
            auto it = cache.find(FeatureKey{id, f.frame_index});
            if (it == cache.end())
                throw std::runtime_error("feature cache is missing subject " + std::to_string(id) + " frame " +
                                         std::to_string(f.frame_index));
            s.zq.push_back(it->second);
            s.labels.push_back(f.label);
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---- stage 1 ---------------------------------------------------------------

MetricReport evaluate_frame_model(const AnclafModel& model, const Dataset& dataset,
                                  const std::vector<std::uint32_t>& subjects, int fold) {
    const std::vector<std::size_t> rows = record_rows(dataset, subjects);
    std::vector<AffectLabel> preds;
    for (std::size_t b = 0; b < rows.size(); b += kEvalChunk) {
        const std::span<const std::size_t> chunk(rows.data() + b, std::min(kEvalChunk, rows.size() - b));
        const auto p = rows_to_labels(anclaf_forward(model, image_batch(dataset, chunk)).prediction);
        preds.insert(preds.end(), p.begin(), p.end());
    }
    return compute_report(preds, labels_of(dataset, rows), model.display_name(), fold, 1);
}

namespace {

double frame_val_loss(const AnclafModel& model, const Dataset& ds, const std::vector<std::size_t>& rows,
                      const ClassWeights& cw) {
    std::vector<AffectLabel> preds;
    for (std::size_t b = 0; b < rows.size(); b += kEvalChunk) {
        const std::span<const std::size_t> chunk(rows.data() + b, std::min(kEvalChunk, rows.size() - b));
        const auto p = rows_to_labels(anclaf_forward(model, image_batch(ds, chunk)).prediction);
        preds.insert(preds.end(), p.begin(), p.end());
    }
    const auto truth = labels_of(ds, rows);
    return affect_loss(labels_to_rows(preds), truth, cw).item();
}

}  // namespace

Stage1Output train_stage1(const FoldContext& ctx, const Dataset& dataset) {
    const std::uint64_t fs = fold_seed(ctx.config, ctx.fold);
    AnclafModel model = AnclafModel::create(ArchSpec{}, Variant::frame, options_from(ctx.config), derive_seed(fs, 1));
    return train_stage1_from(ctx, dataset, std::move(model), ctx.config.stage1_epochs);
}

Stage1Output train_stage1_from(const FoldContext& ctx, const Dataset& dataset, AnclafModel model,
                               std::size_t epochs) {
    const auto t0 = Clock::now();
    const TrainConfig& cfg = ctx.config;
    const std::string stage = "base";
    const std::string label = stage_label(ctx, stage);
    if (model.variant != Variant::frame) throw std::invalid_argument("train_stage1: expects a frame model");

    std::vector<std::size_t> train_rows = record_rows(dataset, ctx.train_subjects);
    const std::vector<std::size_t> val_rows = record_rows(dataset, ctx.validation_subjects);
    const auto train_labels = labels_of(dataset, train_rows);
    const ClassWeights cw = class_weights(train_labels, cfg.class_weight_literal);

    const ParamSet all = model.all_params();
    const ParamSet g_params = model.generator_params();
    const ParamSet d_params = model.discriminator_params();
    const ParamSet c_params = model.combiner_params();
    AdamState g_state, d_state, c_state;
    const AdamHyper hyper = AdamHyper::from(cfg);
    std::mt19937_64 rng(derive_seed(fold_seed(cfg, ctx.fold), 2));

    StageResult result;
    result.stage = stage;
    result.initial_val_loss = val_rows.empty() ? 0.0 : frame_val_loss(model, dataset, val_rows, cw);

    const std::size_t bs = cfg.stage1_batch_size;
    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        std::shuffle(train_rows.begin(), train_rows.end(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < train_rows.size(); b += bs) {
            const std::span<const std::size_t> rows(train_rows.data() + b, std::min(bs, train_rows.size() - b));
            const Tensor images = image_batch(dataset, rows);
            const std::vector<AffectLabel> labels = labels_of(dataset, rows);
            std::vector<int> quadrants;
            for (std::size_t r : rows) quadrants.push_back(dataset.records[r].quadrant);

            // Discriminator: real vs reconstruction of the distorted image, plus quadrants on both.
            const GeneratorOutput g = generator_forward(model.generator, images, true, &rng);
            const Tensor recon_fixed = g.reconstruction.detach();
            const DiscriminatorOutput d_real = discriminator_forward(model.discriminator, images);
            const DiscriminatorOutput d_fake = discriminator_forward(model.discriminator, recon_fixed);
            check_probabilities(d_real.p_real, label);
            check_probabilities(d_fake.p_real, label);
            Tensor loss_d = adversarial_losses(d_real.p_real, d_fake.p_real, cfg.minimax_generator).discriminator;
            loss_d = add(loss_d, scale(add(quadrant_cross_entropy(d_real.q_logits, quadrants),
                                           quadrant_cross_entropy(d_fake.q_logits, quadrants)),
                                       cfg.lambda_q));
            check_finite(loss_d, label);
            all.zero_grad();
            backward(loss_d);
            adam_step(d_params, d_state, hyper, label);

            // Generator and combiner: fool the updated D, reconstruct the clean
            // image, and regress affect from ZQ of the clean image.
            const DiscriminatorOutput d_gen = discriminator_forward(model.discriminator, g.reconstruction);
            check_probabilities(d_gen.p_real, label);
            Tensor loss_g = adversarial_losses(d_real.p_real.detach(), d_gen.p_real, cfg.minimax_generator).generator;
            // Squared error summed over pixels, averaged over the batch.
            if (cfg.lambda_rec > 0)
                loss_g = add(loss_g, scale(sum(square(sub(g.reconstruction, images))),
                                           cfg.lambda_rec / static_cast<double>(rows.size())));
            const Tensor zq = extract_latent(model, images).zq;
            const Tensor loss_c = affect_loss(combiner_frame_forward(model.combiner, zq), labels, cw);
            const Tensor loss_gc = add(loss_g, loss_c);
            check_finite(loss_gc, label);
            all.zero_grad();
            backward(loss_gc);
            adam_step(g_params, g_state, hyper, label);
            adam_step(c_params, c_state, hyper, label);

            loss_sum += loss_d.item() + loss_g.item() + loss_c.item();
            ++batches;
        }
        all.zero_grad();
        result.final_train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        const double val_ccc =
            val_rows.empty() ? 0.0 : evaluate_frame_model(model, dataset, ctx.validation_subjects, ctx.fold).average.ccc;
        emit(ctx, progress_line(label, epoch, result.final_train_loss, val_ccc));
    }
    all.zero_grad();
    if (!val_rows.empty()) result.validation = evaluate_frame_model(model, dataset, ctx.validation_subjects, ctx.fold);
    result.validation.model = model.display_name();
    result.validation.fold = ctx.fold;
    result.seconds = seconds_since(t0);
    return {std::move(model), std::move(result)};
}

// ---- stage 2 ---------------------------------------------------------------

std::vector<Window> make_windows(const FeatureSet& features, std::size_t n, std::size_t* dropped) {
    if (n == 0) throw std::invalid_argument("make_windows: n must be positive");
    std::vector<Window> out;
    std::size_t lost = 0;
    for (std::size_t s = 0; s < features.size(); ++s) {
        const std::size_t len = features[s].labels.size();
        for (std::size_t start = 0; start + n <= len; start += n) out.push_back({s, start});
        lost += len % n;
    }
    if (dropped) *dropped = lost;
    return out;
}

std::vector<std::vector<AffectLabel>> predict_sequences(const AnclafModel& model, const FeatureSet& features) {
    if (model.variant == Variant::frame) throw std::invalid_argument("predict_sequences: frame model");
    const std::size_t n = model.options.sequence_length;
    const std::size_t w = model.arch.zq_dim();
    std::vector<std::vector<AffectLabel>> out(features.size());
    // Subjects of equal length run as one batch.
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t s = 0; s < features.size(); ++s) groups[features[s].zq.size()].push_back(s);
    for (const auto& [len, members] : groups) {
        const std::size_t b = members.size();
        CombinerStream stream(model, b);
        for (std::size_t s : members) out[s].reserve(len);
        for (std::size_t t = 0; t < len; ++t) {
            if (t % n == 0) stream.reset();
            std::vector<double> rows;
            rows.reserve(b * w);
            for (std::size_t s : members) rows.insert(rows.end(), features[s].zq[t].begin(), features[s].zq[t].end());
            const auto preds = rows_to_labels(stream.step(Tensor({b, w}, std::move(rows))).prediction);
            for (std::size_t i = 0; i < b; ++i) out[members[i]].push_back(preds[i]);
        }
    }
    return out;
}

double sequence_loss(const AnclafModel& model, const FeatureSet& features, const ClassWeights& weights) {
    const auto preds = predict_sequences(model, features);
    std::vector<AffectLabel> flat;
    for (const auto& p : preds) flat.insert(flat.end(), p.begin(), p.end());
    return affect_loss(labels_to_rows(flat), all_labels(features), weights).item();
}

MetricReport evaluate_sequence_model(const AnclafModel& model, const FeatureSet& features, int fold) {
    const auto preds = predict_sequences(model, features);
    std::vector<AffectLabel> flat;
    for (const auto& p : preds) flat.insert(flat.end(), p.begin(), p.end());
    return compute_report(flat, all_labels(features), model.display_name(), fold, model.options.sequence_length);
}

SequenceStage train_sequence_stage(const FoldContext& ctx, AnclafModel model, const FeatureSet& train,
                                   const FeatureSet& validation, const std::string& stage, std::size_t epochs,
                                   std::uint64_t seed) {
    const auto t0 = Clock::now();
    const TrainConfig& cfg = ctx.config;
    const std::string label = stage_label(ctx, stage);
    if (model.variant == Variant::frame) throw std::invalid_argument("train_sequence_stage: frame model");
    const std::size_t n = model.options.sequence_length;
    const std::size_t w = model.arch.zq_dim();

    const ClassWeights cw = class_weights(all_labels(train), cfg.class_weight_literal);
    const ParamSet params = model.combiner_params();
    AdamState state;
    const AdamHyper hyper = AdamHyper::from(cfg);
    std::mt19937_64 rng(seed);

    StageResult result;
    result.stage = stage;
    std::vector<Window> windows = make_windows(train, n, &result.dropped_tail_frames);
    result.initial_val_loss = validation.empty() ? 0.0 : sequence_loss(model, validation, cw);

    const std::size_t bs = cfg.batch_size;
    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        std::shuffle(windows.begin(), windows.end(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < windows.size(); b += bs) {
            const std::size_t nb = std::min(bs, windows.size() - b);
            CombinerStream stream(model, nb);
            std::vector<Tensor> preds;
            std::vector<AffectLabel> truths;
            truths.reserve(nb * n);
            for (std::size_t t = 0; t < n; ++t) {
                std::vector<double> rows;
                rows.reserve(nb * w);
                for (std::size_t i = 0; i < nb; ++i) {
                    const Window& win = windows[b + i];
                    const SubjectSeries& s = train[win.subject];
                    rows.insert(rows.end(), s.zq[win.start + t].begin(), s.zq[win.start + t].end());
                    truths.push_back(s.labels[win.start + t]);
                }
                preds.push_back(stream.step(Tensor({nb, w}, std::move(rows))).prediction);
            }
            const Tensor loss = affect_loss(concat(preds, 0), truths, cw);
            check_finite(loss, label);
            params.zero_grad();
            backward(loss);
            adam_step(params, state, hyper, label);
            loss_sum += loss.item();
            ++batches;
        }
        params.zero_grad();
        result.final_train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        const double val_ccc = validation.empty() ? 0.0 : evaluate_sequence_model(model, validation, ctx.fold).average.ccc;
        emit(ctx, progress_line(label, epoch, result.final_train_loss, val_ccc));
    }
    if (!validation.empty()) result.validation = evaluate_sequence_model(model, validation, ctx.fold);
    result.validation.model = model.display_name();
    result.validation.fold = ctx.fold;
    result.validation.sequence_length = n;
    result.seconds = seconds_since(t0);
    return {std::move(model), std::move(result)};
}

std::vector<SequenceStage> train_curriculum(const FoldContext& ctx, const AnclafModel& base, const FeatureSet& train,
                                            const FeatureSet& validation) {
    const TrainConfig& cfg = ctx.config;
    const std::uint64_t fs = fold_seed(cfg, ctx.fold);
    std::vector<SequenceStage> out;
    for (std::size_t i = 0; i < cfg.curriculum.size(); ++i) {
        const std::size_t n = cfg.curriculum[i];
        AnclafModel start = out.empty() ? make_sequence_model(base, n, derive_seed(fs, 10))
                                        : with_sequence_length(out.back().model, n);
        out.push_back(train_sequence_stage(ctx, std::move(start), train, validation, "seq-" + std::to_string(n),
                                           cfg.epochs_per_stage, derive_seed(fs, 1000 + n)));
    }
    return out;
}

std::vector<SequenceStage> train_attention(const FoldContext& ctx, const std::vector<AnclafModel>& s_models,
                                           const FeatureSet& train, const FeatureSet& validation) {
    const TrainConfig& cfg = ctx.config;
    const std::uint64_t fs = fold_seed(cfg, ctx.fold);
    std::vector<SequenceStage> out;
    for (const AnclafModel& s : s_models) {
        const std::size_t n = s.options.sequence_length;
        AnclafModel start = to_attention_model(s, derive_seed(fs, 20 + n));
        out.push_back(train_sequence_stage(ctx, std::move(start), train, validation, "attn-" + std::to_string(n),
                                           cfg.epochs_per_stage, derive_seed(fs, 2000 + n)));
    }
    return out;
}

// ---- pipeline --------------------------------------------------------------

StageSelection stage_selection_from_string(const std::string& s) {
    if (s == "base") return StageSelection::base;
    if (s == "seq") return StageSelection::seq;
    if (s == "attn") return StageSelection::attn;
    if (s == "all") return StageSelection::all;
    throw std::invalid_argument("unknown stage selection: " + s);
}

std::filesystem::path fold_dir(const std::filesystem::path& out, int fold) {
    return out / ("fold" + std::to_string(fold));
}

std::string checkpoint_name(const std::string& stage) {
    if (stage == "base") return "anclaf.ckpt";
    if (stage.rfind("seq-", 0) == 0) return "s" + stage.substr(4) + ".ckpt";
    if (stage.rfind("attn-", 0) == 0) return "sa" + stage.substr(5) + ".ckpt";
    throw std::invalid_argument("unknown stage name: " + stage);
}

std::size_t worker_limit() {
    if (const char* env = std::getenv("ANCLAF_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

void save_stage(const FoldContext& ctx, const AnclafModel& model, StageResult& result, const std::string& rng) {
    if (ctx.out_dir.empty()) return;
    Checkpoint ck{model.clone(), ctx.config, result.stage, ctx.fold, ctx.validation_subjects, rng};
    result.checkpoint = ctx.out_dir / checkpoint_name(result.stage);
    save_checkpoint(ck, result.checkpoint);
}

Checkpoint require_checkpoint(const std::filesystem::path& path, const std::string& what) {
    if (!std::filesystem::exists(path)) throw std::runtime_error("missing " + what + " checkpoint: " + path.string());
    return load_checkpoint(path);
}

FoldRun run_fold(const TrainConfig& config, const Dataset& dataset, const std::vector<std::uint32_t>& val_ids,
                 int fold, const PipelineOptions& options) {
    FoldContext ctx;
    ctx.config = config;
    ctx.fold = fold;
    ctx.validation_subjects = val_ids;
    for (std::uint32_t id : dataset.subject_ids())
        if (std::find(val_ids.begin(), val_ids.end(), id) == val_ids.end()) ctx.train_subjects.push_back(id);
    if (!options.out_dir.empty()) ctx.out_dir = fold_dir(options.out_dir, fold);
    ctx.progress = options.progress;

    FoldRun run;
    run.fold = fold;
    const StageSelection sel = options.stages;
    const std::uint64_t fs = fold_seed(config, fold);

    AnclafModel base;
    if (sel == StageSelection::base || sel == StageSelection::all) {
        Stage1Output s1 = train_stage1(ctx, dataset);
        save_stage(ctx, s1.model, s1.result, rng_state(std::mt19937_64(derive_seed(fs, 2))));
        base = std::move(s1.model);
        run.stages.push_back(std::move(s1.result));
        if (sel == StageSelection::base) return run;
    } else {
        if (ctx.out_dir.empty()) throw std::invalid_argument("--stage seq/attn needs an output directory with prior checkpoints");
        base = require_checkpoint(ctx.out_dir / checkpoint_name("base"), "base").model;
    }

    // Stage-2 inputs: ZQ from the frozen stage-1 G and D.
    FeatureCache cache;
    const std::filesystem::path cache_path = ctx.out_dir.empty() ? std::filesystem::path{} : ctx.out_dir / "features.bin";
    if (sel != StageSelection::all && !cache_path.empty() && std::filesystem::exists(cache_path)) {
        cache = read_feature_cache(cache_path);
    } else {
        cache = extract_features(base, dataset, dataset.subject_ids());
        if (!cache_path.empty()) write_feature_cache(cache_path, cache);
    }
    const FeatureSet train = feature_set(cache, dataset, ctx.train_subjects);
    const FeatureSet val = feature_set(cache, dataset, ctx.validation_subjects);

    std::vector<AnclafModel> s_models;
    if (sel == StageSelection::seq || sel == StageSelection::all) {
        for (SequenceStage& s : train_curriculum(ctx, base, train, val)) {
            save_stage(ctx, s.model, s.result, "");
            s_models.push_back(std::move(s.model));
            run.stages.push_back(std::move(s.result));
        }
        if (sel == StageSelection::seq) return run;
    } else {
        for (std::size_t n : config.curriculum)
            s_models.push_back(require_checkpoint(ctx.out_dir / checkpoint_name("seq-" + std::to_string(n)), "S-" + std::to_string(n)).model);
    }

    for (SequenceStage& s : train_attention(ctx, s_models, train, val)) {
        save_stage(ctx, s.model, s.result, "");
        run.stages.push_back(std::move(s.result));
    }
    return run;
}

}  // namespace

std::vector<FoldRun> run_pipeline(const TrainConfig& config, const Dataset& dataset, const PipelineOptions& options) {
    config.validate();
    if (!config.freeze_gd_stage2)
        throw std::invalid_argument("freeze_gd_stage2=false is not supported by the cached-feature pipeline");
    const auto folds = split_folds(dataset.manifest, config.folds);
    std::vector<int> todo = options.folds;
    if (todo.empty())
        for (std::size_t f = 0; f < folds.size(); ++f) todo.push_back(static_cast<int>(f));
    for (int f : todo)
        if (f < 0 || static_cast<std::size_t>(f) >= folds.size())
            throw std::invalid_argument("fold " + std::to_string(f) + " out of range");

    PipelineOptions opts = options;
    std::mutex mu;
    if (options.progress)
        opts.progress = [&mu, sink = options.progress](const std::string& line) {
            std::lock_guard<std::mutex> lock(mu);
            sink(line);
        };

    std::vector<FoldRun> runs(todo.size());
    std::vector<std::exception_ptr> errors(todo.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < todo.size();) {
            try {
                runs[i] = run_fold(config, dataset, folds[static_cast<std::size_t>(todo[i])], todo[i], opts);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, todo.size());
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return runs;
}

std::vector<MetricReport> run_cross_validation(const TrainConfig& config, const Dataset& dataset,
                                               const PipelineOptions& options) {
    if (dataset.manifest.subjects.size() < config.folds)
        throw std::invalid_argument("cross-validation needs at least " + std::to_string(config.folds) + " subjects");
    PipelineOptions opts = options;
    opts.folds.clear();
    const auto runs = run_pipeline(config, dataset, opts);
    std::map<std::string, std::vector<MetricReport>> by_model;
    std::vector<std::string> order;
    for (const FoldRun& r : runs)
        for (const StageResult& s : r.stages) {
            if (!by_model.count(s.validation.model)) order.push_back(s.validation.model);
            by_model[s.validation.model].push_back(s.validation);
        }
    std::vector<MetricReport> out;
    for (const std::string& m : order) out.push_back(aggregate_report(by_model[m]));
    return out;
}

MetricReport evaluate_checkpoint(const Checkpoint& ckpt, const Dataset& dataset) {
    if (ckpt.validation_subjects.empty()) throw std::invalid_argument("checkpoint lists no validation subjects");
    for (std::uint32_t id : ckpt.validation_subjects)
        if (dataset.subject_frames(id).empty())
            throw std::invalid_argument("validation subject " + std::to_string(id) + " is not in the dataset");
    if (ckpt.model.variant == Variant::frame)
        return evaluate_frame_model(ckpt.model, dataset, ckpt.validation_subjects, ckpt.fold);
    const FeatureCache cache = extract_features(ckpt.model, dataset, ckpt.validation_subjects);
    return evaluate_sequence_model(ckpt.model, feature_set(cache, dataset, ckpt.validation_subjects), ckpt.fold);
}

std::vector<TraceRow> trace_subject(const AnclafModel& model, const Dataset& dataset, std::uint32_t subject) {
    const auto frames = dataset.subject_frames(subject);
    if (frames.empty()) throw std::invalid_argument("unknown subject " + std::to_string(subject));
    std::vector<TraceRow> rows;
    rows.reserve(frames.size());
    std::optional<CombinerStream> stream;
    if (model.variant != Variant::frame) stream.emplace(model, 0);
    for (const FrameRecord& f : frames) {
        const LatentFeature lf = extract_latent(model, Tensor({kImagePixels}, f.image));
        TraceRow r;
        r.subject_id = subject;
        r.frame_index = f.frame_index;
        r.v_true = f.label.valence;
        r.a_true = f.label.arousal;
        r.quadrant_true = f.quadrant;
        const auto q = lf.q.data();
        r.quadrant_pred = static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
        Tensor pred;
        if (stream) {
            const auto step = stream->step(lf.zq);
            pred = step.prediction;
            if (step.weights.defined()) r.attention.assign(step.weights.data().begin(), step.weights.data().end());
        } else {
            pred = combiner_frame_forward(model.combiner, lf.zq);
        }
        r.v_pred = pred.at(0);
        r.a_pred = pred.at(1);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace anclaf

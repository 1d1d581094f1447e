// anclaf <gen-data|train|eval|trace> [flags]
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "anclaf/io.hpp"
#include "anclaf/trainer.hpp"

namespace {

using namespace anclaf;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int cmd_gen_data(std::size_t subjects, std::size_t frames, std::uint64_t seed, double smoothness,
                 const fs::path& out) {
    if (subjects < 5) throw UsageError("--subjects must be at least 5");
    if (frames == 0) throw UsageError("--frames must be positive");
    if (!(smoothness > 0 && smoothness <= 1)) throw UsageError("--smoothness must lie in (0, 1]");
    const Dataset ds = gen_dataset(subjects, frames, seed, smoothness);
    write_dataset(out, ds);
    std::printf("wrote %zu subjects x %zu frames (%zu records, seed %llu, %s) to %s\n", subjects, frames,
                ds.records.size(), static_cast<unsigned long long>(seed), ds.manifest.generator_version.c_str(),
                out.string().c_str());
    return 0;
}

TrainConfig load_config(const std::string& path) {
    if (path.empty()) return TrainConfig{};
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return parse_config(text);
}

int cmd_train(const std::string& config_path, const fs::path& data, const std::string& stage, const fs::path& out,
              const std::vector<int>& folds, bool quiet) {
    const TrainConfig config = load_config(config_path);
    const Dataset ds = read_dataset(data);
    if (ds.manifest.subjects.size() < config.folds)
        throw UsageError("dataset has " + std::to_string(ds.manifest.subjects.size()) + " subjects, fewer than " +
                         std::to_string(config.folds) + " folds");
    PipelineOptions opts;
    opts.stages = stage_selection_from_string(stage);
    opts.out_dir = out;
    opts.folds = folds;
    opts.threads = worker_limit();
    if (!quiet)
        opts.progress = [](const std::string& line) {
            std::cout << line << '\n';
            std::cout.flush();
        };
    const auto runs = run_pipeline(config, ds, opts);

    std::vector<MetricReport> reports;
    std::size_t checkpoints = 0;
    for (const FoldRun& r : runs)
        for (const StageResult& s : r.stages) {
            reports.push_back(s.validation);
            checkpoints += !s.checkpoint.empty();
            std::printf("fold=%d stage=%s val_ccc=%.6f dropped_tail_frames=%zu seconds=%.1f checkpoint=%s\n", r.fold,
                        s.stage.c_str(), s.validation.average.ccc, s.dropped_tail_frames, s.seconds,
                        s.checkpoint.string().c_str());
        }
    write_reports(out / "reports.json", reports);
    if (runs.size() == config.folds) {
        std::map<std::string, std::vector<MetricReport>> by_model;
        std::vector<std::string> order;
        for (const MetricReport& r : reports) {
            if (!by_model.count(r.model)) order.push_back(r.model);
            by_model[r.model].push_back(r);
        }
        std::vector<MetricReport> agg;
        for (const auto& m : order) agg.push_back(aggregate_report(by_model[m]));
        write_reports(out / "summary.json", agg);
    }
    std::printf("%zu checkpoints written under %s\n", checkpoints, out.string().c_str());
    return 0;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data, const fs::path& report_path) {
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    const Dataset ds = read_dataset(data);
    if (ckpt.fold >= 0 && ds.manifest.subjects.size() >= ckpt.config.folds) {
        const auto folds = split_folds(ds.manifest, ckpt.config.folds);
        if (static_cast<std::size_t>(ckpt.fold) >= folds.size() ||
            folds[static_cast<std::size_t>(ckpt.fold)] != ckpt.validation_subjects)
            std::fprintf(stderr, "warning: checkpoint validation subjects do not match fold %d of this dataset\n",
                         ckpt.fold);
    }
    const MetricReport report = evaluate_checkpoint(ckpt, ds);
    write_report(report_path, report);
    std::printf("%s fold=%d ccc=%.6f rmse=%.6f -> %s\n", report.model.c_str(), report.fold, report.average.ccc,
                report.average.rmse, report_path.string().c_str());
    return 0;
}

int cmd_trace(const fs::path& checkpoint, const fs::path& data, std::uint32_t subject, const fs::path& out) {
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    const Dataset ds = read_dataset(data);
    const auto ids = ds.subject_ids();
    if (std::find(ids.begin(), ids.end(), subject) == ids.end())
        throw UsageError("unknown subject " + std::to_string(subject));
    const std::size_t cols =
        ckpt.model.variant == Variant::sequence_attention ? ckpt.model.options.sequence_length : 0;
    const auto rows = trace_subject(ckpt.model, ds, subject);
    write_file_atomic(out, encode_trace_csv(rows, cols));
    std::printf("wrote %zu rows for subject %u to %s\n", rows.size(), subject, out.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ANCLaF affect regression toolkit"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic face dataset");
    std::size_t subjects = 40, frames = 300;
    std::uint64_t seed = 7;
    double smoothness = kDefaultSmoothness;
    fs::path gen_out;
    gen->add_option("--subjects", subjects, "number of subjects (>= 5)");
    gen->add_option("--frames", frames, "frames per subject");
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--smoothness", smoothness, "trajectory smoothness in (0, 1]");
    gen->add_option("--out", gen_out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train checkpoints for every fold");
    std::string config_path, stage = "all";
    fs::path train_data, train_out;
    std::vector<int> folds;
    bool quiet = false;
    train->add_option("--config", config_path, "TrainConfig JSON");
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--stage", stage, "base|seq|attn|all")->check(CLI::IsMember({"base", "seq", "attn", "all"}));
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--fold", folds, "restrict to these folds");
    train->add_flag("--quiet", quiet, "suppress progress lines");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on its validation fold");
    fs::path eval_ckpt, eval_data, eval_report;
    eval->add_option("--checkpoint", eval_ckpt)->required();
    eval->add_option("--data", eval_data)->required();
    eval->add_option("--report", eval_report)->required();

    auto* trace = app.add_subcommand("trace", "export per-frame predictions and attention weights");
    fs::path trace_ckpt, trace_data, trace_out;
    std::uint32_t trace_subject = 0;
    trace->add_option("--checkpoint", trace_ckpt)->required();
    trace->add_option("--data", trace_data)->required();
    trace->add_option("--subject", trace_subject)->required();
    trace->add_option("--out", trace_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*gen) return cmd_gen_data(subjects, frames, seed, smoothness, gen_out);
        if (*train) return cmd_train(config_path, train_data, stage, train_out, folds, quiet);
        if (*eval) return cmd_eval(eval_ckpt, eval_data, eval_report);
        if (*trace) return cmd_trace(trace_ckpt, trace_data, trace_subject, trace_out);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "error: training diverged in stage %s: %s\n", e.stage().c_str(), e.what());
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}

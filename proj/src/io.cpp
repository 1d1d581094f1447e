#include "anclaf/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace anclaf {

using nlohmann::json;

namespace {

constexpr char kCheckpointMagic[8] = {'A', 'N', 'C', 'L', 'A', 'F', 'C', 'K'};
constexpr char kFeatureMagic[8] = {'A', 'N', 'C', 'L', 'A', 'F', 'Z', 'Q'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
    Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw FormatError(what_ + ": truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---- config ----------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(learning_rate > 0) || !(adam_eps > 0)) throw std::invalid_argument("rates must be positive");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
        throw std::invalid_argument("adam betas must lie in [0, 1)");
    if (batch_size == 0 || stage1_batch_size == 0) throw std::invalid_argument("batch sizes must be positive");
    if (curriculum.empty()) throw std::invalid_argument("curriculum must not be empty");
    for (std::size_t i = 0; i < curriculum.size(); ++i) {
        if (curriculum[i] == 0) throw std::invalid_argument("curriculum lengths must be positive");
        if (i > 0 && (curriculum[i] <= curriculum[i - 1] || curriculum[i] % curriculum[i - 1] != 0))
            throw std::invalid_argument("curriculum must be strictly increasing with each length dividing the next");
    }
    if (lambda_rec < 0 || lambda_q < 0) throw std::invalid_argument("loss weights must be non-negative");
    if (folds < 2) throw std::invalid_argument("folds must be >= 2");
    if (attention_mode != "concat" && attention_mode != "location")
        throw std::invalid_argument("attention_mode must be concat or location");
}

json config_to_json(const TrainConfig& c) {
    return json{{"seed", c.seed},
                {"learning_rate", c.learning_rate},
                {"adam_beta1", c.adam_beta1},
                {"adam_beta2", c.adam_beta2},
                {"adam_eps", c.adam_eps},
                {"batch_size", c.batch_size},
                {"epochs_per_stage", c.epochs_per_stage},
                {"curriculum", c.curriculum},
                {"lambda_rec", c.lambda_rec},
                {"lambda_q", c.lambda_q},
                {"freeze_gd_stage2", c.freeze_gd_stage2},
                {"attention_mode", c.attention_mode},
                {"eq7_divide_by_n", c.eq7_divide_by_n},
                {"stage1_epochs", c.stage1_epochs},
                {"stage1_batch_size", c.stage1_batch_size},
                {"folds", c.folds},
                {"minimax_generator", c.minimax_generator},
                {"class_weight_literal", c.class_weight_literal},
                {"hard_quadrant", c.hard_quadrant}};
}

TrainConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    TrainConfig c;
    const json defaults = config_to_json(c);
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!defaults.contains(it.key())) throw ConfigError("unknown config key: " + it.key());
    auto get = [&j](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config key ") + key + ": " + e.what());
        }
    };
    get("seed", c.seed);
    get("learning_rate", c.learning_rate);
    get("adam_beta1", c.adam_beta1);
    get("adam_beta2", c.adam_beta2);
    get("adam_eps", c.adam_eps);
    get("batch_size", c.batch_size);
    get("epochs_per_stage", c.epochs_per_stage);
    get("curriculum", c.curriculum);
    get("lambda_rec", c.lambda_rec);
    get("lambda_q", c.lambda_q);
    get("freeze_gd_stage2", c.freeze_gd_stage2);
    get("attention_mode", c.attention_mode);
    get("eq7_divide_by_n", c.eq7_divide_by_n);
    get("stage1_epochs", c.stage1_epochs);
    get("stage1_batch_size", c.stage1_batch_size);
    get("folds", c.folds);
    get("minimax_generator", c.minimax_generator);
    get("class_weight_literal", c.class_weight_literal);
    get("hard_quadrant", c.hard_quadrant);
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    return c;
}

TrainConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1;
        const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        for (std::size_t i = 0; i < end; ++i)
            if (text[i] == '\n') ++line;
        throw ConfigError("config parse error at line " + std::to_string(line) + ": " + e.what());
    }
    return config_from_json(j);
}

// ---- dataset ---------------------------------------------------------------

namespace {

std::string subject_file_name(std::uint32_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "subject_%04u.bin", id);
    return buf;
}

}  // namespace

std::string encode_subject_file(std::uint32_t subject_id, std::span<const FrameRecord> frames) {
    std::string out;
    out.reserve(16 + frames.size() * (kImagePixels + 16));
    put_u32(out, subject_id);
    put_u32(out, static_cast<std::uint32_t>(frames.size()));
    put_u32(out, static_cast<std::uint32_t>(kImageSide));
    put_u32(out, static_cast<std::uint32_t>(kImageSide));
    for (const FrameRecord& f : frames) {
        for (double v : f.image) out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
        put_f64(out, f.label.valence);
        put_f64(out, f.label.arousal);
    }
    return out;
}

void write_dataset(const fs::path& dir, const Dataset& ds) {
    fs::create_directories(dir);
    json subjects = json::array();
    for (const SubjectInfo& s : ds.manifest.subjects) {
        const std::uint32_t id = s.spec.subject_id;
        write_file_atomic(dir / subject_file_name(id), encode_subject_file(id, ds.subject_frames(id)));
        subjects.push_back({{"subject_id", id},
                            {"frame_count", s.frame_count},
                            {"face_scale", s.spec.face_scale},
                            {"eye_spacing", s.spec.eye_spacing},
                            {"mouth_width", s.spec.mouth_width},
                            {"rng_seed", s.spec.rng_seed},
                            {"file", subject_file_name(id)}});
    }
    json manifest{{"generator_version", ds.manifest.generator_version},
                  {"seed", ds.manifest.seed},
                  {"frames_per_subject", ds.manifest.frames_per_subject},
                  {"smoothness", ds.manifest.smoothness},
                  {"width", kImageSide},
                  {"height", kImageSide},
                  {"frame_rate", kFrameRate},
                  {"subject_count", ds.manifest.subjects.size()},
                  {"total_frames", ds.records.size()},
                  {"subjects", subjects}};
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& dir) {
    const fs::path mpath = dir / "manifest.json";
    if (!fs::exists(mpath)) throw std::runtime_error("dataset manifest not found: " + mpath.string());
    json m;
    try {
        m = json::parse(read_file(mpath));
    } catch (const json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }
    Dataset ds;
    try {
        ds.manifest.generator_version = m.at("generator_version").get<std::string>();
        ds.manifest.seed = m.at("seed").get<std::uint64_t>();
        ds.manifest.frames_per_subject = m.at("frames_per_subject").get<std::size_t>();
        ds.manifest.smoothness = m.at("smoothness").get<double>();
        for (const json& s : m.at("subjects")) {
            SubjectInfo info;
            info.spec.subject_id = s.at("subject_id").get<std::uint32_t>();
            info.spec.face_scale = s.at("face_scale").get<double>();
            info.spec.eye_spacing = s.at("eye_spacing").get<double>();
            info.spec.mouth_width = s.at("mouth_width").get<double>();
            info.spec.rng_seed = s.at("rng_seed").get<std::uint64_t>();
            info.frame_count = s.at("frame_count").get<std::uint32_t>();
            ds.manifest.subjects.push_back(info);

            const std::string bytes = read_file(dir / s.at("file").get<std::string>());
            Reader r(bytes, s.at("file").get<std::string>());
            const std::uint32_t id = r.u32(), count = r.u32(), w = r.u32(), h = r.u32();
            if (id != info.spec.subject_id || count != info.frame_count || w != kImageSide || h != kImageSide)
                throw FormatError("subject file header disagrees with manifest for subject " + std::to_string(info.spec.subject_id));
            for (std::uint32_t f = 0; f < count; ++f) {
                FrameRecord rec;
                rec.subject_id = id;
                rec.frame_index = f;
                rec.image.resize(kImagePixels);
                for (double& v : rec.image) v = r.u8() / 255.0;
                rec.label.valence = r.f64();
                rec.label.arousal = r.f64();
                rec.quadrant = quadrant_of(rec.label);
                ds.records.push_back(std::move(rec));
            }
            if (!r.done()) throw FormatError("trailing bytes in subject file " + std::to_string(id));
        }
    } catch (const json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }
    return ds;
}

// ---- checkpoints -----------------------------------------------------------

namespace {

json arch_to_json(const ArchSpec& a) {
    return json{{"image_dim", a.image_dim},   {"g_hidden", a.g_hidden},   {"latent_dim", a.latent_dim},
                {"d_hidden1", a.d_hidden1},   {"d_hidden2", a.d_hidden2}, {"c_hidden", a.c_hidden},
                {"lstm_hidden", a.lstm_hidden}};
}

ArchSpec arch_from_json(const json& j) {
    ArchSpec a;
    a.image_dim = j.at("image_dim").get<std::size_t>();
    a.g_hidden = j.at("g_hidden").get<std::size_t>();
    a.latent_dim = j.at("latent_dim").get<std::size_t>();
    a.d_hidden1 = j.at("d_hidden1").get<std::size_t>();
    a.d_hidden2 = j.at("d_hidden2").get<std::size_t>();
    a.c_hidden = j.at("c_hidden").get<std::size_t>();
    a.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
    return a;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
    const AnclafModel& m = ckpt.model;
    const ParamSet params = m.all_params();
    json table = json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : params.entries()) {
        table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.size();
    }
    json header{{"format_version", kCheckpointFormatVersion},
                {"arch", arch_to_json(m.arch)},
                {"variant", to_string(m.variant)},
                {"attention_mode", to_string(m.options.attention_mode)},
                {"divide_by_k", m.options.divide_by_k},
                {"hard_quadrant", m.options.hard_quadrant},
                {"sequence_length", m.options.sequence_length},
                {"stage", ckpt.stage},
                {"fold", ckpt.fold},
                {"validation_subjects", ckpt.validation_subjects},
                {"config", config_to_json(ckpt.config)},
                {"rng_state", ckpt.rng_state},
                {"parameter_count", offset},
                {"params", table}};
    const std::string text = header.dump();
    std::string out(kCheckpointMagic, 8);
    put_u64(out, text.size());
    out += text;
    out.reserve(out.size() + offset * 8);
    for (const auto& e : params.entries())
        for (double v : e.second.data()) put_f64(out, v);
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    Reader r(bytes, "checkpoint");
    if (r.take(8) != std::string(kCheckpointMagic, 8)) throw FormatError("checkpoint: bad magic");
    const std::uint64_t header_len = r.u64();
    if (header_len > bytes.size()) throw FormatError("checkpoint: truncated file");
    json h;
    try {
        h = json::parse(r.take(header_len));
    } catch (const json::exception& e) {
        throw FormatError("checkpoint: corrupted header: " + std::string(e.what()));
    }
    try {
        const int version = h.at("format_version").get<int>();
        if (version != kCheckpointFormatVersion)
            throw FormatError("checkpoint: unsupported format_version " + std::to_string(version));
        Checkpoint c;
        ModelOptions opts;
        opts.attention_mode = attention_mode_from_string(h.at("attention_mode").get<std::string>());
        opts.divide_by_k = h.at("divide_by_k").get<bool>();
        opts.hard_quadrant = h.at("hard_quadrant").get<bool>();
        opts.sequence_length = h.at("sequence_length").get<std::size_t>();
        const Variant variant = variant_from_string(h.at("variant").get<std::string>());
        AnclafModel model = AnclafModel::create(arch_from_json(h.at("arch")), variant, opts, 0);
        model.options.sequence_length = opts.sequence_length;
        ParamSet params = model.all_params();
        const json& table = h.at("params");
        if (table.size() != params.size())
            throw FormatError("checkpoint: parameter table has " + std::to_string(table.size()) + " entries, model needs " +
                              std::to_string(params.size()));
        std::size_t i = 0;
        for (const auto& [name, t] : params.entries()) {
            const json& e = table.at(i++);
            if (e.at("name").get<std::string>() != name || e.at("shape").get<Shape>() != t.shape())
                throw FormatError("checkpoint: parameter " + e.at("name").get<std::string>() + " does not match model slot " + name);
        }
        for (auto& entry : params.entries()) {
            Tensor t = entry.second;
            for (double& v : t.data_mut()) v = r.f64();
        }
        if (!r.done()) throw FormatError("checkpoint: trailing bytes");
        c.model = std::move(model);
        c.config = config_from_json(h.at("config"));
        c.stage = h.at("stage").get<std::string>();
        c.fold = h.at("fold").get<int>();
        c.validation_subjects = h.at("validation_subjects").get<std::vector<std::uint32_t>>();
        c.rng_state = h.at("rng_state").get<std::string>();
        return c;
    } catch (const json::exception& e) {
        throw FormatError("checkpoint: corrupted header: " + std::string(e.what()));
    } catch (const ConfigError& e) {
        throw FormatError("checkpoint: " + std::string(e.what()));
    } catch (const std::invalid_argument& e) {
        throw FormatError("checkpoint: " + std::string(e.what()));
    }
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) { write_file_atomic(path, encode_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path.string());
    return decode_checkpoint(read_file(path));
}

void load_parameters(AnclafModel& target, const AnclafModel& source) {
    const ParamSet src = source.all_params();
    ParamSet dst = target.all_params();
    for (auto& [name, t] : dst.entries()) {
        const Tensor* s = src.find(name);
        if (!s) throw DimensionError("load_parameters: source has no parameter " + name);
        if (s->shape() != t.shape())
            throw DimensionError("load_parameters: " + name + " is " + shape_str(s->shape()) + " in source, " +
                                 shape_str(t.shape()) + " in target");
        Tensor dst_t = t;
        std::copy(s->data().begin(), s->data().end(), dst_t.data_mut().begin());
    }
}

// ---- reports ---------------------------------------------------------------

namespace {

json dim_to_json(const DimMetrics& m) {
    return json{{"rmse", m.rmse}, {"cor", m.cor}, {"ccc", m.ccc}, {"icc", m.icc}};
}

DimMetrics dim_from_json(const json& j) {
    return {j.at("rmse").get<double>(), j.at("cor").get<double>(), j.at("ccc").get<double>(), j.at("icc").get<double>()};
}

}  // namespace

json report_to_json(const MetricReport& r) {
    return json{{"model", r.model},
                {"fold", r.fold},
                {"sequence_length", r.sequence_length},
                {"valence", dim_to_json(r.valence)},
                {"arousal", dim_to_json(r.arousal)},
                {"average", dim_to_json(r.average)}};
}

MetricReport report_from_json(const json& j) {
    MetricReport r;
    r.model = j.at("model").get<std::string>();
    r.fold = j.at("fold").get<int>();
    r.sequence_length = j.at("sequence_length").get<std::size_t>();
    r.valence = dim_from_json(j.at("valence"));
    r.arousal = dim_from_json(j.at("arousal"));
    r.average = dim_from_json(j.at("average"));
    return r;
}

void write_report(const fs::path& path, const MetricReport& report) {
    write_file_atomic(path, report_to_json(report).dump(2) + "\n");
}

void write_reports(const fs::path& path, const std::vector<MetricReport>& reports) {
    json arr = json::array();
    for (const MetricReport& r : reports) arr.push_back(report_to_json(r));
    write_file_atomic(path, arr.dump(2) + "\n");
}

// ---- traces ----------------------------------------------------------------

std::string trace_header(std::size_t attention_columns) {
    std::string h = "subject_id,frame_index,v_true,a_true,v_pred,a_pred,quadrant_true,quadrant_pred";
    for (std::size_t i = 1; i <= attention_columns; ++i) h += ",att_w_" + std::to_string(i);
    return h;
}

std::string encode_trace_csv(const std::vector<TraceRow>& rows, std::size_t attention_columns) {
    std::string out = trace_header(attention_columns) + "\n";
    for (const TraceRow& r : rows) {
        if (r.attention.size() > attention_columns)
            throw DimensionError("trace row has " + std::to_string(r.attention.size()) + " weights for " +
                                 std::to_string(attention_columns) + " columns");
        out += std::to_string(r.subject_id) + ',' + std::to_string(r.frame_index) + ',' + fmt17(r.v_true) + ',' +
               fmt17(r.a_true) + ',' + fmt17(r.v_pred) + ',' + fmt17(r.a_pred) + ',' + std::to_string(r.quadrant_true) +
               ',' + std::to_string(r.quadrant_pred);
        for (std::size_t i = 0; i < attention_columns; ++i) {
            out += ',';
            if (i < r.attention.size()) out += fmt17(r.attention[i]);
        }
        out += '\n';
    }
    return out;
}

std::vector<TraceRow> decode_trace_csv(const std::string& text, std::size_t* attention_columns) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("trace: missing header");
    std::size_t cols = 0;
    for (char ch : line) cols += ch == ',';
    ++cols;
    if (cols < 8) throw FormatError("trace: short header");
    const std::size_t att = cols - 8;
    if (line != trace_header(att)) throw FormatError("trace: unexpected header: " + line);
    if (attention_columns) *attention_columns = att;
    std::vector<TraceRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (cells.size() != cols) throw FormatError("trace: row has " + std::to_string(cells.size()) + " cells");
        TraceRow r;
        r.subject_id = static_cast<std::uint32_t>(std::stoul(cells[0]));
        r.frame_index = static_cast<std::uint32_t>(std::stoul(cells[1]));
        r.v_true = std::stod(cells[2]);
        r.a_true = std::stod(cells[3]);
        r.v_pred = std::stod(cells[4]);
        r.a_pred = std::stod(cells[5]);
        r.quadrant_true = std::stoi(cells[6]);
        r.quadrant_pred = std::stoi(cells[7]);
        for (std::size_t i = 8; i < cols && !cells[i].empty(); ++i) r.attention.push_back(std::stod(cells[i]));
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---- feature cache ---------------------------------------------------------

void write_feature_cache(const fs::path& path, const FeatureCache& cache) {
    std::string out(kFeatureMagic, 8);
    const std::size_t dim = cache.empty() ? 0 : cache.begin()->second.size();
    put_u64(out, cache.size());
    put_u32(out, static_cast<std::uint32_t>(dim));
    for (const auto& [key, values] : cache) {
        if (values.size() != dim) throw DimensionError("feature cache: inconsistent feature widths");
        put_u32(out, key.subject_id);
        put_u32(out, key.frame_index);
        for (double v : values) put_f64(out, v);
    }
    write_file_atomic(path, out);
}

FeatureCache read_feature_cache(const fs::path& path) {
    const std::string bytes = read_file(path);
    Reader r(bytes, "feature cache");
    if (r.take(8) != std::string(kFeatureMagic, 8)) throw FormatError("feature cache: bad magic");
    const std::uint64_t count = r.u64();
    const std::uint32_t dim = r.u32();
    FeatureCache cache;
    for (std::uint64_t i = 0; i < count; ++i) {
        FeatureKey key{r.u32(), r.u32()};
        std::vector<double> v(dim);
        for (double& x : v) x = r.f64();
        cache.emplace(key, std::move(v));
    }
    if (!r.done()) throw FormatError("feature cache: trailing bytes");
    return cache;
}

}  // namespace anclaf

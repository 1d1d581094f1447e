#include "anclaf/model.hpp"

#include <algorithm>

#include "anclaf/synth.hpp"

namespace anclaf {

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Tensor copy_param(const Tensor& t) {
    Tensor c = t.detach();
    c.set_requires_grad(true);
    return c;
}

AffineLayer clone_layer(const AffineLayer& l) { return {copy_param(l.weight), copy_param(l.bias), l.activation}; }

DenseStack clone_stack(const DenseStack& s) {
    DenseStack out;
    for (const AffineLayer& l : s.layers) out.layers.push_back(clone_layer(l));
    return out;
}

CombinerNet clone_combiner(const CombinerNet& c) {
    CombinerNet out;
    out.variant = c.variant;
    if (!c.encoder.layers.empty()) out.encoder = clone_stack(c.encoder);
    if (c.lstm.weight.defined()) out.lstm = {copy_param(c.lstm.weight), copy_param(c.lstm.bias)};
    if (c.attention.weight.defined()) out.attention = {copy_param(c.attention.weight), c.attention.mode};
    out.head = clone_layer(c.head);
    return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) { return mix(seed, stream); }

std::string to_string(Variant v) {
    switch (v) {
        case Variant::frame: return "frame";
        case Variant::sequence: return "sequence";
        case Variant::sequence_attention: return "sequence_attention";
    }
    return "frame";
}

Variant variant_from_string(const std::string& s) {
    if (s == "frame") return Variant::frame;
    if (s == "sequence") return Variant::sequence;
    if (s == "sequence_attention") return Variant::sequence_attention;
    throw std::invalid_argument("unknown model variant: " + s);
}

std::size_t CombinerNet::input_dim(const ArchSpec& arch) const {
    return variant == Variant::sequence_attention ? arch.zq_dim() + 2 * arch.lstm_hidden : arch.zq_dim();
}

CombinerNet make_combiner(const ArchSpec& arch, Variant variant, const ModelOptions& options, std::uint64_t seed) {
    ParamInit init(seed);
    CombinerNet c;
    c.variant = variant;
    switch (variant) {
        case Variant::frame:
            c.encoder = DenseStack::create(init, {arch.zq_dim(), arch.c_hidden}, Activation::tanh, Activation::tanh);
            c.head = AffineLayer::create(init, arch.c_hidden, 2, Activation::none);
            break;
        case Variant::sequence:
            c.lstm = LstmCell::create(init, arch.zq_dim(), arch.lstm_hidden);
            c.head = AffineLayer::create(init, arch.lstm_hidden, 2, Activation::none);
            break;
        case Variant::sequence_attention:
            c.lstm = LstmCell::create(init, arch.zq_dim() + 2 * arch.lstm_hidden, arch.lstm_hidden);
            c.attention = AttentionParams::create(init, arch.lstm_hidden, options.attention_mode);
            c.head = AffineLayer::create(init, arch.lstm_hidden, 2, Activation::none);
            break;
    }
    return c;
}

AnclafModel AnclafModel::create(const ArchSpec& arch, Variant variant, const ModelOptions& options,
                                std::uint64_t seed) {
    AnclafModel m;
    m.arch = arch;
    m.variant = variant;
    m.options = options;
    if (variant == Variant::frame) m.options.sequence_length = 1;
    {
        ParamInit init(mix(seed, 1));
        m.generator.encoder = DenseStack::create(init, {arch.image_dim, arch.g_hidden, arch.latent_dim},
                                                 Activation::tanh, Activation::tanh);
        m.generator.decoder = DenseStack::create(init, {arch.latent_dim, arch.g_hidden, arch.image_dim},
                                                 Activation::tanh, Activation::sigmoid);
    }
    {
        ParamInit init(mix(seed, 2));
        m.discriminator.encoder = DenseStack::create(init, {arch.image_dim, arch.d_hidden1, arch.d_hidden2},
                                                     Activation::tanh, Activation::tanh);
        m.discriminator.head_realfake = AffineLayer::create(init, arch.d_hidden2, 1, Activation::sigmoid);
        m.discriminator.head_quadrant = AffineLayer::create(init, arch.d_hidden2, 4, Activation::none);
    }
    m.combiner = make_combiner(arch, variant, m.options, mix(seed, 3));
    return m;
}

AnclafModel AnclafModel::clone() const {
    AnclafModel m;
    m.arch = arch;
    m.variant = variant;
    m.options = options;
    m.generator = {clone_stack(generator.encoder), clone_stack(generator.decoder)};
    m.discriminator = {clone_stack(discriminator.encoder), clone_layer(discriminator.head_realfake),
                       clone_layer(discriminator.head_quadrant)};
    m.combiner = clone_combiner(combiner);
    return m;
}

ParamSet AnclafModel::generator_params() const {
    ParamSet s;
    generator.encoder.register_params("encoder.", s);
    generator.decoder.register_params("decoder.", s);
    return s;
}

ParamSet AnclafModel::discriminator_params() const {
    ParamSet s;
    discriminator.encoder.register_params("encoder.", s);
    discriminator.head_realfake.register_params("realfake.", s);
    discriminator.head_quadrant.register_params("quadrant.", s);
    return s;
}

ParamSet AnclafModel::combiner_params() const {
    ParamSet s;
    if (combiner.variant == Variant::frame) combiner.encoder.register_params("encoder.", s);
    else combiner.lstm.register_params("lstm.", s);
    if (combiner.variant == Variant::sequence_attention) combiner.attention.register_params("attention.", s);
    combiner.head.register_params("head.", s);
    return s;
}

ParamSet AnclafModel::all_params() const {
    ParamSet s;
    s.append("G.", generator_params());
    s.append("D.", discriminator_params());
    s.append("C.", combiner_params());
    return s;
}

std::string AnclafModel::display_name() const {
    switch (variant) {
        case Variant::frame: return "ANCLaF";
        case Variant::sequence: return "ANCLaF-S-" + std::to_string(options.sequence_length);
        case Variant::sequence_attention: return "ANCLaF-SA-" + std::to_string(options.sequence_length);
    }
    return "ANCLaF";
}

AnclafModel make_sequence_model(const AnclafModel& base, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("sequence length must be positive");
    AnclafModel m = base.clone();
    m.variant = Variant::sequence;
    m.options.sequence_length = n;
    m.combiner = make_combiner(m.arch, Variant::sequence, m.options, seed);
    return m;
}

AnclafModel with_sequence_length(const AnclafModel& model, std::size_t n) {
    if (n == 0) throw std::invalid_argument("sequence length must be positive");
    if (model.variant == Variant::frame) throw std::invalid_argument("frame models have no sequence length");
    AnclafModel m = model.clone();
    m.options.sequence_length = n;
    return m;
}

AnclafModel to_attention_model(const AnclafModel& sequence_model, std::uint64_t seed) {
    if (sequence_model.variant != Variant::sequence)
        throw std::invalid_argument("attention widening expects a sequence model, got " +
                                    to_string(sequence_model.variant));
    AnclafModel m = sequence_model.clone();
    m.variant = Variant::sequence_attention;
    m.combiner.variant = Variant::sequence_attention;
    m.combiner.lstm = sequence_model.combiner.lstm.widened_front(2 * m.arch.lstm_hidden);
    ParamInit init(seed);
    m.combiner.attention = AttentionParams::create(init, m.arch.lstm_hidden, m.options.attention_mode);
    return m;
}

// ---- forwards --------------------------------------------------------------

GeneratorOutput generator_forward(const GeneratorNet& g, const Tensor& image, bool distort_input,
                                  std::mt19937_64* rng) {
    if (image.shape().back() != g.encoder.in_dim())
        throw DimensionError("generator_forward: image " + shape_str(image.shape()) + " vs encoder input " +
                             std::to_string(g.encoder.in_dim()));
    Tensor input = image;
    if (distort_input) {
        if (!rng) throw std::invalid_argument("generator_forward: distortion requires an rng");
        const std::size_t px = image.shape().back();
        const std::size_t rows = image.size() / px;
        std::vector<double> noisy(image.size());
        auto src = image.data();
        for (std::size_t r = 0; r < rows; ++r) {
            Image row(src.begin() + static_cast<long>(r * px), src.begin() + static_cast<long>((r + 1) * px));
            Image d = distort(row, *rng);
            std::copy(d.begin(), d.end(), noisy.begin() + static_cast<long>(r * px));
        }
        input = Tensor(image.shape(), std::move(noisy));
    }
    Tensor z = g.encoder.forward(input);
    Tensor recon = g.decoder.forward(z);
    return {recon, z};
}

DiscriminatorOutput discriminator_forward(const DiscriminatorNet& d, const Tensor& image) {
    if (image.shape().back() != d.encoder.in_dim())
        throw DimensionError("discriminator_forward: image " + shape_str(image.shape()) + " vs encoder input " +
                             std::to_string(d.encoder.in_dim()));
    const Tensor h = d.encoder.forward(image);
    const Tensor p = affine_forward(d.head_realfake, h);
    const Tensor logits = affine_forward(d.head_quadrant, h);
    return {p, logits, softmax(logits)};
}

LatentFeature make_zq(const Tensor& z, const Tensor& q_probs) {
    return {z, q_probs, concat({z, q_probs}, -1)};
}

LatentFeature split_zq(const Tensor& zq, std::size_t latent_dim) {
    const auto parts = split(zq, -1, {latent_dim, zq.shape().back() - latent_dim});
    return {parts[0], parts[1], zq};
}

LatentFeature extract_latent(const AnclafModel& model, const Tensor& image) {
    const GeneratorOutput g = generator_forward(model.generator, image);
    const DiscriminatorOutput d = discriminator_forward(model.discriminator, g.reconstruction);
    Tensor q = d.q_probs;
    if (model.options.hard_quadrant) {
        std::vector<double> onehot(q.size(), 0.0);
        auto src = q.data();
        for (std::size_t r = 0; r < q.size() / 4; ++r) {
            const auto row = src.subspan(r * 4, 4);
            onehot[r * 4 + static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin())] = 1.0;
        }
        q = Tensor(q.shape(), std::move(onehot));
    }
    return make_zq(g.latent, q);
}

Tensor combiner_frame_forward(const CombinerNet& c, const Tensor& zq) {
    if (c.variant != Variant::frame) throw std::invalid_argument("combiner_frame_forward: not a frame combiner");
    return affine_forward(c.head, c.encoder.forward(zq));
}

FrameOutput anclaf_forward(const AnclafModel& model, const Tensor& image) {
    if (model.variant != Variant::frame)
        throw std::invalid_argument("anclaf_forward: model variant is " + to_string(model.variant));
    LatentFeature f = extract_latent(model, image);
    Tensor pred = combiner_frame_forward(model.combiner, f.zq);
    return {pred, f};
}

CombinerStream::CombinerStream(const AnclafModel& model, std::size_t batch)
    : model_(&model),
      batch_(batch),
      state_(LstmState::zeros(model.arch.lstm_hidden, batch)),
      window_(model.options.sequence_length) {
    if (model.variant == Variant::frame) throw std::invalid_argument("CombinerStream: frame model");
}

void CombinerStream::reset() {
    state_ = LstmState::zeros(model_->arch.lstm_hidden, batch_);
    window_.clear();
}

CombinerStream::Step CombinerStream::step(const Tensor& zq) {
    const CombinerNet& c = model_->combiner;
    if (zq.shape().back() != model_->arch.zq_dim())
        throw DimensionError("combiner step: zq " + shape_str(zq.shape()) + " vs expected width " +
                             std::to_string(model_->arch.zq_dim()));
    Step out;
    Tensor input = zq;
    if (c.variant == Variant::sequence_attention) {
        AugmentedInput aug = attend_and_augment(c.attention, zq, state_, window_, model_->options.divide_by_k);
        input = aug.input;
        out.weights = aug.weights;
    }
    auto s = lstm_step(c.lstm, input, state_);
    state_ = s.state;
    if (c.variant == Variant::sequence_attention) window_.push(combined_state(state_));
    out.prediction = affine_forward(c.head, s.output);
    out.state = state_;
    return out;
}

namespace {

SequenceOutput run_sequence(const AnclafModel& model, const std::vector<Tensor>& zq_sequence, std::size_t n) {
    if (zq_sequence.empty()) throw DimensionError("sequence forward: empty sequence");
    if (zq_sequence.size() != n || n != model.options.sequence_length)
        throw DimensionError("sequence forward: " + std::to_string(zq_sequence.size()) + " frames for n=" +
                             std::to_string(n) + " (model configured for " +
                             std::to_string(model.options.sequence_length) + ")");
    const std::size_t batch = zq_sequence[0].rank() == 2 ? zq_sequence[0].dim(0) : 0;
    CombinerStream stream(model, batch);
    SequenceOutput out;
    for (const Tensor& zq : zq_sequence) {
        auto s = stream.step(zq);
        out.predictions.push_back(s.prediction);
        out.states.push_back(s.state);
        out.attention_weights.push_back(s.weights);
    }
    return out;
}

}  // namespace

SequenceOutput anclaf_s_forward(const AnclafModel& model, const std::vector<Tensor>& zq_sequence, std::size_t n) {
    if (model.variant != Variant::sequence)
        throw std::invalid_argument("anclaf_s_forward: model variant is " + to_string(model.variant));
    return run_sequence(model, zq_sequence, n);
}

SequenceOutput anclaf_sa_forward(const AnclafModel& model, const std::vector<Tensor>& zq_sequence, std::size_t n) {
    if (model.variant != Variant::sequence_attention)
        throw std::invalid_argument("anclaf_sa_forward: model variant is " + to_string(model.variant));
    return run_sequence(model, zq_sequence, n);
}

SequenceOutput sequence_forward(const AnclafModel& model, const std::vector<Tensor>& zq_sequence) {
    return model.variant == Variant::sequence_attention
               ? anclaf_sa_forward(model, zq_sequence, model.options.sequence_length)
               : anclaf_s_forward(model, zq_sequence, model.options.sequence_length);
}

AffectLabel to_label(std::span<const double> two_values) {
    if (two_values.size() != 2) throw DimensionError("to_label: expected 2 values");
    return {two_values[0], two_values[1]};
}

}  // namespace anclaf

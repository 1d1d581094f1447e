#pragma once
// Generator / Discriminator / Combiner assembly for the frame-wise (ANCLaF),
// sequence (ANCLaF-S-n) and sequence-attention (ANCLaF-SA-n) variants.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "anclaf/attention.hpp"
#include "anclaf/layers.hpp"
#include "anclaf/metrics.hpp"

namespace anclaf {

// Independent seed stream `stream` derived from `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct ArchSpec {
    std::size_t image_dim = 256;
    std::size_t g_hidden = 128;
    std::size_t latent_dim = 64;
    std::size_t d_hidden1 = 64;
    std::size_t d_hidden2 = 32;
    std::size_t c_hidden = 32;     // frame combiner
    std::size_t lstm_hidden = 32;  // sequence combiners

    std::size_t zq_dim() const { return latent_dim + 4; }
    bool operator==(const ArchSpec&) const = default;
};

enum class Variant { frame, sequence, sequence_attention };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct ModelOptions {
    AttentionMode attention_mode = AttentionMode::concat;
    bool divide_by_k = true;       // context divided by the window count
    bool hard_quadrant = false;    // one-hot argmax instead of softmax in ZQ
    std::size_t sequence_length = 1;
};

struct GeneratorNet {
    EncoderStack encoder;
    DecoderStack decoder;
};

struct DiscriminatorNet {
    EncoderStack encoder;
    AffineLayer head_realfake;  // 1 sigmoid unit
    AffineLayer head_quadrant;  // 4 logits
};

struct CombinerNet {
    Variant variant = Variant::frame;
    EncoderStack encoder;        // frame variant
    LstmCell lstm;               // sequence variants
    AttentionParams attention;   // attention variant
    AffineLayer head;            // 2 linear outputs (V, A)

    std::size_t input_dim(const ArchSpec& arch) const;
};

struct LatentFeature {
    Tensor z;   // [latent] or [batch x latent]
    Tensor q;   // [4] or [batch x 4]
    Tensor zq;  // concat(z, q)
};

struct AnclafModel {
    ArchSpec arch;
    Variant variant = Variant::frame;
    ModelOptions options;
    GeneratorNet generator;
    DiscriminatorNet discriminator;
    CombinerNet combiner;

    static AnclafModel create(const ArchSpec& arch, Variant variant, const ModelOptions& options,
                              std::uint64_t seed);

    // Deep copy; the result shares no parameter storage with *this.
    AnclafModel clone() const;

    ParamSet generator_params() const;
    ParamSet discriminator_params() const;
    ParamSet combiner_params() const;
    // "G.", "D.", "C." prefixed union.
    ParamSet all_params() const;

    std::string display_name() const;  // ANCLaF, ANCLaF-S-8, ANCLaF-SA-8
};

CombinerNet make_combiner(const ArchSpec& arch, Variant variant, const ModelOptions& options, std::uint64_t seed);

// Copy of `base` (G, D kept) with a freshly initialized sequence combiner.
AnclafModel make_sequence_model(const AnclafModel& base, std::size_t n, std::uint64_t seed);

// Copy with a new sequence length; every parameter carries over unchanged.
AnclafModel with_sequence_length(const AnclafModel& model, std::size_t n);

// Sequence model -> attention model: LSTM input widened by 2h zero columns in
// front of the ZQ columns, fresh attention parameters.
AnclafModel to_attention_model(const AnclafModel& sequence_model, std::uint64_t seed);

struct GeneratorOutput {
    Tensor reconstruction;
    Tensor latent;
};

// With `distort`, each image row is corrupted by the synthetic distortion
// operator (consuming `rng`) before encoding.
GeneratorOutput generator_forward(const GeneratorNet& g, const Tensor& image, bool distort = false,
                                  std::mt19937_64* rng = nullptr);

struct DiscriminatorOutput {
    Tensor p_real;    // [1] or [batch x 1]
    Tensor q_logits;  // [4] or [batch x 4]
    Tensor q_probs;
};

DiscriminatorOutput discriminator_forward(const DiscriminatorNet& d, const Tensor& image);

LatentFeature make_zq(const Tensor& z, const Tensor& q_probs);
LatentFeature split_zq(const Tensor& zq, std::size_t latent_dim);

// z from the clean image, q from D applied to the reconstruction.
LatentFeature extract_latent(const AnclafModel& model, const Tensor& image);

Tensor combiner_frame_forward(const CombinerNet& c, const Tensor& zq);

struct FrameOutput {
    Tensor prediction;  // [2] or [batch x 2]
    LatentFeature trace;
};

FrameOutput anclaf_forward(const AnclafModel& model, const Tensor& image);

struct SequenceOutput {
    std::vector<Tensor> predictions;        // per frame, [2] or [batch x 2]
    std::vector<LstmState> states;          // after each frame
    std::vector<Tensor> attention_weights;  // per frame; undefined for the first
};

// Carries LSTM state (and, for the attention variant, a window capped at the
// model's sequence length) across calls to step().
class CombinerStream {
public:
    CombinerStream(const AnclafModel& model, std::size_t batch = 0);

    struct Step {
        Tensor prediction;
        LstmState state;
        Tensor weights;
    };

    Step step(const Tensor& zq);
    void reset();

private:
    const AnclafModel* model_;
    std::size_t batch_;
    LstmState state_;
    StateWindow window_;
};

SequenceOutput anclaf_s_forward(const AnclafModel& model, const std::vector<Tensor>& zq_sequence, std::size_t n);
SequenceOutput anclaf_sa_forward(const AnclafModel& model, const std::vector<Tensor>& zq_sequence, std::size_t n);

// Dispatches on the model variant (sequence or attention).
SequenceOutput sequence_forward(const AnclafModel& model, const std::vector<Tensor>& zq_sequence);

AffectLabel to_label(std::span<const double> two_values);

}  // namespace anclaf

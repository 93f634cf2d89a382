#pragma once

#include "ctxmix/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace ctxmix {

using TokenId = std::int32_t;

enum class ModelKind { EncoderCtc, EncoderDecoder };

const char* to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

// Whisper-style processors pad every clip to a fixed length, so the
// frame/time grid is a constant of the model rather than of the clip.
struct FixedDuration {
    double seconds = 30.0;
    std::size_t frames = 1500;

    friend bool operator==(const FixedDuration&, const FixedDuration&) = default;
};

struct ModelSpec {
    ModelKind kind = ModelKind::EncoderCtc;
    std::size_t encoder_layers = 1;
    std::size_t decoder_layers = 0;
    std::size_t d_model = 16;
    std::size_t n_heads = 1;
    std::size_t d_ff = 32;
    std::size_t vocab_size = 2;
    TokenId blank_id = 0;
    TokenId bos_id = 0;
    TokenId eos_id = 0;
    TokenId unk_id = 0;
    std::size_t max_frames = 1500;
    std::size_t max_tokens = 64;
    double frame_seconds = 0.02;
    std::optional<FixedDuration> fixed_duration;
    bool final_norm = false;

    std::size_t head_dim() const { return d_model / n_heads; }
    bool has_decoder() const { return kind == ModelKind::EncoderDecoder; }
    void validate() const;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct NormWeights {
    Tensor gain; // [d]
    Tensor bias; // [d]
};

// Fused projections; head h owns columns [h*d_h, (h+1)*d_h) of W_Q/W_K/W_V
// and rows [h*d_h, (h+1)*d_h) of W_O.
struct AttentionWeights {
    Tensor W_Q, b_Q;
    Tensor W_K, b_K;
    Tensor W_V, b_V;
    Tensor W_O, b_O;

    // Per-head slice of the output projection, [d_h x d].
    Tensor output_head(std::size_t head, std::size_t head_dim) const;
};

struct FeedForwardWeights {
    Tensor W_1, b_1; // [d x d_ff], [d_ff]
    Tensor W_2, b_2; // [d_ff x d], [d]
};

struct EncoderLayerWeights {
    NormWeights ln_mha;
    AttentionWeights mha;
    NormWeights ln_ffn;
    FeedForwardWeights ffn;
};

struct DecoderLayerWeights {
    NormWeights ln_self;
    AttentionWeights self_attn;
    NormWeights ln_cross;
    AttentionWeights cross_attn;
    NormWeights ln_ffn;
    FeedForwardWeights ffn;
};

struct WeightSet {
    std::vector<EncoderLayerWeights> encoder;
    std::vector<DecoderLayerWeights> decoder;
    std::optional<NormWeights> encoder_final;
    std::optional<NormWeights> decoder_final;
    Tensor ctc_W, ctc_b;             // encoder-ctc: [d x V], [V]
    Tensor token_embedding;          // encoder-decoder: [V x d]
    Tensor position_embedding;       // encoder-decoder: [max_tokens x d]
    Tensor head_W, head_b;           // encoder-decoder: [d x V], [V]

    // Flat name -> tensor view mirroring the on-disk parameter names.
    std::vector<std::pair<std::string, const Tensor*>> named(const ModelSpec& spec) const;
    std::vector<std::pair<std::string, Tensor*>> named_mut(const ModelSpec& spec);
};

// All-zero weights (LN gains 1) shaped for spec.
WeightSet zero_weights(const ModelSpec& spec);
void check_weight_shapes(const ModelSpec& spec, const WeightSet& weights);

class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> tokens);

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::string& token(TokenId id) const;
    std::optional<TokenId> find(const std::string& token) const;
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
};

struct Model {
    ModelSpec spec;
    WeightSet weights;
    Vocabulary vocab;
};

// One directory: model.txt (key = value spec), vocab.txt, and one CTXT file
// per parameter named after the parameter (e.g. enc.0.W_Q.ctxt).
void save_model(const std::filesystem::path& dir, const Model& model);
Model load_model(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Forward passes and capture.

// Per attention sublayer, per head: weights alpha [Tq x Tk] and values v [Tk x d_h].
struct AttentionCapture {
    std::vector<Tensor> weights;
    std::vector<Tensor> values;
};

struct LayerCapture {
    Tensor input;                                  // x, [T x d]
    AttentionCapture self_attention;
    std::optional<AttentionCapture> cross_attention; // decoder layers only
    Tensor output;                                 // x~, [T x d]
};

struct ForwardCapture {
    std::vector<LayerCapture> layers;
    Tensor output; // final representation after the optional final norm
    Tensor logits; // CTC logits per frame, or decoder logits per position
};

// Positions whose value vectors are zeroed (all heads) in one attention sublayer.
using ValueMask = std::vector<bool>;

enum class Sublayer { SelfAttention, CrossAttention };

struct ValueIntervention {
    std::size_t layer = 0;
    Sublayer sublayer = Sublayer::SelfAttention;
    ValueMask zeroed;
};

Tensor encoder_layer_forward(const Tensor& x, const EncoderLayerWeights& w, std::size_t n_heads,
                             LayerCapture* capture = nullptr, const ValueMask* zero_values = nullptr);

Tensor decoder_layer_forward(const Tensor& y, const Tensor& enc_out, const DecoderLayerWeights& w,
                             std::size_t n_heads, LayerCapture* capture = nullptr,
                             const ValueMask* zero_self_values = nullptr,
                             const ValueMask* zero_cross_values = nullptr);

ForwardCapture encoder_forward(const Model& model, const Tensor& frames,
                               const ValueIntervention* intervention = nullptr);

// Decoder pass over a full token prefix (no caching). logits are [S x V].
ForwardCapture decoder_forward(const Model& model, std::span<const TokenId> tokens, const Tensor& enc_out,
                               const ValueIntervention* intervention = nullptr);

std::vector<TokenId> ctc_decode_greedy(const Tensor& logits, TokenId blank_id);
std::vector<TokenId> argmax_rows(const Tensor& logits);

struct GenerationResult {
    std::vector<TokenId> tokens;       // generated, excluding bos and eos
    bool truncated = false;            // max_steps reached without eos
    ForwardCapture encoder;
    // steps[k] is the decoder pass whose last position predicted output token k
    // (input = bos + tokens[0..k)). The final eos-emitting step is included.
    std::vector<ForwardCapture> steps;
    std::vector<Tensor> step_logits;   // [V] per step
};

GenerationResult greedy_generate(const Model& model, const Tensor& frames, std::size_t max_steps);

// Same record as greedy_generate, but every step is fed the given tokens
// instead of the model's own argmax (one step per token plus a final step).
GenerationResult teacher_forced_generation(const Model& model, const Tensor& frames, std::span<const TokenId> tokens);

// Probability distribution over the vocabulary at the last position of a
// teacher-forced prefix (bos + prefix).
Tensor next_token_distribution(const Model& model, const Tensor& frames, std::span<const TokenId> prefix);

} // namespace ctxmix

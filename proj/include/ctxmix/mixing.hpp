#pragma once

#include "ctxmix/alignment.hpp"
#include "ctxmix/model.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ctxmix {

enum class Method { Attn, AttnNorm, ValueZeroing };
enum class Scope { WithinEncoder, WithinDecoder, Cross };

const char* to_string(Method method);
const char* to_string(Scope scope);
Method parse_method(const std::string& text); // attn | an | vz
Scope parse_scope(const std::string& text);   // within-encoder | within-decoder | cross

// Word-level context-mixing matrix S[i][j]: contribution of column word j to
// row word i at one layer.
struct MixingMap {
    std::size_t layer = 0; // 0-based index into the encoder or decoder stack
    Method method = Method::Attn;
    Scope scope = Scope::WithinEncoder;
    Tensor scores;                       // [rows x cols]
    std::vector<std::size_t> row_words;  // word index of each row unit
    std::vector<std::size_t> col_words;  // word index of each column unit
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    std::vector<bool> flagged;           // row had no positive mass when normalized
    std::optional<Tensor> raw_cosine;    // value zeroing: mean cosine similarity per cell
    bool normalized = false;
};

// ---------------------------------------------------------------------------
// Span-level primitives over a single attention sublayer capture.

// Mean of alpha over query frames in rows[i], key frames in cols[j], and heads.
Tensor attn_scores(const AttentionCapture& capture, std::span<const Span> rows, std::span<const Span> cols);

// Mean over the same index sets of || alpha^h_{n,m} v^h_m W_O^h ||.
Tensor attention_norm_scores(const AttentionCapture& capture, const AttentionWeights& weights,
                             std::span<const Span> rows, std::span<const Span> cols);

// Re-runs one layer with the value vectors at the masked key positions zeroed
// (all heads) and returns the full layer output.
using LayerRerun = std::function<Tensor(const ValueMask&)>;

struct ValueZeroingScores {
    Tensor dissimilarity; // mean of 1 - cos(x~_n, x~_n^{-j}) over n in rows[i]
    Tensor cosine;        // mean of cos(x~_n, x~_n^{-j})
};

ValueZeroingScores value_zeroing_scores(const Tensor& original_output, const LayerRerun& rerun, std::size_t n_keys,
                                        std::span<const Span> rows, std::span<const Span> cols);

// ---------------------------------------------------------------------------
// Utterance-level scoring.

// One forward pass (encoder, plus greedy generation for encoder-decoder
// models) together with the word units used to aggregate scores.
struct UtteranceRun {
    const Model* model = nullptr;
    Tensor frames;
    ForwardCapture encoder;
    std::optional<GenerationResult> generation;
    std::vector<std::string> words;
    std::vector<Span> frame_spans; // per word, encoder frames
    std::vector<Span> token_spans; // per word, generated-token indices (decoder)
};

// forced_tokens, when given, replaces free-running generation with a
// teacher-forced decoder pass over those tokens.
UtteranceRun run_utterance(const Model& model, const Tensor& frames, const UtteranceManifest& manifest,
                           const std::vector<TokenId>* forced_tokens = nullptr);

std::size_t layer_count(const ModelSpec& spec, Scope scope);
void check_scope(const ModelSpec& spec, Scope scope);

// Raw (unnormalized) word-level maps. Empty word lists mean "all words".
MixingMap attn_score(const UtteranceRun& run, std::size_t layer, Scope scope,
                     std::span<const std::size_t> row_words = {}, std::span<const std::size_t> col_words = {});
MixingMap attention_norm_score(const UtteranceRun& run, std::size_t layer, Scope scope,
                               std::span<const std::size_t> row_words = {},
                               std::span<const std::size_t> col_words = {});
MixingMap value_zeroing_score(const UtteranceRun& run, std::size_t layer, Scope scope,
                              std::span<const std::size_t> row_words = {},
                              std::span<const std::size_t> col_words = {});
MixingMap compute_map(const UtteranceRun& run, std::size_t layer, Method method, Scope scope,
                      std::span<const std::size_t> row_words = {}, std::span<const std::size_t> col_words = {});

// Clip negatives to zero, then scale each row to sum to one. All-zero rows stay
// zero and are flagged.
MixingMap normalize_rows(MixingMap map);

struct ScoreRequest {
    std::vector<Method> methods{Method::Attn, Method::AttnNorm, Method::ValueZeroing};
    std::vector<Scope> scopes{Scope::WithinEncoder};
    std::optional<std::vector<std::size_t>> layers; // 0-based; all layers when unset
    bool normalize = true;
};

// Maps ordered layer-major, then method, then scope.
std::vector<MixingMap> score_all(const UtteranceRun& run, const ScoreRequest& request);

} // namespace ctxmix

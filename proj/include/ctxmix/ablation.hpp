#pragma once

#include "ctxmix/alignment.hpp"
#include "ctxmix/dataset.hpp"
#include "ctxmix/model.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ctxmix {

// SC, BC, SBC, ST; SD silences a distractor (the first word that is neither
// cue nor target) as a locality control.
enum class AblationCondition { SilenceCue, BlankCue, SilenceAndBlankCue, SilenceTarget, SilenceDistractor };

const char* to_string(AblationCondition condition);
AblationCondition parse_condition(const std::string& text);
bool needs_decoder(AblationCondition condition);

// Silence is the all-zero frame vector unless one is given.
inline constexpr const char* kSilenceDescription = "zeros";

// Rows of frames inside span (clamped to the sequence) replaced by silence.
Tensor silence_frames(const Tensor& frames, const FrameSpan& span, std::span<const float> silence = {});

// Tokens at the given positions replaced by unk. Every position must come
// before target_step.
std::vector<TokenId> blank_token(std::span<const TokenId> tokens, std::span<const std::size_t> positions,
                                 TokenId unk_id, std::size_t target_step);

struct ConfidenceDrop {
    std::string id;
    AblationCondition condition = AblationCondition::SilenceCue;
    double baseline = 0.0;
    double ablated = 0.0;
    double drop = 0.0;
};

// Baseline transcription is computed once per utterance and shared by all
// conditions.
struct AblationBaseline {
    bool usable = false;
    std::string skip_reason;
    std::vector<TokenId> tokens;    // decoder: generated tokens
    std::size_t target_step = 0;    // decoder: index of the target's first token
    std::vector<std::size_t> frames; // CTC: non-blank frames of the target span
    std::vector<TokenId> frame_tokens;
    double probability = 0.0;
};

AblationBaseline ablation_baseline(const Model& model, const Utterance& utterance);

// Probability of the baseline target under the modified input. Decoder runs
// are teacher-forced on the baseline prefix.
double target_probability(const Model& model, const Utterance& utterance, const AblationBaseline& baseline,
                          const Tensor& frames, std::span<const TokenId> prefix);

// Throws a data error when the baseline transcription gets cue or target wrong.
ConfidenceDrop confidence_drop(const Model& model, const Utterance& utterance, AblationCondition condition);
ConfidenceDrop confidence_drop(const Model& model, const Utterance& utterance, AblationCondition condition,
                               const AblationBaseline& baseline);

struct ConditionSummary {
    AblationCondition condition;
    double mean_drop = 0.0;
    double mean_baseline = 0.0;
    double mean_ablated = 0.0;
    std::size_t count = 0;
};

struct AblationReport {
    std::vector<ConfidenceDrop> rows;      // utterance-major, then condition
    std::vector<ConditionSummary> summary; // one per condition, request order
    std::vector<std::string> skipped;
    std::string silence = kSilenceDescription;

    const ConditionSummary* find(AblationCondition condition) const;
};

AblationReport run_ablation(const Model& model, std::span<const Utterance> data,
                            std::span<const AblationCondition> conditions);

} // namespace ctxmix

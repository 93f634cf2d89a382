#include "ctxmix/ablation.hpp"

#include "ctxmix/error.hpp"
#include "ctxmix/mixing.hpp"
#include "ctxmix/parallel.hpp"

#include <algorithm>

namespace ctxmix {

const char* to_string(AblationCondition condition)
{
    switch (condition) {
    case AblationCondition::SilenceCue: return "SC";
    case AblationCondition::BlankCue: return "BC";
    case AblationCondition::SilenceAndBlankCue: return "SBC";
    case AblationCondition::SilenceTarget: return "ST";
    case AblationCondition::SilenceDistractor: return "SD";
    }
    return "?";
}

AblationCondition parse_condition(const std::string& text)
{
    for (auto c : {AblationCondition::SilenceCue, AblationCondition::BlankCue, AblationCondition::SilenceAndBlankCue,
                   AblationCondition::SilenceTarget, AblationCondition::SilenceDistractor}) {
        if (text == to_string(c)) return c;
    }
    fail(ErrorKind::Usage, "unknown ablation condition '" + text + "' (expected SC, BC, SBC, ST or SD)");
}

bool needs_decoder(AblationCondition condition)
{
    return condition == AblationCondition::BlankCue || condition == AblationCondition::SilenceAndBlankCue;
}

Tensor silence_frames(const Tensor& frames, const FrameSpan& span, std::span<const float> silence)
{
    check(frames.rank() == 2, ErrorKind::Dimension, "frames must be [T x d]");
    check(silence.empty() || silence.size() == frames.cols(), ErrorKind::Dimension,
          "silence vector length differs from frame width");
    Tensor out = frames;
    const std::size_t end = std::min(span.end, frames.rows());
    for (std::size_t t = span.begin; t < end; ++t) {
        auto row = out.row(t);
        if (silence.empty()) {
            std::fill(row.begin(), row.end(), 0.0f);
        } else {
            std::copy(silence.begin(), silence.end(), row.begin());
        }
    }
    return out;
}

std::vector<TokenId> blank_token(std::span<const TokenId> tokens, std::span<const std::size_t> positions,
                                 TokenId unk_id, std::size_t target_step)
{
    std::vector<TokenId> out(tokens.begin(), tokens.end());
    for (auto p : positions) {
        check(p < target_step && p < out.size(), ErrorKind::Usage,
              "blanked position " + std::to_string(p) + " is not in the prefix of step " +
                  std::to_string(target_step));
        out[p] = unk_id;
    }
    return out;
}

AblationBaseline ablation_baseline(const Model& model, const Utterance& utterance)
{
    const auto& m = utterance.manifest;
    AblationBaseline b;
    const UtteranceRun run = run_utterance(model, utterance.frames, m);
    if (!cue_and_target_correct(model, run, m)) {
        b.skip_reason = "cue or target transcribed incorrectly";
        return b;
    }
    if (model.spec.has_decoder()) {
        b.tokens = run.generation->tokens;
        b.target_step = m.dec_spans.at(m.target_idx).begin;
    } else {
        const Span span = run.frame_spans.at(m.target_idx);
        const auto path = argmax_rows(run.encoder.logits);
        for (std::size_t f = span.begin; f < span.end; ++f) {
            if (path[f] == model.spec.blank_id) continue;
            b.frames.push_back(f);
            b.frame_tokens.push_back(path[f]);
        }
        if (b.frames.empty()) {
            b.skip_reason = "target span emits only blanks";
            return b;
        }
    }
    const std::span<const TokenId> prefix(b.tokens.data(), b.target_step);
    b.probability = target_probability(model, utterance, b, utterance.frames, prefix);
    b.usable = true;
    return b;
}

double target_probability(const Model& model, const Utterance&, const AblationBaseline& baseline,
                          const Tensor& frames, std::span<const TokenId> prefix)
{
    if (model.spec.has_decoder()) {
        const Tensor p = next_token_distribution(model, frames, prefix);
        return p[static_cast<std::size_t>(baseline.tokens.at(baseline.target_step))];
    }
    const ForwardCapture cap = encoder_forward(model, frames);
    double sum = 0.0;
    for (std::size_t i = 0; i < baseline.frames.size(); ++i) {
        const auto row = cap.logits.row(baseline.frames[i]);
        const Tensor p = softmax_last(Tensor({row.size()}, std::vector<float>(row.begin(), row.end())));
        sum += p[static_cast<std::size_t>(baseline.frame_tokens[i])];
    }
    return sum / static_cast<double>(baseline.frames.size());
}

namespace {

std::size_t distractor_word(const UtteranceManifest& m)
{
    for (std::size_t i = 0; i < m.words.size(); ++i) {
        if (i != m.cue_idx && i != m.target_idx) return i;
    }
    fail(ErrorKind::Data, m.id + ": no distractor word besides cue and target");
}

} // namespace

ConfidenceDrop confidence_drop(const Model& model, const Utterance& utterance, AblationCondition condition,
                               const AblationBaseline& baseline)
{
    const auto& m = utterance.manifest;
    if (needs_decoder(condition) && !model.spec.has_decoder()) {
        fail(ErrorKind::Usage, std::string("condition ") + to_string(condition) + " requires an encoder-decoder model");
    }
    check(baseline.usable, ErrorKind::Data, m.id + ": " + baseline.skip_reason);

    const TimeGrid grid = time_grid_for(model.spec, utterance.frames.rows());
    auto span_of = [&](std::size_t word) { return word_to_frames(m.words.at(word), grid); };

    Tensor frames = utterance.frames;
    switch (condition) {
    case AblationCondition::SilenceCue:
    case AblationCondition::SilenceAndBlankCue: frames = silence_frames(frames, span_of(m.cue_idx)); break;
    case AblationCondition::SilenceTarget: frames = silence_frames(frames, span_of(m.target_idx)); break;
    case AblationCondition::SilenceDistractor: frames = silence_frames(frames, span_of(distractor_word(m))); break;
    case AblationCondition::BlankCue: break;
    }

    std::vector<TokenId> prefix(baseline.tokens.begin(), baseline.tokens.begin() + static_cast<std::ptrdiff_t>(baseline.target_step));
    if (needs_decoder(condition)) {
        const Span cue = m.dec_spans.at(m.cue_idx);
        std::vector<std::size_t> positions;
        for (std::size_t k = cue.begin; k < cue.end; ++k) positions.push_back(k);
        prefix = blank_token(prefix, positions, model.spec.unk_id, baseline.target_step);
    }

    ConfidenceDrop d;
    d.id = m.id;
    d.condition = condition;
    d.baseline = baseline.probability;
    d.ablated = target_probability(model, utterance, baseline, frames, prefix);
    d.drop = d.baseline - d.ablated;
    return d;
}

ConfidenceDrop confidence_drop(const Model& model, const Utterance& utterance, AblationCondition condition)
{
    return confidence_drop(model, utterance, condition, ablation_baseline(model, utterance));
}

const ConditionSummary* AblationReport::find(AblationCondition condition) const
{
    for (const auto& s : summary) {
        if (s.condition == condition) return &s;
    }
    return nullptr;
}

AblationReport run_ablation(const Model& model, std::span<const Utterance> data,
                            std::span<const AblationCondition> conditions)
{
    check(!conditions.empty(), ErrorKind::Usage, "no ablation conditions requested");
    for (auto c : conditions) {
        if (needs_decoder(c) && !model.spec.has_decoder()) {
            fail(ErrorKind::Usage, std::string("condition ") + to_string(c) + " requires an encoder-decoder model");
        }
    }
    struct PerUtterance {
        std::string skip;
        std::vector<ConfidenceDrop> drops;
    };
    std::vector<PerUtterance> results(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
        const AblationBaseline b = ablation_baseline(model, data[i]);
        if (!b.usable) {
            results[i].skip = b.skip_reason;
            return;
        }
        for (auto c : conditions) results[i].drops.push_back(confidence_drop(model, data[i], c, b));
    });

    AblationReport report;
    for (auto c : conditions) report.summary.push_back({c});
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!results[i].skip.empty()) {
            report.skipped.push_back(data[i].manifest.id + ": " + results[i].skip);
            continue;
        }
        for (std::size_t c = 0; c < conditions.size(); ++c) {
            const auto& d = results[i].drops[c];
            auto& s = report.summary[c];
            s.mean_drop += d.drop;
            s.mean_baseline += d.baseline;
            s.mean_ablated += d.ablated;
            ++s.count;
            report.rows.push_back(d);
        }
    }
    for (auto& s : report.summary) {
        if (s.count == 0) continue;
        const double n = static_cast<double>(s.count);
        s.mean_drop /= n;
        s.mean_baseline /= n;
        s.mean_ablated /= n;
    }
    return report;
}

} // namespace ctxmix

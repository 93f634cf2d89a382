#include "ctxmix/cue.hpp"

#include "ctxmix/error.hpp"
#include "ctxmix/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ctxmix {

CueVector build_cue_vector(std::size_t cue_word, std::span<const std::size_t> unit_words)
{
    check(!unit_words.empty(), ErrorKind::Data, "cue vector over an empty word list");
    CueVector c;
    c.mask.reserve(unit_words.size());
    bool found = false;
    for (auto w : unit_words) {
        const bool is_cue = w == cue_word;
        found = found || is_cue;
        c.mask.push_back(is_cue ? 1.0f : 0.0f);
    }
    check(found, ErrorKind::Data, "cue word " + std::to_string(cue_word) + " not among the row's word units");
    return c;
}

double cue_contribution(std::span<const float> row, const CueVector& cue)
{
    check(row.size() == cue.mask.size(), ErrorKind::Dimension, "score row and cue vector lengths differ");
    return dot(row, cue.mask);
}

const ProfileEntry* CueContributionProfile::find(std::size_t layer, Method method, Scope scope) const
{
    for (const auto& e : entries) {
        if (e.layer == layer && e.method == method && e.scope == scope) return &e;
    }
    return nullptr;
}

namespace {

struct Slot {
    std::size_t layer;
    Method method;
    Scope scope;
};

std::vector<Slot> profile_slots(const ModelSpec& spec, const ProfileOptions& options)
{
    std::size_t max_layers = 0;
    for (auto scope : options.scopes) {
        check_scope(spec, scope);
        max_layers = std::max(max_layers, layer_count(spec, scope));
    }
    std::vector<Slot> slots;
    for (std::size_t l = 0; l < max_layers; ++l) {
        for (auto method : options.methods) {
            for (auto scope : options.scopes) {
                if (l < layer_count(spec, scope)) slots.push_back({l, method, scope});
            }
        }
    }
    return slots;
}

} // namespace

std::vector<double> utterance_cue_contributions(const Model& model, const UtteranceRun& run,
                                                const UtteranceManifest& manifest, const ProfileOptions& options)
{
    const std::size_t target[] = {manifest.target_idx};
    std::vector<double> out;
    for (const auto& slot : profile_slots(model.spec, options)) {
        MixingMap map = normalize_rows(compute_map(run, slot.layer, slot.method, slot.scope, target));
        const CueVector cue = build_cue_vector(manifest.cue_idx, map.col_words);
        out.push_back(cue_contribution(map.scores.row(0), cue));
    }
    return out;
}

CueContributionProfile profile_dataset(const Model& model, std::span<const Utterance> data,
                                       const ProfileOptions& options)
{
    const auto slots = profile_slots(model.spec, options);
    struct Result {
        bool used = false;
        std::string skip_reason;
        std::vector<double> values;
    };
    std::vector<Result> results(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
        const auto& item = data[i];
        Result& r = results[i];
        if (options.only_ids &&
            std::find(options.only_ids->begin(), options.only_ids->end(), item.manifest.id) == options.only_ids->end()) {
            return;
        }
        std::optional<std::vector<TokenId>> forced;
        if (options.reference_model && model.spec.has_decoder()) {
            forced = greedy_generate(*options.reference_model, item.frames, model.spec.max_tokens - 1).tokens;
        }
        const UtteranceRun run = run_utterance(model, item.frames, item.manifest, forced ? &*forced : nullptr);
        if (options.check_transcription && !cue_and_target_correct(model, run, item.manifest)) {
            r.skip_reason = "cue or target transcribed incorrectly";
            return;
        }
        r.values = utterance_cue_contributions(model, run, item.manifest, options);
        r.used = true;
    });

    CueContributionProfile profile;
    profile.model_tag = options.model_tag;
    std::vector<std::vector<double>> per_slot(slots.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& r = results[i];
        if (!r.skip_reason.empty()) profile.skipped.push_back(data[i].manifest.id + ": " + r.skip_reason);
        if (!r.used) continue;
        profile.used_ids.push_back(data[i].manifest.id);
        for (std::size_t s = 0; s < slots.size(); ++s) per_slot[s].push_back(r.values[s]);
    }
    for (std::size_t s = 0; s < slots.size(); ++s) {
        ProfileEntry e{slots[s].layer, slots[s].method, slots[s].scope, 0.0, 0.0, per_slot[s].size(), options.model_tag};
        if (!per_slot[s].empty()) {
            double sum = 0.0;
            for (double v : per_slot[s]) sum += v;
            e.mean = sum / static_cast<double>(e.count);
            double var = 0.0;
            for (double v : per_slot[s]) var += (v - e.mean) * (v - e.mean);
            e.stddev = std::sqrt(var / static_cast<double>(e.count));
        }
        profile.entries.push_back(e);
    }
    return profile;
}

WeightSet random_init_like(const ModelSpec& spec, std::uint64_t seed)
{
    WeightSet w = zero_weights(spec);
    std::mt19937_64 rng(seed);
    const double half_width = 1.0 / std::sqrt(static_cast<double>(spec.d_model));
    for (auto& [name, tensor] : w.named_mut(spec)) {
        // Layer norms keep their neutral initialization.
        if (name.find(".ln_") != std::string::npos) continue;
        for (auto& v : tensor->data()) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            v = static_cast<float>((2.0 * u - 1.0) * half_width);
        }
    }
    return w;
}

Model random_model_like(const Model& model, std::uint64_t seed)
{
    return Model{model.spec, random_init_like(model.spec, seed), model.vocab};
}

std::string random_tag(std::uint64_t seed)
{
    return "random-init(" + std::to_string(seed) + ")";
}

TrainedVsRandom compare_trained_random(const Model& model, std::span<const Utterance> data,
                                       const ProfileOptions& options, std::span<const std::uint64_t> seeds)
{
    TrainedVsRandom out;
    out.trained = profile_dataset(model, data, options);
    for (auto seed : seeds) {
        ProfileOptions ro = options;
        ro.model_tag = random_tag(seed);
        ro.check_transcription = false;
        ro.only_ids = out.trained.used_ids;
        ro.reference_model = &model;
        out.random.push_back(profile_dataset(random_model_like(model, seed), data, ro));
    }
    return out;
}

} // namespace ctxmix

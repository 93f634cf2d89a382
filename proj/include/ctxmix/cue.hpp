#pragma once

#include "ctxmix/dataset.hpp"
#include "ctxmix/mixing.hpp"
#include "ctxmix/model.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ctxmix {

// Binary indicator over the word units of a score row: 1 where the unit
// belongs to the cue word.
struct CueVector {
    std::vector<float> mask;
};

CueVector build_cue_vector(std::size_t cue_word, std::span<const std::size_t> unit_words);

// Dot product of the cue vector with a (normalized) score row.
double cue_contribution(std::span<const float> row, const CueVector& cue);

struct ProfileEntry {
    std::size_t layer = 0; // 0-based
    Method method = Method::Attn;
    Scope scope = Scope::WithinEncoder;
    double mean = 0.0;
    double stddev = 0.0;   // population standard deviation over utterances
    std::size_t count = 0;
    std::string model_tag;
};

struct CueContributionProfile {
    std::string model_tag;
    std::vector<ProfileEntry> entries; // layer-major, then method, then scope
    std::vector<std::string> used_ids;
    std::vector<std::string> skipped;  // "<id>: <reason>"

    const ProfileEntry* find(std::size_t layer, Method method, Scope scope) const;
};

struct ProfileOptions {
    std::vector<Method> methods{Method::Attn, Method::AttnNorm, Method::ValueZeroing};
    std::vector<Scope> scopes{Scope::WithinEncoder};
    std::string model_tag = "trained";
    bool check_transcription = true;
    // Restrict to these utterance ids (e.g. the trained model's correct set).
    std::optional<std::vector<std::string>> only_ids;
    // Encoder-decoder only: decode with this model's greedy transcription as a
    // teacher-forced prefix (used for random-init baselines).
    const Model* reference_model = nullptr;
};

// Per-utterance cue contribution of the target row at every layer, for each
// method and scope. Values are ordered like CueContributionProfile::entries.
std::vector<double> utterance_cue_contributions(const Model& model, const UtteranceRun& run,
                                                const UtteranceManifest& manifest, const ProfileOptions& options);

CueContributionProfile profile_dataset(const Model& model, std::span<const Utterance> data,
                                       const ProfileOptions& options);

// Centered uniform weights with half-width 1/sqrt(d); layer norms start at
// gain 1, bias 0. Same seed, same weights.
WeightSet random_init_like(const ModelSpec& spec, std::uint64_t seed);
Model random_model_like(const Model& model, std::uint64_t seed);

std::string random_tag(std::uint64_t seed);

struct TrainedVsRandom {
    CueContributionProfile trained;
    std::vector<CueContributionProfile> random; // one per seed
};

// Random-init profiles are computed on the utterances the trained model
// transcribes correctly (a random model transcribes nothing).
TrainedVsRandom compare_trained_random(const Model& model, std::span<const Utterance> data,
                                       const ProfileOptions& options, std::span<const std::uint64_t> seeds);

} // namespace ctxmix

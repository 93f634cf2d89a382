#pragma once

#include "ctxmix/alignment.hpp"
#include "ctxmix/mixing.hpp"
#include "ctxmix/model.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ctxmix {

struct Utterance {
    UtteranceManifest manifest;
    Tensor frames;
};

// Loads every record of a manifest file plus its frame tensor and validates
// it against spec. Any diagnostic aborts with a validation error.
std::vector<Utterance> load_dataset(const std::filesystem::path& manifest_path, const ModelSpec& spec);

// Transcribed word strings: CTC tokens (one token per word) or the
// concatenated subword tokens inside each dec_span.
std::vector<std::string> transcribed_words(const Model& model, const UtteranceRun& run);

// The analyses only use utterances whose cue and target words are transcribed
// correctly.
bool cue_and_target_correct(const Model& model, const UtteranceRun& run, const UtteranceManifest& manifest);

} // namespace ctxmix

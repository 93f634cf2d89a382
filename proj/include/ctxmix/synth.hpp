#pragma once

#include "ctxmix/dataset.hpp"
#include "ctxmix/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ctxmix {

// Toy agreement task. Every utterance is `words_per_utterance` words of
// `frames_per_word` frames followed by a short end segment. Exactly one word is
// a number cue (le/les, il/ils, ...) and a later word is a homophonous target
// whose frames are identical for its singular and plural spellings; only the
// cue frames carry the number sign (on channel c_num).
struct SynthTaskSpec {
    std::size_t words_per_utterance = 5;
    std::size_t frames_per_word = 4;
    std::size_t end_frames = 2;
    std::size_t d_model = 48;
    std::size_t n_heads = 2;
    std::size_t c_num = 0;          // number-feature channel
    std::size_t noise_channels = 4;
    double noise_amplitude = 0.1;
    std::size_t max_cue_gap = 2;    // target follows the cue by 1..max_cue_gap words
    std::size_t dataset_size = 200;
    std::uint64_t seed = 7;
    std::size_t encoder_layers = 4;
    std::size_t copy_layer = 2;     // 1-based layer doing the cue -> target copy
    std::size_t decoder_layers = 2;
    std::size_t decoder_copy_layer = 2; // 1-based decoder layer reading the cue token
    double frame_seconds = 0.02;

    void validate() const;
    std::size_t frames_per_utterance() const { return words_per_utterance * frames_per_word + end_frames; }
};

// Channel assignment of the frame / residual space.
struct ChannelLayout {
    std::vector<std::size_t> ident; // one per word identity (targets share one per lexeme), plus the end marker
    std::vector<std::size_t> slot;  // word position 0..W (W = end segment)
    std::size_t c_num = 0;
    std::size_t c_cue = 0;
    std::size_t c_tgt = 0;
    std::size_t c_zero = 0; // always 0; reference for the layer-norm difference trick
    std::size_t c_bias = 0; // always 1
    std::vector<std::size_t> noise;
};

ChannelLayout channel_layout(const SynthTaskSpec& spec);

// Word inventory shared by both toys.
struct SynthLexicon {
    struct CuePair {
        std::string singular, plural;
        Pattern pattern;
    };
    struct TargetLexeme {
        std::string singular, plural;
        Pattern pattern;
    };
    std::vector<std::string> fillers;
    std::vector<CuePair> cues;
    std::vector<TargetLexeme> targets;
};

const SynthLexicon& synth_lexicon();

// Utterances with manifests whose frames_file is "frames/<id>.ctxt". Items
// come in singular/plural twins that differ only on the cue frames.
std::vector<Utterance> gen_dataset(const SynthTaskSpec& spec);

struct CueCopyModel {
    Model model;
    std::size_t copy_layer = 0; // 0-based index of the engineered layer (decoder stack for encoder-decoder)
};

CueCopyModel build_cue_copy_encoder(const SynthTaskSpec& spec);
CueCopyModel build_cue_copy_encdec(const SynthTaskSpec& spec);

// Writes <dir>/model/, <dir>/manifest.jsonl and <dir>/frames/.
void write_task(const std::filesystem::path& dir, const Model& model, const std::vector<Utterance>& data);

} // namespace ctxmix

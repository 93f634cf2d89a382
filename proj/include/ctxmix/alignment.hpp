#pragma once

#include "ctxmix/model.hpp"

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace ctxmix {

// Half-open index range [begin, end) over frames or decoder tokens.
struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const noexcept { return end - begin; }
    bool empty() const noexcept { return end <= begin; }
    bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }
    bool overlaps(const Span& o) const noexcept { return begin < o.end && o.begin < end; }

    friend bool operator==(const Span&, const Span&) = default;
};

using FrameSpan = Span;

struct WordTiming {
    std::string text;
    double t_s = 0.0; // seconds
    double t_e = 0.0;
};

enum class NumberLabel { Singular, Plural };
enum class Pattern { DetNoun, PronounVerb, DetNounVerb };

const char* to_string(NumberLabel label);
const char* to_string(Pattern pattern);
NumberLabel parse_number_label(const std::string& text);
Pattern parse_pattern(const std::string& text);

struct UtteranceManifest {
    std::string id;
    std::string frames_file; // relative to the manifest file's directory
    std::vector<WordTiming> words;
    std::size_t cue_idx = 0;
    std::size_t target_idx = 0;
    NumberLabel label = NumberLabel::Singular;
    Pattern pattern = Pattern::DetNoun;
    std::vector<Span> dec_spans; // decoder token index range per word (encoder-decoder runs)
};

// Total duration and frame count used to map seconds onto encoder frames.
struct TimeGrid {
    double duration = 0.0;
    std::size_t frames = 0;
    bool fixed = false; // padded fixed-duration processor (duration/frames are model constants)
};

TimeGrid time_grid_for(const ModelSpec& spec, std::size_t frame_count);

// f = ceil(t / duration * frames), clamped to [0, frames]. Indices are 0-based.
std::size_t time_to_frame(double t, const TimeGrid& grid);

// Half-open frame span of a word; zero-width results widen to one frame.
FrameSpan word_to_frames(const WordTiming& word, const TimeGrid& grid);
std::vector<FrameSpan> word_frame_spans(const std::vector<WordTiming>& words, const TimeGrid& grid);

// Line-delimited JSON, one utterance per line.
std::vector<UtteranceManifest> load_manifests(const std::filesystem::path& path);
UtteranceManifest parse_manifest_record(const std::string& line);
std::string format_manifest_record(const UtteranceManifest& m);
void save_manifests(const std::filesystem::path& path, const std::vector<UtteranceManifest>& manifests);

// Empty result means valid. frame_count is the row count of the frame tensor.
std::vector<std::string> validate_manifest(const UtteranceManifest& m, const ModelSpec& spec,
                                           std::size_t frame_count);
// Throws a validation error listing every diagnostic.
void require_valid_manifest(const UtteranceManifest& m, const ModelSpec& spec, std::size_t frame_count);

} // namespace ctxmix

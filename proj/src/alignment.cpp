#include "ctxmix/alignment.hpp"

#include "ctxmix/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace ctxmix {

using nlohmann::json;

const char* to_string(NumberLabel label)
{
    return label == NumberLabel::Singular ? "Singular" : "Plural";
}

const char* to_string(Pattern pattern)
{
    switch (pattern) {
    case Pattern::DetNoun: return "Det_Noun";
    case Pattern::PronounVerb: return "Pronoun_Verb";
    case Pattern::DetNounVerb: return "Det_Noun_Verb";
    }
    return "?";
}

NumberLabel parse_number_label(const std::string& text)
{
    if (text == "Singular") return NumberLabel::Singular;
    if (text == "Plural") return NumberLabel::Plural;
    fail(ErrorKind::Input, "unknown number label '" + text + "'");
}

Pattern parse_pattern(const std::string& text)
{
    if (text == "Det_Noun") return Pattern::DetNoun;
    if (text == "Pronoun_Verb") return Pattern::PronounVerb;
    if (text == "Det_Noun_Verb") return Pattern::DetNounVerb;
    fail(ErrorKind::Input, "unknown pattern '" + text + "'");
}

TimeGrid time_grid_for(const ModelSpec& spec, std::size_t frame_count)
{
    if (spec.fixed_duration) return {spec.fixed_duration->seconds, spec.fixed_duration->frames, true};
    return {static_cast<double>(frame_count) * spec.frame_seconds, frame_count, false};
}

std::size_t time_to_frame(double t, const TimeGrid& grid)
{
    check(grid.frames >= 1, ErrorKind::Input, "time grid has no frames");
    check(grid.duration > 0.0, ErrorKind::Input, "time grid has no duration");
    check(std::isfinite(t) && t >= 0.0, ErrorKind::Range, "negative or non-finite time");
    if (t > grid.duration) {
        fail(grid.fixed ? ErrorKind::Input : ErrorKind::Range,
             "time " + std::to_string(t) + " s beyond " + std::to_string(grid.duration) + " s");
    }
    const double x = t / grid.duration * static_cast<double>(grid.frames);
    // Snap values within rounding noise of an integer before taking the ceiling,
    // so that e.g. 0.08 s at 50 frames/s lands on frame 4 and not 5.
    const double nearest = std::round(x);
    const double f = std::abs(x - nearest) <= 1e-9 * std::max(1.0, std::abs(x)) ? nearest : std::ceil(x);
    return std::min(static_cast<std::size_t>(f), grid.frames);
}

FrameSpan word_to_frames(const WordTiming& word, const TimeGrid& grid)
{
    check(grid.frames >= 1, ErrorKind::Input, "empty utterance (no frames)");
    check(word.t_s >= 0.0 && word.t_s <= word.t_e, ErrorKind::Input,
          "invalid timing for word '" + word.text + "'");
    FrameSpan span{time_to_frame(word.t_s, grid), time_to_frame(word.t_e, grid)};
    if (span.begin == span.end) {
        span.begin = std::min(span.begin, grid.frames - 1);
        span.end = span.begin + 1;
    }
    return span;
}

std::vector<FrameSpan> word_frame_spans(const std::vector<WordTiming>& words, const TimeGrid& grid)
{
    std::vector<FrameSpan> spans;
    spans.reserve(words.size());
    for (const auto& w : words) spans.push_back(word_to_frames(w, grid));
    return spans;
}

UtteranceManifest parse_manifest_record(const std::string& line)
{
    try {
        const json j = json::parse(line);
        UtteranceManifest m;
        m.id = j.at("id").get<std::string>();
        m.frames_file = j.at("frames_file").get<std::string>();
        for (const auto& w : j.at("words")) {
            m.words.push_back({w.at("text").get<std::string>(), w.at("t_s").get<double>(), w.at("t_e").get<double>()});
        }
        m.cue_idx = j.at("cue_idx").get<std::size_t>();
        m.target_idx = j.at("target_idx").get<std::size_t>();
        m.label = parse_number_label(j.at("label").get<std::string>());
        m.pattern = parse_pattern(j.at("pattern").get<std::string>());
        if (j.contains("dec_spans")) {
            for (const auto& s : j.at("dec_spans")) {
                check(s.is_array() && s.size() == 2, ErrorKind::Input, "dec_spans entries must be [start, end)");
                m.dec_spans.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>()});
            }
        }
        return m;
    } catch (const json::exception& e) {
        fail(ErrorKind::Input, std::string("malformed manifest record: ") + e.what());
    }
}

std::string format_manifest_record(const UtteranceManifest& m)
{
    // ordered_json keeps the documented field order in the output.
    nlohmann::ordered_json j;
    j["id"] = m.id;
    j["frames_file"] = m.frames_file;
    auto words = nlohmann::ordered_json::array();
    for (const auto& w : m.words) {
        nlohmann::ordered_json wj;
        wj["text"] = w.text;
        wj["t_s"] = w.t_s;
        wj["t_e"] = w.t_e;
        words.push_back(std::move(wj));
    }
    j["words"] = std::move(words);
    j["cue_idx"] = m.cue_idx;
    j["target_idx"] = m.target_idx;
    j["label"] = to_string(m.label);
    j["pattern"] = to_string(m.pattern);
    auto spans = nlohmann::ordered_json::array();
    for (const auto& s : m.dec_spans) spans.push_back({s.begin, s.end});
    j["dec_spans"] = std::move(spans);
    return j.dump();
}

std::vector<UtteranceManifest> load_manifests(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open manifest " + path.string());
    std::vector<UtteranceManifest> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(parse_manifest_record(line));
        } catch (const Error& e) {
            fail(e.kind(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void save_manifests(const std::filesystem::path& path, const std::vector<UtteranceManifest>& manifests)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write manifest " + path.string());
    for (const auto& m : manifests) out << format_manifest_record(m) << '\n';
    if (!out) fail(ErrorKind::Io, "failed writing manifest " + path.string());
}

std::vector<std::string> validate_manifest(const UtteranceManifest& m, const ModelSpec& spec, std::size_t frame_count)
{
    std::vector<std::string> diag;
    auto report = [&](const std::string& msg) { diag.push_back(m.id + ": " + msg); };

    if (m.id.empty()) report("empty id");
    const std::size_t n = m.words.size();
    if (n == 0) {
        report("no words");
        return diag;
    }
    if (m.cue_idx >= n) report("cue_idx out of range");
    if (m.target_idx >= n) report("target_idx out of range");
    if (m.cue_idx == m.target_idx) report("cue_idx equals target_idx");

    if (frame_count == 0) report("frame tensor is empty");
    if (frame_count > spec.max_frames) report("frame count exceeds model max_frames");
    const TimeGrid grid = time_grid_for(spec, frame_count);
    if (grid.fixed && frame_count != grid.frames) {
        report("fixed-duration model expects " + std::to_string(grid.frames) + " frames, got " +
               std::to_string(frame_count));
    }

    bool timings_ok = true;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& w = m.words[i];
        if (!(w.t_s >= 0.0 && w.t_s <= w.t_e)) {
            report("word " + std::to_string(i) + " has invalid timing");
            timings_ok = false;
        } else if (w.t_e > grid.duration) {
            report("word " + std::to_string(i) + " ends beyond the audio length");
            timings_ok = false;
        }
        if (i > 0 && w.t_s < m.words[i - 1].t_e) {
            report("word " + std::to_string(i) + " overlaps the previous word");
        }
    }
    if (timings_ok && grid.frames > 0 && m.cue_idx < n && m.target_idx < n && m.cue_idx != m.target_idx) {
        const auto cue = word_to_frames(m.words[m.cue_idx], grid);
        const auto target = word_to_frames(m.words[m.target_idx], grid);
        if (cue.overlaps(target)) report("cue and target frame spans overlap");
    }

    if (spec.has_decoder()) {
        if (m.dec_spans.size() != n) {
            report("dec_spans must list one token span per word");
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                const auto& s = m.dec_spans[i];
                if (s.empty()) report("dec_span " + std::to_string(i) + " is empty");
                if (i > 0 && s.begin < m.dec_spans[i - 1].end) {
                    report("dec_span " + std::to_string(i) + " overlaps or precedes the previous span");
                }
                if (s.end + 1 > spec.max_tokens) report("dec_span " + std::to_string(i) + " exceeds max_tokens");
            }
        }
    }
    return diag;
}

void require_valid_manifest(const UtteranceManifest& m, const ModelSpec& spec, std::size_t frame_count)
{
    const auto diag = validate_manifest(m, spec, frame_count);
    if (diag.empty()) return;
    std::string msg;
    for (const auto& d : diag) msg += (msg.empty() ? "" : "; ") + d;
    fail(ErrorKind::Validation, msg);
}

} // namespace ctxmix

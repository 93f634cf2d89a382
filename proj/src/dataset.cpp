#include "ctxmix/dataset.hpp"

#include "ctxmix/error.hpp"

#include <algorithm>

namespace ctxmix {

std::vector<Utterance> load_dataset(const std::filesystem::path& manifest_path, const ModelSpec& spec)
{
    const auto base = manifest_path.parent_path();
    std::vector<Utterance> out;
    std::vector<std::string> problems;
    for (auto& m : load_manifests(manifest_path)) {
        Tensor frames = read_tensor(base / m.frames_file);
        if (frames.rank() != 2 || frames.cols() != spec.d_model) {
            problems.push_back(m.id + ": frame tensor has shape " + shape_string(frames.shape()));
            continue;
        }
        for (auto& d : validate_manifest(m, spec, frames.rows())) problems.push_back(std::move(d));
        out.push_back({std::move(m), std::move(frames)});
    }
    if (!problems.empty()) {
        std::string msg;
        for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
        fail(ErrorKind::Validation, msg);
    }
    return out;
}

namespace {

std::string strip_word_marker(std::string token)
{
    // SentencePiece and byte-level BPE word-start markers.
    for (const std::string marker : {"\xe2\x96\x81", "\xc4\xa0", " "}) {
        if (token.rfind(marker, 0) == 0) return token.substr(marker.size());
    }
    return token;
}

} // namespace

std::vector<std::string> transcribed_words(const Model& model, const UtteranceRun& run)
{
    std::vector<std::string> words;
    if (!model.spec.has_decoder()) {
        for (TokenId t : ctc_decode_greedy(run.encoder.logits, model.spec.blank_id)) {
            words.push_back(model.vocab.token(t));
        }
        return words;
    }
    const auto& tokens = run.generation->tokens;
    for (const auto& span : run.token_spans) {
        std::string word;
        for (std::size_t k = span.begin; k < std::min(span.end, tokens.size()); ++k) {
            word += strip_word_marker(model.vocab.token(tokens[k]));
        }
        words.push_back(word);
    }
    return words;
}

bool cue_and_target_correct(const Model& model, const UtteranceRun& run, const UtteranceManifest& manifest)
{
    const auto words = transcribed_words(model, run);
    const auto& cue = manifest.words.at(manifest.cue_idx).text;
    const auto& target = manifest.words.at(manifest.target_idx).text;
    if (model.spec.has_decoder()) {
        const auto& tokens = run.generation->tokens;
        const auto& cs = manifest.dec_spans.at(manifest.cue_idx);
        const auto& ts = manifest.dec_spans.at(manifest.target_idx);
        if (cs.end > tokens.size() || ts.end > tokens.size()) return false;
        return words[manifest.cue_idx] == cue && words[manifest.target_idx] == target;
    }
    return std::find(words.begin(), words.end(), cue) != words.end() &&
           std::find(words.begin(), words.end(), target) != words.end();
}

} // namespace ctxmix

#include "ctxmix/error.hpp"
#include "ctxmix/mixing.hpp"
#include "ctxmix/synth.hpp"

#include <doctest.h>

#include <filesystem>

using namespace ctxmix;

namespace {

std::vector<std::string> words_of(const UtteranceManifest& m)
{
    std::vector<std::string> out;
    for (const auto& w : m.words) out.push_back(w.text);
    return out;
}

} // namespace

TEST_CASE("datasets are balanced twins")
{
    SynthTaskSpec spec;
    spec.dataset_size = 101;
    const auto data = gen_dataset(spec);
    REQUIRE(data.size() == 101);
    std::size_t plural = 0;
    for (const auto& u : data) plural += u.manifest.label == NumberLabel::Plural;
    CHECK(std::abs(static_cast<long>(2 * plural) - 101) <= 1);

    const std::size_t F = spec.frames_per_word;
    for (std::size_t i = 0; i + 1 < data.size(); i += 2) {
        const auto& s = data[i];
        const auto& p = data[i + 1];
        CHECK(s.manifest.label == NumberLabel::Singular);
        CHECK(p.manifest.label == NumberLabel::Plural);
        REQUIRE(s.manifest.target_idx == p.manifest.target_idx);
        const std::size_t tgt = s.manifest.target_idx, cue = s.manifest.cue_idx;
        CHECK(cue < tgt);
        for (std::size_t t = 0; t < s.frames.rows(); ++t) {
            const auto a = s.frames.row(t), b = p.frames.row(t);
            const bool same = std::equal(a.begin(), a.end(), b.begin());
            if (t >= tgt * F && t < (tgt + 1) * F) CHECK(same); // homophone property, bit-exact
            if (t < cue * F || t >= (cue + 1) * F) CHECK(same);
        }
    }
}

TEST_CASE("generation is seed-deterministic")
{
    SynthTaskSpec spec;
    spec.dataset_size = 20;
    const auto a = gen_dataset(spec), b = gen_dataset(spec);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].frames == b[i].frames);
        CHECK(format_manifest_record(a[i].manifest) == format_manifest_record(b[i].manifest));
    }
    spec.seed = 8;
    const auto c = gen_dataset(spec);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) differs = differs || !(a[i].frames == c[i].frames);
    CHECK(differs);
}

TEST_CASE("infeasible specs are rejected")
{
    SynthTaskSpec small;
    small.d_model = 16;
    CHECK_THROWS_AS(small.validate(), Error);
    SynthTaskSpec late;
    late.copy_layer = 9;
    CHECK_THROWS_AS(build_cue_copy_encoder(late), Error);
    SynthTaskSpec words;
    words.words_per_utterance = 1;
    CHECK_THROWS_AS(gen_dataset(words), Error);
}

TEST_CASE("cue-copy encoder")
{
    SynthTaskSpec spec;
    const auto data = gen_dataset(spec);
    const auto toy = build_cue_copy_encoder(spec);
    CHECK(toy.copy_layer == spec.copy_layer - 1);
    for (const auto& u : data) {
        CHECK(validate_manifest(u.manifest, toy.model.spec, u.frames.rows()).empty());
        const auto run = run_utterance(toy.model, u.frames, u.manifest);
        CHECK(transcribed_words(toy.model, run) == words_of(u.manifest));

        // Every target frame puts >= 0.9 of its attention on the cue frames.
        const Span cue = run.frame_spans[u.manifest.cue_idx], tgt = run.frame_spans[u.manifest.target_idx];
        const auto& alpha = run.encoder.layers[toy.copy_layer].self_attention.weights[0];
        for (std::size_t n = tgt.begin; n < tgt.end; ++n) {
            double mass = 0;
            for (std::size_t m = cue.begin; m < cue.end; ++m) mass += alpha.at(n, m);
            CHECK(mass >= 0.9);
        }
    }
}

TEST_CASE("cue-copy encoder-decoder")
{
    SynthTaskSpec spec;
    spec.dataset_size = 60;
    const auto data = gen_dataset(spec);
    const auto toy = build_cue_copy_encdec(spec);
    for (const auto& u : data) {
        CHECK(validate_manifest(u.manifest, toy.model.spec, u.frames.rows()).empty());
        const auto run = run_utterance(toy.model, u.frames, u.manifest);
        CHECK(transcribed_words(toy.model, run) == words_of(u.manifest));
        CHECK_FALSE(run.generation->truncated);

        const std::size_t target[] = {u.manifest.target_idx};
        const auto vz = normalize_rows(value_zeroing_score(run, toy.copy_layer, Scope::WithinDecoder, target));
        std::size_t best = 0;
        for (std::size_t j = 1; j < vz.scores.cols(); ++j) {
            if (vz.scores.at(0, j) > vz.scores.at(0, best)) best = j;
        }
        CHECK(vz.col_words[best] == u.manifest.cue_idx);
    }
}

TEST_CASE("task directory round trip")
{
    SynthTaskSpec spec;
    spec.dataset_size = 6;
    const auto data = gen_dataset(spec);
    const auto toy = build_cue_copy_encoder(spec);
    const auto dir = std::filesystem::temp_directory_path() / "ctxmix_synth_task";
    std::filesystem::remove_all(dir);
    write_task(dir, toy.model, data);
    const Model m = load_model(dir / "model");
    const auto back = load_dataset(dir / "manifest.jsonl", m.spec);
    REQUIRE(back.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(back[i].frames == data[i].frames);
        CHECK(back[i].manifest.id == data[i].manifest.id);
    }
    std::filesystem::remove_all(dir);
}

#include "ctxmix/ablation.hpp"
#include "ctxmix/error.hpp"
#include "ctxmix/synth.hpp"
#include "support/random_model.hpp"

#include <doctest.h>

#include <cmath>

using namespace ctxmix;
using testing_support::random_tensor;

TEST_CASE("silencing frames")
{
    std::mt19937_64 rng(51);
    const Tensor x = random_tensor({6, 3}, rng, 1.0);
    CHECK(silence_frames(x, {6, 9}) == x); // clamps to nothing
    const Tensor all = silence_frames(x, {0, 6});
    for (float v : all.data()) CHECK(v == 0.0f);
    const Tensor once = silence_frames(x, {1, 3});
    CHECK(silence_frames(once, {1, 3}) == once);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(once.at(0, c) == x.at(0, c));
        CHECK(once.at(2, c) == 0.0f);
    }
    const std::vector<float> hum{1, 2, 3};
    CHECK(silence_frames(x, {5, 6}, hum).at(5, 2) == 3.0f);
}

TEST_CASE("blanking tokens")
{
    const std::vector<TokenId> t{5, 6, 7, 8};
    CHECK(blank_token(t, {}, 2, 3) == t);
    const std::size_t pos[] = {2};
    const auto once = blank_token(t, pos, 2, 3);
    CHECK(once == std::vector<TokenId>{5, 6, 2, 8});
    CHECK(blank_token(once, pos, 2, 3) == once);
    const std::size_t late[] = {3};
    try {
        blank_token(t, late, 2, 3);
        FAIL("expected a usage error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Usage);
    }
}

TEST_CASE("condition names")
{
    for (const char* n : {"SC", "BC", "SBC", "ST", "SD"}) CHECK(std::string(to_string(parse_condition(n))) == n);
    CHECK_THROWS_AS(parse_condition("XX"), Error);
    CHECK(needs_decoder(AblationCondition::BlankCue));
    CHECK_FALSE(needs_decoder(AblationCondition::SilenceCue));
}

TEST_CASE("encoder toy ablations")
{
    SynthTaskSpec spec;
    spec.dataset_size = 60;
    const auto data = gen_dataset(spec);
    const auto toy = build_cue_copy_encoder(spec);

    for (const auto& u : data) {
        const auto b = ablation_baseline(toy.model, u);
        REQUIRE(b.usable);
        // No modification reproduces the baseline exactly.
        CHECK(target_probability(toy.model, u, b, u.frames, {}) == b.probability);
        const auto sc = confidence_drop(toy.model, u, AblationCondition::SilenceCue, b);
        const auto sd = confidence_drop(toy.model, u, AblationCondition::SilenceDistractor, b);
        CHECK(sc.drop >= 0.3);
        CHECK(std::abs(sd.drop) <= 0.05);
        CHECK(sc.baseline >= 0.0);
        CHECK(sc.baseline <= 1.0);
        CHECK(confidence_drop(toy.model, u, AblationCondition::SilenceCue, b).drop == sc.drop);
    }
    CHECK_THROWS_AS(confidence_drop(toy.model, data[0], AblationCondition::BlankCue), Error);
}

TEST_CASE("encoder-decoder toy ablations")
{
    SynthTaskSpec spec;
    spec.dataset_size = 40;
    const auto data = gen_dataset(spec);
    const auto toy = build_cue_copy_encdec(spec);
    const AblationCondition conds[] = {AblationCondition::SilenceCue, AblationCondition::BlankCue,
                                       AblationCondition::SilenceAndBlankCue, AblationCondition::SilenceTarget};
    const auto report = run_ablation(toy.model, data, conds);
    CHECK(report.skipped.empty());
    CHECK(report.rows.size() == data.size() * 4);
    for (const auto& r : report.rows) {
        if (r.condition == AblationCondition::BlankCue) CHECK(r.drop >= 0.3);
        if (r.condition == AblationCondition::SilenceCue) CHECK(r.drop <= 0.1);
    }
    const double sc = report.find(AblationCondition::SilenceCue)->mean_drop;
    const double st = report.find(AblationCondition::SilenceTarget)->mean_drop;
    CHECK(st >= sc);
    CHECK(report.silence == "zeros");

    const auto again = run_ablation(toy.model, data, conds);
    REQUIRE(again.rows.size() == report.rows.size());
    for (std::size_t i = 0; i < report.rows.size(); ++i) CHECK(again.rows[i].drop == report.rows[i].drop);
}

TEST_CASE("utterances with wrong transcriptions are skipped")
{
    SynthTaskSpec spec;
    spec.dataset_size = 4;
    auto data = gen_dataset(spec);
    const auto toy = build_cue_copy_encoder(spec);
    // Silence the target in one utterance's input: the model can no longer transcribe it.
    const Span target = word_to_frames(data[0].manifest.words[data[0].manifest.target_idx],
                                       time_grid_for(toy.model.spec, data[0].frames.rows()));
    data[0].frames = silence_frames(data[0].frames, target);
    const AblationCondition sc[] = {AblationCondition::SilenceCue};
    const auto report = run_ablation(toy.model, data, sc);
    CHECK(report.skipped.size() == 1);
    CHECK(report.rows.size() == 3);
    CHECK_THROWS_AS(confidence_drop(toy.model, data[0], AblationCondition::SilenceCue), Error);
}

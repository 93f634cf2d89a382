#include "ctxmix/cue.hpp"
#include "ctxmix/error.hpp"
#include "ctxmix/synth.hpp"
#include "support/random_model.hpp"

#include <doctest.h>

#include <cmath>

using namespace ctxmix;

TEST_CASE("cue vectors")
{
    const std::vector<std::size_t> words{0, 1, 2, 3};
    CHECK(build_cue_vector(1, words).mask == std::vector<float>{0, 1, 0, 0});
    const std::vector<std::size_t> subwords{0, 1, 1, 2};
    CHECK(build_cue_vector(1, subwords).mask == std::vector<float>{0, 1, 1, 0});
    CHECK_THROWS_AS(build_cue_vector(0, std::vector<std::size_t>{}), Error);
    CHECK_THROWS_AS(build_cue_vector(7, words), Error);
}

TEST_CASE("cue contribution arithmetic")
{
    const std::vector<std::size_t> words{0, 1, 2};
    const CueVector c = build_cue_vector(1, words);
    const std::vector<float> row{0.1f, 0.6f, 0.3f};
    CHECK(cue_contribution(row, c) == doctest::Approx(0.6));
    const std::vector<float> one_hot{0, 1, 0};
    CHECK(cue_contribution(one_hot, c) == 1.0);
    const std::vector<float> uniform(3, 1.0f / 3);
    CHECK(cue_contribution(uniform, c) == doctest::Approx(1.0 / 3));
    CHECK_THROWS_AS(cue_contribution(std::vector<float>{1, 0}, c), Error);
}

TEST_CASE("cue and non-cue mass complement each other")
{
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = testing_support::pick(rng, 2, 8);
        MixingMap m;
        m.scores = testing_support::random_tensor({1, n}, rng, 1.0);
        m = normalize_rows(m);
        if (m.flagged[0]) continue;
        std::vector<std::size_t> words(n);
        for (std::size_t i = 0; i < n; ++i) words[i] = i;
        const std::size_t cue = testing_support::pick(rng, 0, n - 1);
        const double c = cue_contribution(m.scores.row(0), build_cue_vector(cue, words));
        double rest = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (i != cue) rest += m.scores.at(0, i);
        }
        CHECK(c >= 0.0);
        CHECK(c <= 1.0 + 1e-9);
        CHECK(c + rest == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("random init is seeded")
{
    ModelSpec s;
    s.encoder_layers = 2;
    s.d_model = 16;
    s.n_heads = 2;
    s.vocab_size = 4;
    const WeightSet a = random_init_like(s, 5), b = random_init_like(s, 5), c = random_init_like(s, 6);
    const auto na = a.named(s), nb = b.named(s), nc = c.named(s);
    bool any_diff = false;
    const double bound = 1.0 / std::sqrt(16.0);
    for (std::size_t i = 0; i < na.size(); ++i) {
        CHECK(*na[i].second == *nb[i].second);
        any_diff = any_diff || !(*na[i].second == *nc[i].second);
        if (na[i].first.find("ln") == std::string::npos) {
            for (float v : na[i].second->data()) CHECK(std::abs(v) <= bound);
        }
    }
    CHECK(any_diff);
}

TEST_CASE("random init gives finite forward passes")
{
    ModelSpec s;
    s.encoder_layers = 3;
    s.d_model = 16;
    s.n_heads = 4;
    s.vocab_size = 5;
    s.max_frames = 64;
    const Model m{s, random_init_like(s, 1), Vocabulary({"a", "b", "c", "d", "e"})};
    std::mt19937_64 rng(32);
    for (int i = 0; i < 100; ++i) {
        const auto cap = encoder_forward(m, testing_support::random_tensor({testing_support::pick(rng, 1, 32), 16}, rng, 3.0));
        CHECK(cap.logits.all_finite());
    }
}

TEST_CASE("profiles on the cue-copy encoder")
{
    SynthTaskSpec spec;
    spec.dataset_size = 100;
    const auto data = gen_dataset(spec);
    const auto toy = build_cue_copy_encoder(spec);

    SUBCASE("single utterance has zero spread")
    {
        const auto p = profile_dataset(toy.model, std::span(data).first(1), {});
        REQUIRE(p.used_ids.size() == 1);
        for (const auto& e : p.entries) {
            CHECK(e.count == 1);
            CHECK(e.stddev == 0.0);
        }
    }

    SUBCASE("peak at the copy layer, flat random baseline")
    {
        const std::uint64_t seeds[] = {1, 2, 3};
        const auto cmp = compare_trained_random(toy.model, data, {}, seeds);
        CHECK(cmp.trained.used_ids.size() == data.size());
        for (auto method : {Method::AttnNorm, Method::ValueZeroing}) {
            const auto* peak = cmp.trained.find(toy.copy_layer, method, Scope::WithinEncoder);
            REQUIRE(peak != nullptr);
            for (std::size_t l = 0; l < spec.encoder_layers; ++l) {
                if (l != toy.copy_layer) CHECK(cmp.trained.find(l, method, Scope::WithinEncoder)->mean < peak->mean);
            }
        }
        // Random weights spread mass roughly evenly over the W words.
        const double chance = 1.0 / static_cast<double>(spec.words_per_utterance);
        for (const auto& r : cmp.random) {
            CHECK(r.used_ids == cmp.trained.used_ids);
            double lo = 1, hi = 0;
            for (const auto& e : r.entries) {
                if (e.method != Method::Attn) continue;
                CHECK(std::abs(e.mean - chance) < 0.1);
                lo = std::min(lo, e.mean);
                hi = std::max(hi, e.mean);
            }
            CHECK(hi - lo < 0.1);
        }
    }
}

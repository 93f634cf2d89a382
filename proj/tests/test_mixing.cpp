#include "ctxmix/error.hpp"
#include "ctxmix/mixing.hpp"
#include "naive_transformer.hpp"
#include "support/random_model.hpp"

#include <doctest.h>

#include <cmath>

using namespace ctxmix;
using testing_support::pick;
using testing_support::random_model;
using testing_support::random_tensor;

namespace {

// Row-stochastic random attention, [tq x tk].
Tensor random_alpha(std::mt19937_64& rng, std::size_t tq, std::size_t tk)
{
    Tensor a = random_tensor({tq, tk}, rng, 1.0);
    for (std::size_t i = 0; i < tq; ++i) {
        double s = 0;
        for (auto& v : a.row(i)) {
            v = std::abs(v) + 0.01f;
            s += v;
        }
        for (auto& v : a.row(i)) v = static_cast<float>(v / s);
    }
    return a;
}

std::vector<Span> random_partition(std::mt19937_64& rng, std::size_t n)
{
    const std::size_t words = pick(rng, 1, std::min<std::size_t>(n, 4));
    const auto timing = testing_support::tiling_words(rng, n, words, 1.0);
    std::vector<Span> out;
    for (const auto& w : timing) out.push_back({static_cast<std::size_t>(w.t_s), static_cast<std::size_t>(w.t_e)});
    return out;
}

UtteranceManifest manifest_for(const std::vector<WordTiming>& words)
{
    UtteranceManifest m;
    m.id = "r";
    m.words = words;
    m.cue_idx = 0;
    m.target_idx = words.size() - 1;
    return m;
}

} // namespace

TEST_CASE("attn on uniform and one-hot captures")
{
    AttentionCapture cap;
    cap.weights.push_back(Tensor::filled({4, 4}, 0.25f));
    cap.values.push_back(Tensor({4, 1}));
    const std::vector<Span> words{{0, 2}, {2, 4}};
    const Tensor s = attn_scores(cap, words, words);
    CHECK(s.at(0, 1) == doctest::Approx(0.25));

    MixingMap m;
    m.scores = s;
    m = normalize_rows(m);
    CHECK(m.scores.at(0, 1) == doctest::Approx(0.5));

    // Every target frame looks only at cue frame 0.
    AttentionCapture one;
    Tensor a({4, 4});
    for (std::size_t n = 0; n < 4; ++n) a.at(n, 0) = 1.0f;
    one.weights.push_back(a);
    one.values.push_back(Tensor({4, 1}));
    const std::vector<Span> rows{{2, 4}}, cols{{0, 2}, {2, 4}};
    const Tensor t = attn_scores(one, rows, cols);
    CHECK(t.at(0, 0) == doctest::Approx(0.5)); // 1/|J_cue|
    MixingMap mt;
    mt.scores = t;
    CHECK(normalize_rows(mt).scores.at(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("attn matches a triple loop on random captures")
{
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t T = pick(rng, 2, 20), H = pick(rng, 1, 4);
        AttentionCapture cap;
        for (std::size_t h = 0; h < H; ++h) {
            cap.weights.push_back(random_alpha(rng, T, T));
            cap.values.push_back(Tensor({T, 1}));
        }
        const auto words = random_partition(rng, T);
        const Tensor s = attn_scores(cap, words, words);
        for (std::size_t i = 0; i < words.size(); ++i) {
            for (std::size_t j = 0; j < words.size(); ++j) {
                double sum = 0;
                for (std::size_t h = 0; h < H; ++h) {
                    for (std::size_t n = words[i].begin; n < words[i].end; ++n) {
                        for (std::size_t m = words[j].begin; m < words[j].end; ++m) sum += cap.weights[h].at(n, m);
                    }
                }
                CHECK(s.at(i, j) == doctest::Approx(sum / static_cast<double>(H * words[i].size() * words[j].size()))
                                        .epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("attention norm arithmetic")
{
    AttentionCapture cap;
    cap.weights.push_back(Tensor::from_rows({{1}}));
    cap.values.push_back(Tensor::from_rows({{3, 4}}));
    AttentionWeights w;
    w.W_O = Tensor::identity(2);
    const std::vector<Span> one{{0, 1}};
    CHECK(attention_norm_scores(cap, w, one, one).at(0, 0) == doctest::Approx(5.0));

    // Zero weight from the row kills the norm regardless of the value.
    AttentionCapture z;
    z.weights.push_back(Tensor::from_rows({{1, 0}, {1, 0}}));
    z.values.push_back(Tensor::from_rows({{1, 1}, {100, 100}}));
    const std::vector<Span> rows{{0, 2}}, cols{{0, 1}, {1, 2}};
    CHECK(attention_norm_scores(z, w, rows, cols).at(0, 1) == 0.0f);
}

TEST_CASE("attention norm matches a per-head loop")
{
    std::mt19937_64 rng(22);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t H = pick(rng, 1, 4), dh = pick(rng, 1, 6), d = H * dh, T = pick(rng, 2, 12);
        AttentionCapture cap;
        for (std::size_t h = 0; h < H; ++h) {
            cap.weights.push_back(random_alpha(rng, T, T));
            cap.values.push_back(random_tensor({T, dh}, rng, 2.0));
        }
        AttentionWeights w;
        w.W_O = random_tensor({d, d}, rng, 1.0);
        const auto words = random_partition(rng, T);
        const Tensor s = attention_norm_scores(cap, w, words, words);
        for (std::size_t i = 0; i < words.size(); ++i) {
            for (std::size_t j = 0; j < words.size(); ++j) {
                double sum = 0;
                for (std::size_t h = 0; h < H; ++h) {
                    for (std::size_t n = words[i].begin; n < words[i].end; ++n) {
                        for (std::size_t m = words[j].begin; m < words[j].end; ++m) {
                            double sq = 0;
                            for (std::size_t c = 0; c < d; ++c) {
                                double acc = 0;
                                for (std::size_t e = 0; e < dh; ++e) {
                                    acc += cap.weights[h].at(n, m) * cap.values[h].at(m, e) * w.W_O.at(h * dh + e, c);
                                }
                                sq += acc * acc;
                            }
                            sum += std::sqrt(sq);
                        }
                    }
                }
                const double ref = sum / static_cast<double>(H * words[i].size() * words[j].size());
                CHECK(std::abs(s.at(i, j) - ref) <= 1e-5 * std::max(1.0, ref));
            }
        }
    }
}

TEST_CASE("spans outside the sequence are range errors")
{
    AttentionCapture cap;
    cap.weights.push_back(Tensor::filled({3, 3}, 1.0f / 3));
    cap.values.push_back(Tensor({3, 1}));
    const std::vector<Span> ok{{0, 3}}, bad{{2, 5}}, empty{{1, 1}};
    try {
        attn_scores(cap, ok, bad);
        FAIL("expected a range error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Range);
    }
    CHECK_THROWS_AS(attn_scores(cap, empty, ok), Error);
}

TEST_CASE("value zeroing matches a naive re-run of the layer")
{
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        const Model m = random_model(rng, {ModelKind::EncoderCtc, 3, 24});
        const std::size_t T = pick(rng, 2, 16);
        const Tensor x = random_tensor({T, m.spec.d_model}, rng, 2.0);
        const std::size_t layer = pick(rng, 0, m.spec.encoder_layers - 1);
        const auto cap = encoder_forward(m, x);
        const Tensor& input = cap.layers[layer].input;
        const auto rerun = [&](const ValueMask& mask) {
            return encoder_layer_forward(input, m.weights.encoder[layer], m.spec.n_heads, nullptr, &mask);
        };
        const auto words = random_partition(rng, T);
        const auto vz = value_zeroing_scores(cap.layers[layer].output, rerun, T, words, words);
        const auto ref_out = oracle::to_mat(cap.layers[layer].output);
        for (std::size_t j = 0; j < words.size(); ++j) {
            std::vector<bool> zeroed(T, false);
            for (std::size_t k = words[j].begin; k < words[j].end; ++k) zeroed[k] = true;
            const auto ablated = oracle::encoder_layer_zeroed(m, layer, oracle::to_mat(input), zeroed);
            for (std::size_t i = 0; i < words.size(); ++i) {
                double sum = 0;
                for (std::size_t n = words[i].begin; n < words[i].end; ++n) {
                    double ab = 0, aa = 0, bb = 0;
                    for (std::size_t c = 0; c < m.spec.d_model; ++c) {
                        ab += ref_out[n][c] * ablated[n][c];
                        aa += ref_out[n][c] * ref_out[n][c];
                        bb += ablated[n][c] * ablated[n][c];
                    }
                    sum += 1.0 - ab / std::sqrt(aa * bb);
                }
                CHECK(std::abs(vz.dissimilarity.at(i, j) - sum / static_cast<double>(words[i].size())) <= 1e-5);
                CHECK(vz.cosine.at(i, j) == doctest::Approx(1.0 - vz.dissimilarity.at(i, j)).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("value zeroing on a residual-only model is zero")
{
    ModelSpec s;
    s.d_model = 8;
    s.n_heads = 2;
    s.encoder_layers = 2;
    s.vocab_size = 2;
    const Model m{s, zero_weights(s), Vocabulary({"<b>", "x"})};
    std::mt19937_64 rng(24);
    const auto words = testing_support::tiling_words(rng, 10, 3, 0.02);
    const auto run = run_utterance(m, random_tensor({10, 8}, rng, 1.0), manifest_for(words));
    for (std::size_t l = 0; l < 2; ++l) {
        const auto map = value_zeroing_score(run, l, Scope::WithinEncoder);
        for (float v : map.scores.data()) CHECK(v == 0.0f);
        const auto norm = normalize_rows(map);
        for (bool f : norm.flagged) CHECK(f);
    }
}

TEST_CASE("normalize rows")
{
    MixingMap m;
    m.scores = Tensor::from_rows({{-1, 3}, {2, 2}, {0, 0}});
    const MixingMap n = normalize_rows(m);
    CHECK(n.normalized);
    CHECK(n.scores.at(0, 0) == 0.0f);
    CHECK(n.scores.at(0, 1) == 1.0f);
    CHECK(n.scores.at(1, 0) == 0.5f);
    CHECK(n.scores.at(1, 1) == 0.5f);
    CHECK(n.scores.at(2, 0) == 0.0f);
    CHECK(n.scores.at(2, 1) == 0.0f);
    CHECK(n.flagged == std::vector<bool>{false, false, true});
}

TEST_CASE("utterance maps on random models")
{
    std::mt19937_64 rng(25);
    for (int trial = 0; trial < 8; ++trial) {
        const auto kind = trial % 2 == 0 ? ModelKind::EncoderCtc : ModelKind::EncoderDecoder;
        const Model m = random_model(rng, {kind, 3, 16, 7});
        const std::size_t T = pick(rng, 6, 24), W = pick(rng, 2, 4);
        auto manifest = manifest_for(testing_support::tiling_words(rng, T, W, m.spec.frame_seconds));
        std::vector<TokenId> forced;
        if (kind == ModelKind::EncoderDecoder) {
            for (std::size_t w = 0; w < W; ++w) {
                manifest.dec_spans.push_back({w, w + 1});
                forced.push_back(static_cast<TokenId>(3 + w));
            }
        }
        const Tensor frames = random_tensor({T, m.spec.d_model}, rng, 1.0);
        const auto run = run_utterance(m, frames, manifest, forced.empty() ? nullptr : &forced);

        ScoreRequest req;
        req.scopes = {Scope::WithinEncoder};
        if (kind == ModelKind::EncoderDecoder) req.scopes = {Scope::WithinEncoder, Scope::WithinDecoder, Scope::Cross};
        const auto maps = score_all(run, req);
        std::size_t expected = 0;
        for (auto scope : req.scopes) expected += layer_count(m.spec, scope) * 3;
        CHECK(maps.size() == expected);
        for (const auto& map : maps) {
            REQUIRE(map.normalized);
            for (std::size_t r = 0; r < map.scores.rows(); ++r) {
                double sum = 0;
                for (float v : map.scores.row(r)) {
                    CHECK(v >= 0.0f);
                    sum += v;
                }
                if (map.flagged[r]) CHECK(sum == 0.0);
                else CHECK(std::abs(sum - 1.0) <= 1e-6);
            }
        }

        // Same input twice -> bit-identical maps.
        const auto again = score_all(run_utterance(m, frames, manifest, forced.empty() ? nullptr : &forced), req);
        REQUIRE(again.size() == maps.size());
        for (std::size_t k = 0; k < maps.size(); ++k) CHECK(again[k].scores == maps[k].scores);

        // Pre-normalization Attn rows conserve the frame-weighted mass when words tile the frames.
        const auto raw = attn_score(run, 0, Scope::WithinEncoder);
        for (std::size_t i = 0; i < raw.scores.rows(); ++i) {
            double mass = 0;
            for (std::size_t j = 0; j < raw.scores.cols(); ++j) {
                mass += raw.scores.at(i, j) * static_cast<double>(run.frame_spans[raw.col_words[j]].size());
            }
            CHECK(std::abs(mass - 1.0) <= 1e-5);
        }
    }
}

TEST_CASE("scope gating")
{
    std::mt19937_64 rng(26);
    const Model m = random_model(rng);
    const auto run = run_utterance(m, random_tensor({8, m.spec.d_model}, rng, 1.0),
                                   manifest_for(testing_support::tiling_words(rng, 8, 2, 0.02)));
    for (auto scope : {Scope::Cross, Scope::WithinDecoder}) {
        try {
            compute_map(run, 0, Method::Attn, scope);
            FAIL("expected a usage error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Usage);
        }
    }
    CHECK_THROWS_AS(compute_map(run, m.spec.encoder_layers, Method::Attn, Scope::WithinEncoder), Error);
    CHECK(parse_method("vz") == Method::ValueZeroing);
    CHECK(parse_scope("cross") == Scope::Cross);
    CHECK_THROWS_AS(parse_method("rollout"), Error);
}

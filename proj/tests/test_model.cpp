#include "ctxmix/error.hpp"
#include "ctxmix/model.hpp"
#include "naive_transformer.hpp"
#include "support/random_model.hpp"

#include <doctest.h>

#include <filesystem>

using namespace ctxmix;
using testing_support::pick;
using testing_support::random_model;
using testing_support::random_tensor;

TEST_CASE("zero weights make every layer the identity")
{
    ModelSpec s;
    s.encoder_layers = 3;
    s.d_model = 8;
    s.n_heads = 2;
    s.vocab_size = 3;
    const Model m{s, zero_weights(s), Vocabulary({"<b>", "a", "b"})};
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor({6, 8}, rng, 2.0);
    const auto cap = encoder_forward(m, x);
    for (const auto& l : cap.layers) CHECK(l.output == x);
}

TEST_CASE("engineered single-head attention copies one value")
{
    ModelSpec s;
    s.d_model = 4;
    s.n_heads = 1;
    s.vocab_size = 2;
    WeightSet w = zero_weights(s);
    auto& a = w.encoder[0].mha;
    // key channel 0 is large only for the cue frame; every query asks for it.
    a.W_K.at(0, 0) = 20;
    a.b_Q[0] = 20;
    a.W_V = Tensor::identity(4);
    a.W_O = Tensor::identity(4);
    a.b_O = Tensor::vector({0.1f, 0.2f, 0.3f, 0.4f});
    const Model m{s, w, Vocabulary({"<b>", "x"})};
    const Tensor x = Tensor::from_rows({{3, -1, -1, -1}, {0, 1, -1, 0}, {0, -1, 1, 0}});
    LayerCapture cap;
    encoder_layer_forward(x, m.weights.encoder[0], 1, &cap);
    const auto& alpha = cap.self_attention.weights[0];
    const auto& v = cap.self_attention.values[0];
    for (std::size_t t = 0; t < 3; ++t) {
        REQUIRE(alpha.at(t, 0) > 0.99f);
        // z_t = sum_j alpha v_j W_O + b_O + x_t, dominated by the cue term.
        for (std::size_t c = 0; c < 4; ++c) {
            double z = a.b_O[c] + x.at(t, c);
            for (std::size_t j = 0; j < 3; ++j) z += alpha.at(t, j) * v.at(j, c);
            const double approx = v.at(0, c) + a.b_O[c] + x.at(t, c);
            CHECK(std::abs(z - approx) < 0.1);
        }
    }
}

TEST_CASE("random encoder layers match the naive oracle")
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const Model m = random_model(rng, {ModelKind::EncoderCtc, 4, 32, 7, trial % 2 == 0});
        const Tensor x = random_tensor({pick(rng, 1, 32), m.spec.d_model}, rng, 2.0);
        const auto cap = encoder_forward(m, x);
        const auto ref = oracle::encoder(m, oracle::to_mat(x));
        for (std::size_t l = 0; l < cap.layers.size(); ++l) {
            CHECK(oracle::max_row_relative_error(cap.layers[l].output, ref.layers[l].output) <= 1e-5);
            for (std::size_t h = 0; h < m.spec.n_heads; ++h) {
                CHECK(oracle::max_row_relative_error(cap.layers[l].self_attention.weights[h],
                                                     ref.layers[l].self_alpha[h]) <= 1e-5);
            }
        }
        CHECK(oracle::max_row_relative_error(cap.logits, ref.logits) <= 1e-5);
    }
}

TEST_CASE("random decoder matches the naive oracle and is causal")
{
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        const Model m = random_model(rng, {ModelKind::EncoderDecoder, 3, 32, 9, trial % 2 == 1});
        const Tensor frames = random_tensor({20, m.spec.d_model}, rng, 2.0);
        const auto enc = encoder_forward(m, frames);
        std::vector<TokenId> tokens{0};
        for (int i = 0; i < 4; ++i) tokens.push_back(static_cast<TokenId>(pick(rng, 3, 8)));
        const auto cap = decoder_forward(m, tokens, enc.output);
        const auto ref = oracle::decoder(m, std::vector<int>(tokens.begin(), tokens.end()), oracle::to_mat(enc.output));
        for (std::size_t l = 0; l < cap.layers.size(); ++l) {
            CHECK(oracle::max_row_relative_error(cap.layers[l].output, ref.layers[l].output) <= 1e-5);
            for (const auto& alpha : cap.layers[l].self_attention.weights) {
                for (std::size_t s = 0; s < alpha.rows(); ++s) {
                    for (std::size_t j = s + 1; j < alpha.cols(); ++j) CHECK(alpha.at(s, j) == 0.0f);
                }
            }
        }
        CHECK(oracle::max_row_relative_error(cap.logits, ref.logits) <= 1e-5);

        // Changing the last token leaves every earlier position bit-identical.
        auto changed = tokens;
        changed.back() = changed.back() == 3 ? 4 : 3;
        const auto cap2 = decoder_forward(m, changed, enc.output);
        for (std::size_t l = 0; l < cap.layers.size(); ++l) {
            for (std::size_t s = 0; s + 1 < tokens.size(); ++s) {
                const auto a = cap.layers[l].output.row(s), b = cap2.layers[l].output.row(s);
                CHECK(std::equal(a.begin(), a.end(), b.begin()));
            }
        }
    }
}

TEST_CASE("zero cross-attention values sever the encoder")
{
    std::mt19937_64 rng(13);
    Model m = random_model(rng, {ModelKind::EncoderDecoder, 2, 16, 5});
    for (auto& layer : m.weights.decoder) {
        layer.cross_attn.W_V = Tensor(layer.cross_attn.W_V.shape());
        layer.cross_attn.b_V = Tensor(layer.cross_attn.b_V.shape());
    }
    const std::vector<TokenId> tokens{0, 3, 4};
    const auto a = decoder_forward(m, tokens, random_tensor({7, m.spec.d_model}, rng, 1.0));
    const auto b = decoder_forward(m, tokens, random_tensor({9, m.spec.d_model}, rng, 1.0));
    for (std::size_t k = 0; k < a.output.size(); ++k) CHECK(std::abs(a.output[k] - b.output[k]) <= 1e-6);
}

TEST_CASE("permuting identical frames permutes outputs")
{
    std::mt19937_64 rng(14);
    const Model m = random_model(rng);
    Tensor x = random_tensor({5, m.spec.d_model}, rng, 1.0);
    std::copy_n(x.row(1).begin(), m.spec.d_model, x.row(3).begin());
    const auto cap = encoder_forward(m, x);
    const auto r1 = cap.output.row(1), r3 = cap.output.row(3);
    for (std::size_t c = 0; c < m.spec.d_model; ++c) CHECK(r1[c] == doctest::Approx(r3[c]).epsilon(1e-6));
}

TEST_CASE("frame count above max_frames is an input error")
{
    std::mt19937_64 rng(15);
    const Model m = random_model(rng);
    try {
        encoder_forward(m, Tensor({m.spec.max_frames + 1, m.spec.d_model}));
        FAIL("expected an input error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Input);
    }
}

TEST_CASE("CTC greedy collapse")
{
    auto onehot = [](std::vector<int> ids) {
        Tensor t({ids.size(), 3});
        for (std::size_t i = 0; i < ids.size(); ++i) t.at(i, static_cast<std::size_t>(ids[i])) = 1.0f;
        return t;
    };
    CHECK(ctc_decode_greedy(onehot({1, 1, 0, 2, 2}), 0) == std::vector<TokenId>{1, 2});
    CHECK(ctc_decode_greedy(onehot({1, 0, 1}), 0) == std::vector<TokenId>{1, 1});
    CHECK(ctc_decode_greedy(onehot({0, 0, 0}), 0).empty());
}

TEST_CASE("generation stops at eos and is deterministic")
{
    std::mt19937_64 rng(16);
    Model m = random_model(rng, {ModelKind::EncoderDecoder, 2, 16, 6});
    m.weights.head_b = Tensor(m.weights.head_b.shape());
    m.weights.head_b[static_cast<std::size_t>(m.spec.eos_id)] = 1e3f;
    const Tensor frames = random_tensor({6, m.spec.d_model}, rng, 1.0);
    const auto g = greedy_generate(m, frames, 10);
    CHECK(g.tokens.empty());
    CHECK(g.steps.size() == 1);
    CHECK_FALSE(g.truncated);

    Model free = random_model(rng, {ModelKind::EncoderDecoder, 2, 16, 6});
    const auto a = greedy_generate(free, frames, 5);
    const auto b = greedy_generate(free, frames, 5);
    CHECK(a.tokens == b.tokens);
    REQUIRE(a.steps.size() == b.steps.size());
    for (std::size_t k = 0; k < a.steps.size(); ++k) CHECK(a.steps[k].output == b.steps[k].output);
}

TEST_CASE("teacher forcing reproduces free generation on its own output")
{
    std::mt19937_64 rng(17);
    const Model m = random_model(rng, {ModelKind::EncoderDecoder, 2, 16, 6});
    const Tensor frames = random_tensor({6, m.spec.d_model}, rng, 1.0);
    const auto free = greedy_generate(m, frames, 6);
    const auto forced = teacher_forced_generation(m, frames, free.tokens);
    REQUIRE(forced.steps.size() >= free.tokens.size());
    for (std::size_t k = 0; k < free.tokens.size(); ++k) CHECK(forced.steps[k].output == free.steps[k].output);
}

TEST_CASE("model directory round trip")
{
    std::mt19937_64 rng(18);
    for (auto kind : {ModelKind::EncoderCtc, ModelKind::EncoderDecoder}) {
        Model m = random_model(rng, {kind, 2, 16, 5, true});
        m.spec.fixed_duration = FixedDuration{};
        const auto dir = std::filesystem::temp_directory_path() / "ctxmix_model_roundtrip";
        std::filesystem::remove_all(dir);
        save_model(dir, m);
        const Model back = load_model(dir);
        CHECK(back.spec == m.spec);
        CHECK(back.vocab.tokens() == m.vocab.tokens());
        const auto a = m.weights.named(m.spec), b = back.weights.named(back.spec);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].first == b[i].first);
            CHECK(*a[i].second == *b[i].second);
        }
        std::filesystem::remove_all(dir);
    }
}

TEST_CASE("bad model specs are rejected")
{
    ModelSpec s;
    s.d_model = 10;
    s.n_heads = 3;
    CHECK_THROWS_AS(s.validate(), Error);
    ModelSpec d;
    d.kind = ModelKind::EncoderDecoder;
    d.decoder_layers = 0;
    CHECK_THROWS_AS(d.validate(), Error);
}

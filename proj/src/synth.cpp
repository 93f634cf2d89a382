#include "ctxmix/synth.hpp"

#include "ctxmix/error.hpp"

#include <cstdio>
#include <random>

namespace ctxmix {

namespace {

// Logit scale of engineered q/k pairs. After the layer-norm difference trick
// a q.k product is a^2 / (sigma_q sigma_k sqrt(d_h)); with sigma < 0.5 on the
// toy frames this keeps the matching-key margin well above 8.
constexpr float kAttentionScale = 4.0f;
constexpr float kIdentityLogit = 10.0f; // word identity -> token
constexpr float kNumberLogit = 4.0f;    // c_num -> singular/plural split
constexpr float kTargetPenalty = 15.0f; // decoder: target forms need identity AND number
constexpr float kBlankBias = 2.0f;

double unit_uniform(std::mt19937_64& rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::size_t pick(std::mt19937_64& rng, std::size_t n)
{
    return static_cast<std::size_t>(rng() % n);
}

std::size_t ident_count(const SynthLexicon& lex)
{
    return lex.fillers.size() + 2 * lex.cues.size() + lex.targets.size() + 1;
}

std::size_t filler_ident(std::size_t f) { return f; }
std::size_t cue_ident(const SynthLexicon& lex, std::size_t c, bool plural)
{
    return lex.fillers.size() + (plural ? lex.cues.size() : 0) + c;
}
std::size_t target_ident(const SynthLexicon& lex, std::size_t t)
{
    return lex.fillers.size() + 2 * lex.cues.size() + t;
}
std::size_t end_ident(const SynthLexicon& lex) { return ident_count(lex) - 1; }

// Every spoken word form with the identity channel it lights up.
struct WordForm {
    std::string text;
    std::size_t ident;
    int number; // +1 singular target form, -1 plural target form, 0 otherwise
};

std::vector<WordForm> word_forms(const SynthLexicon& lex)
{
    std::vector<WordForm> out;
    for (std::size_t f = 0; f < lex.fillers.size(); ++f) out.push_back({lex.fillers[f], filler_ident(f), 0});
    for (std::size_t c = 0; c < lex.cues.size(); ++c) out.push_back({lex.cues[c].singular, cue_ident(lex, c, false), 0});
    for (std::size_t c = 0; c < lex.cues.size(); ++c) out.push_back({lex.cues[c].plural, cue_ident(lex, c, true), 0});
    for (std::size_t t = 0; t < lex.targets.size(); ++t) out.push_back({lex.targets[t].singular, target_ident(lex, t), +1});
    for (std::size_t t = 0; t < lex.targets.size(); ++t) out.push_back({lex.targets[t].plural, target_ident(lex, t), -1});
    return out;
}

std::size_t required_channels(const SynthTaskSpec& spec)
{
    return ident_count(synth_lexicon()) + spec.words_per_utterance + 1 + 5 + spec.noise_channels;
}

// Query/key/value read of channel c through the pre-attention layer norm:
// LN(x)[c] - LN(x)[c_zero] = x[c] / sigma, independent of the row mean.
void read_channel(Tensor& W, std::size_t channel, std::size_t c_zero, std::size_t column, float scale)
{
    W.at(channel, column) += scale;
    W.at(c_zero, column) -= scale;
}

} // namespace

void SynthTaskSpec::validate() const
{
    check(words_per_utterance >= 3, ErrorKind::Input, "synth task needs at least three words per utterance");
    check(frames_per_word >= 1 && end_frames >= 1, ErrorKind::Input, "synth words and end segment need frames");
    check(max_cue_gap >= 1, ErrorKind::Input, "max_cue_gap must be at least 1");
    check(dataset_size >= 2, ErrorKind::Input, "synth dataset needs at least two utterances");
    check(n_heads >= 1 && d_model % n_heads == 0, ErrorKind::Input, "d_model must be divisible by n_heads");
    check(c_num < d_model, ErrorKind::Input, "c_num outside the model dimension");
    check(frame_seconds > 0.0, ErrorKind::Input, "frame_seconds must be positive");
    check(noise_amplitude >= 0.0 && noise_amplitude <= 0.25, ErrorKind::Input, "noise_amplitude must be in [0, 0.25]");
    check(d_model >= required_channels(*this), ErrorKind::Input,
          "d_model " + std::to_string(d_model) + " too small for the toy layout (needs " +
              std::to_string(required_channels(*this)) + ")");
}

const SynthLexicon& synth_lexicon()
{
    static const SynthLexicon lex{
        {"hier", "souvent", "ici", "encore", "puis", "vraiment"},
        {{"le", "les", Pattern::DetNoun},
         {"son", "ses", Pattern::DetNoun},
         {"il", "ils", Pattern::PronounVerb},
         {"elle", "elles", Pattern::PronounVerb}},
        {{"livre", "livres", Pattern::DetNoun},
         {"porte", "portes", Pattern::DetNoun},
         {"chante", "chantent", Pattern::PronounVerb},
         {"parle", "parlent", Pattern::PronounVerb}},
    };
    return lex;
}

ChannelLayout channel_layout(const SynthTaskSpec& spec)
{
    spec.validate();
    std::size_t next = 0;
    auto take = [&] {
        if (next == spec.c_num) ++next;
        return next++;
    };
    ChannelLayout l;
    l.c_num = spec.c_num;
    for (std::size_t i = 0; i < ident_count(synth_lexicon()); ++i) l.ident.push_back(take());
    for (std::size_t i = 0; i <= spec.words_per_utterance; ++i) l.slot.push_back(take());
    l.c_cue = take();
    l.c_tgt = take();
    l.c_zero = take();
    l.c_bias = take();
    for (std::size_t i = 0; i < spec.noise_channels; ++i) l.noise.push_back(take());
    return l;
}

std::vector<Utterance> gen_dataset(const SynthTaskSpec& spec)
{
    const ChannelLayout layout = channel_layout(spec);
    const SynthLexicon& lex = synth_lexicon();
    const std::size_t W = spec.words_per_utterance;
    const std::size_t F = spec.frames_per_word;
    const std::size_t T = spec.frames_per_utterance();
    std::mt19937_64 rng(spec.seed);

    auto noise_row = [&](std::mt19937_64& source) {
        std::vector<float> v(spec.noise_channels);
        for (auto& x : v) x = static_cast<float>(spec.noise_amplitude * (2.0 * unit_uniform(source) - 1.0));
        return v;
    };

    std::vector<Utterance> out;
    for (std::size_t pair = 0; out.size() < spec.dataset_size; ++pair) {
        const std::size_t cue = pick(rng, lex.cues.size());
        const Pattern pattern = lex.cues[cue].pattern;
        std::vector<std::size_t> matching;
        for (std::size_t t = 0; t < lex.targets.size(); ++t) {
            if (lex.targets[t].pattern == pattern) matching.push_back(t);
        }
        const std::size_t target = matching[pick(rng, matching.size())];
        const std::size_t cue_pos = pick(rng, W - 1);
        const std::size_t gap = std::min(1 + pick(rng, spec.max_cue_gap), W - 1 - cue_pos);
        const std::size_t target_pos = cue_pos + gap;

        // Fillers elsewhere; never the same filler twice in a row, so CTC
        // collapsing cannot merge neighbouring words.
        std::vector<std::ptrdiff_t> filler(W, -1);
        for (std::size_t i = 0; i < W; ++i) {
            if (i == cue_pos || i == target_pos) continue;
            std::size_t f;
            do {
                f = pick(rng, lex.fillers.size());
            } while (i > 0 && filler[i - 1] == static_cast<std::ptrdiff_t>(f));
            filler[i] = static_cast<std::ptrdiff_t>(f);
        }

        std::vector<std::vector<float>> noise(T);
        for (auto& n : noise) n = noise_row(rng);
        // Target frames depend on the lexeme only (homophone property).
        std::mt19937_64 target_rng(spec.seed ^ (0x9E3779B97F4A7C15ULL * (target + 1)));
        for (std::size_t f = 0; f < F; ++f) noise[target_pos * F + f] = noise_row(target_rng);

        for (int sign : {+1, -1}) {
            if (out.size() == spec.dataset_size) break;
            const bool plural = sign < 0;
            Tensor frames({T, spec.d_model});
            UtteranceManifest m;
            char id[32];
            std::snprintf(id, sizeof id, "syn%04zu", out.size());
            m.id = id;
            m.frames_file = "frames/" + m.id + ".ctxt";
            m.cue_idx = cue_pos;
            m.target_idx = target_pos;
            m.label = plural ? NumberLabel::Plural : NumberLabel::Singular;
            m.pattern = pattern;
            for (std::size_t i = 0; i <= W; ++i) {
                std::size_t ident;
                std::string text;
                if (i == W) {
                    ident = end_ident(lex);
                } else if (i == cue_pos) {
                    ident = cue_ident(lex, cue, plural);
                    text = plural ? lex.cues[cue].plural : lex.cues[cue].singular;
                } else if (i == target_pos) {
                    ident = target_ident(lex, target);
                    text = plural ? lex.targets[target].plural : lex.targets[target].singular;
                } else {
                    ident = filler_ident(static_cast<std::size_t>(filler[i]));
                    text = lex.fillers[static_cast<std::size_t>(filler[i])];
                }
                const std::size_t begin = i * F;
                const std::size_t end = i == W ? T : begin + F;
                for (std::size_t t = begin; t < end; ++t) {
                    auto row = frames.row(t);
                    row[layout.ident[ident]] = 1.0f;
                    row[layout.slot[i]] = 1.0f;
                    row[layout.c_bias] = 1.0f;
                    if (i == cue_pos) {
                        row[layout.c_cue] = 1.0f;
                        row[layout.c_num] = static_cast<float>(sign);
                    }
                    if (i == target_pos) row[layout.c_tgt] = 1.0f;
                    if (i < W) {
                        for (std::size_t k = 0; k < spec.noise_channels; ++k) row[layout.noise[k]] = noise[t][k];
                    }
                }
                if (i < W) {
                    m.words.push_back({text, static_cast<double>(begin) * spec.frame_seconds,
                                       static_cast<double>(end) * spec.frame_seconds});
                    m.dec_spans.push_back({i, i + 1});
                }
            }
            out.push_back({std::move(m), std::move(frames)});
        }
        (void)pair;
    }
    return out;
}

namespace {

ModelSpec base_spec(const SynthTaskSpec& spec, ModelKind kind, std::size_t vocab_size)
{
    ModelSpec s;
    s.kind = kind;
    s.encoder_layers = spec.encoder_layers;
    s.d_model = spec.d_model;
    s.n_heads = spec.n_heads;
    s.d_ff = 4;
    s.vocab_size = vocab_size;
    s.max_frames = std::max<std::size_t>(64, spec.frames_per_utterance());
    s.max_tokens = std::max<std::size_t>(16, spec.words_per_utterance + 2);
    s.frame_seconds = spec.frame_seconds;
    return s;
}

} // namespace

CueCopyModel build_cue_copy_encoder(const SynthTaskSpec& spec)
{
    const ChannelLayout L = channel_layout(spec);
    check(spec.copy_layer >= 1 && spec.copy_layer <= spec.encoder_layers, ErrorKind::Input,
          "copy_layer outside the encoder stack");
    const SynthLexicon& lex = synth_lexicon();
    const auto forms = word_forms(lex);

    std::vector<std::string> tokens{"<blank>"};
    for (const auto& f : forms) tokens.push_back(f.text);
    ModelSpec ms = base_spec(spec, ModelKind::EncoderCtc, tokens.size());
    ms.blank_id = 0;
    ms.validate();

    // Zero output projections everywhere else: those layers are exact identities.
    WeightSet w = zero_weights(ms);
    const std::size_t l = spec.copy_layer - 1;
    auto& mha = w.encoder[l].mha;
    read_channel(mha.W_Q, L.c_tgt, L.c_zero, 0, kAttentionScale);
    read_channel(mha.W_K, L.c_cue, L.c_zero, 0, kAttentionScale);
    read_channel(mha.W_V, L.c_num, L.c_zero, 0, 1.0f);
    mha.W_O.at(0, L.c_num) = 1.0f;

    w.ctc_b[0] = kBlankBias;
    w.ctc_W.at(L.ident[end_ident(lex)], 0) = kIdentityLogit;
    for (std::size_t i = 0; i < forms.size(); ++i) {
        const std::size_t tok = i + 1;
        w.ctc_W.at(L.ident[forms[i].ident], tok) = kIdentityLogit;
        if (forms[i].number != 0) w.ctc_W.at(L.c_num, tok) = kNumberLogit * static_cast<float>(forms[i].number);
    }
    check_weight_shapes(ms, w);
    return {Model{ms, std::move(w), Vocabulary(tokens)}, l};
}

CueCopyModel build_cue_copy_encdec(const SynthTaskSpec& spec)
{
    const ChannelLayout L = channel_layout(spec);
    check(spec.decoder_layers >= 2, ErrorKind::Input, "encoder-decoder toy needs two decoder layers");
    check(spec.decoder_copy_layer >= 2 && spec.decoder_copy_layer <= spec.decoder_layers, ErrorKind::Input,
          "decoder_copy_layer must follow the first (cross-attention) layer");
    const SynthLexicon& lex = synth_lexicon();
    const auto forms = word_forms(lex);
    const std::size_t dh = spec.d_model / spec.n_heads;
    check(ident_count(lex) <= dh && spec.words_per_utterance + 1 <= dh, ErrorKind::Input,
          "head dimension too small to route word identities");

    std::vector<std::string> tokens{"<bos>", "<eos>", "<unk>"};
    for (const auto& f : forms) tokens.push_back("\xe2\x96\x81" + f.text);
    ModelSpec ms = base_spec(spec, ModelKind::EncoderDecoder, tokens.size());
    ms.decoder_layers = spec.decoder_layers;
    ms.bos_id = 0;
    ms.eos_id = 1;
    ms.unk_id = 2;
    ms.blank_id = 2;
    ms.validate();

    WeightSet w = zero_weights(ms); // identity encoder
    const std::size_t first = 3;

    // Embeddings: every token lights c_bias; cue tokens also carry c_cue and
    // their number on c_num. unk carries nothing else.
    for (std::size_t t = 0; t < tokens.size(); ++t) w.token_embedding.at(t, L.c_bias) = 1.0f;
    for (std::size_t i = 0; i < forms.size(); ++i) {
        for (std::size_t c = 0; c < lex.cues.size(); ++c) {
            const bool sing = forms[i].ident == cue_ident(lex, c, false);
            const bool plur = forms[i].ident == cue_ident(lex, c, true);
            if (!sing && !plur) continue;
            w.token_embedding.at(first + i, L.c_cue) = 1.0f;
            w.token_embedding.at(first + i, L.c_num) = sing ? 1.0f : -1.0f;
        }
    }
    // Decoder position k predicts word k, so it looks up encoder slot k.
    for (std::size_t k = 0; k < L.slot.size() && k < ms.max_tokens; ++k) w.position_embedding.at(k, L.slot[k]) = 1.0f;

    // Layer 1 cross-attention: slot match against the raw encoder output,
    // value = word identity (never number).
    auto& cross = w.decoder[0].cross_attn;
    for (std::size_t s = 0; s < L.slot.size(); ++s) {
        read_channel(cross.W_Q, L.slot[s], L.c_zero, s, kAttentionScale);
        cross.W_K.at(L.slot[s], s) = kAttentionScale;
    }
    for (std::size_t i = 0; i < L.ident.size(); ++i) {
        cross.W_V.at(L.ident[i], i) = 1.0f;
        cross.W_O.at(i, L.ident[i]) = 1.0f;
    }

    // Copy layer self-attention: every position looks for the cue token in its
    // prefix and copies its number.
    auto& self = w.decoder[spec.decoder_copy_layer - 1].self_attn;
    read_channel(self.W_Q, L.c_bias, L.c_zero, 0, kAttentionScale);
    read_channel(self.W_K, L.c_cue, L.c_zero, 0, kAttentionScale);
    read_channel(self.W_V, L.c_num, L.c_zero, 0, 1.0f);
    self.W_O.at(0, L.c_num) = 1.0f;

    w.head_W.at(L.ident[end_ident(lex)], ms.eos_id) = kIdentityLogit;
    for (std::size_t i = 0; i < forms.size(); ++i) {
        const std::size_t tok = first + i;
        w.head_W.at(L.ident[forms[i].ident], tok) = kIdentityLogit;
        if (forms[i].number != 0) {
            w.head_W.at(L.c_num, tok) = kNumberLogit * static_cast<float>(forms[i].number);
            w.head_b[tok] = -kTargetPenalty;
        }
    }
    check_weight_shapes(ms, w);
    return {Model{ms, std::move(w), Vocabulary(tokens)}, spec.decoder_copy_layer - 1};
}

void write_task(const std::filesystem::path& dir, const Model& model, const std::vector<Utterance>& data)
{
    save_model(dir / "model", model);
    std::filesystem::create_directories(dir / "frames");
    std::vector<UtteranceManifest> manifests;
    for (const auto& u : data) {
        write_tensor(dir / u.manifest.frames_file, u.frames);
        manifests.push_back(u.manifest);
    }
    save_manifests(dir / "manifest.jsonl", manifests);
}

} // namespace ctxmix

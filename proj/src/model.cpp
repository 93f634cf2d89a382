#include "ctxmix/model.hpp"

#include "ctxmix/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ctxmix {

const char* to_string(ModelKind kind)
{
    return kind == ModelKind::EncoderCtc ? "encoder-ctc" : "encoder-decoder";
}

ModelKind parse_model_kind(const std::string& text)
{
    if (text == "encoder-ctc") return ModelKind::EncoderCtc;
    if (text == "encoder-decoder") return ModelKind::EncoderDecoder;
    fail(ErrorKind::Input, "unknown model kind '" + text + "'");
}

void ModelSpec::validate() const
{
    check(d_model >= 2, ErrorKind::Input, "d_model must be at least 2");
    check(n_heads >= 1 && d_model % n_heads == 0, ErrorKind::Input, "d_model must be divisible by n_heads");
    check(encoder_layers >= 1, ErrorKind::Input, "encoder needs at least one layer");
    check(d_ff >= 1, ErrorKind::Input, "d_ff must be positive");
    check(vocab_size >= 1, ErrorKind::Input, "vocab_size must be positive");
    check(max_frames >= 1, ErrorKind::Input, "max_frames must be positive");
    check(frame_seconds > 0.0, ErrorKind::Input, "frame_seconds must be positive");
    auto in_vocab = [this](TokenId id) { return id >= 0 && static_cast<std::size_t>(id) < vocab_size; };
    if (kind == ModelKind::EncoderCtc) {
        check(in_vocab(blank_id), ErrorKind::Input, "blank_id outside vocabulary");
    } else {
        check(decoder_layers >= 1, ErrorKind::Input, "decoder needs at least one layer");
        check(in_vocab(bos_id) && in_vocab(eos_id) && in_vocab(unk_id), ErrorKind::Input,
              "bos/eos/unk ids outside vocabulary");
        check(max_tokens >= 2, ErrorKind::Input, "max_tokens must allow bos plus one token");
    }
    if (fixed_duration) {
        check(fixed_duration->frames > 0 && fixed_duration->seconds > 0.0, ErrorKind::Input,
              "fixed duration needs positive frames and seconds");
    }
}

Tensor AttentionWeights::output_head(std::size_t head, std::size_t head_dim) const
{
    return W_O.slice_rows(head * head_dim, (head + 1) * head_dim);
}

namespace {

void push_norm(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix, NormWeights& n)
{
    out.emplace_back(prefix + ".gain", &n.gain);
    out.emplace_back(prefix + ".bias", &n.bias);
}

void push_attention(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix,
                    AttentionWeights& a)
{
    out.emplace_back(prefix + "W_Q", &a.W_Q);
    out.emplace_back(prefix + "b_Q", &a.b_Q);
    out.emplace_back(prefix + "W_K", &a.W_K);
    out.emplace_back(prefix + "b_K", &a.b_K);
    out.emplace_back(prefix + "W_V", &a.W_V);
    out.emplace_back(prefix + "b_V", &a.b_V);
    out.emplace_back(prefix + "W_O", &a.W_O);
    out.emplace_back(prefix + "b_O", &a.b_O);
}

void push_ffn(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix, FeedForwardWeights& f)
{
    out.emplace_back(prefix + "W_1", &f.W_1);
    out.emplace_back(prefix + "b_1", &f.b_1);
    out.emplace_back(prefix + "W_2", &f.W_2);
    out.emplace_back(prefix + "b_2", &f.b_2);
}

} // namespace

std::vector<std::pair<std::string, Tensor*>> WeightSet::named_mut(const ModelSpec& spec)
{
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t l = 0; l < encoder.size(); ++l) {
        const std::string p = "enc." + std::to_string(l) + ".";
        auto& layer = encoder[l];
        push_norm(out, p + "ln_mha", layer.ln_mha);
        push_attention(out, p, layer.mha);
        push_norm(out, p + "ln_ffn", layer.ln_ffn);
        push_ffn(out, p, layer.ffn);
    }
    if (encoder_final) push_norm(out, "enc.ln_final", *encoder_final);
    if (spec.kind == ModelKind::EncoderCtc) {
        out.emplace_back("ctc.W", &ctc_W);
        out.emplace_back("ctc.b", &ctc_b);
        return out;
    }
    for (std::size_t l = 0; l < decoder.size(); ++l) {
        const std::string p = "dec." + std::to_string(l) + ".";
        auto& layer = decoder[l];
        push_norm(out, p + "ln_self", layer.ln_self);
        push_attention(out, p + "self.", layer.self_attn);
        push_norm(out, p + "ln_cross", layer.ln_cross);
        push_attention(out, p + "cross.", layer.cross_attn);
        push_norm(out, p + "ln_ffn", layer.ln_ffn);
        push_ffn(out, p, layer.ffn);
    }
    if (decoder_final) push_norm(out, "dec.ln_final", *decoder_final);
    out.emplace_back("dec.embed", &token_embedding);
    out.emplace_back("dec.pos", &position_embedding);
    out.emplace_back("dec.head.W", &head_W);
    out.emplace_back("dec.head.b", &head_b);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> WeightSet::named(const ModelSpec& spec) const
{
    auto mut = const_cast<WeightSet*>(this)->named_mut(spec);
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [name, ptr] : mut) out.emplace_back(name, ptr);
    return out;
}

namespace {

NormWeights unit_norm(std::size_t d)
{
    return {Tensor::filled({d}, 1.0f), Tensor({d})};
}

AttentionWeights zero_attention(std::size_t d)
{
    AttentionWeights a;
    a.W_Q = Tensor({d, d});
    a.W_K = Tensor({d, d});
    a.W_V = Tensor({d, d});
    a.W_O = Tensor({d, d});
    a.b_Q = Tensor({d});
    a.b_K = Tensor({d});
    a.b_V = Tensor({d});
    a.b_O = Tensor({d});
    return a;
}

FeedForwardWeights zero_ffn(std::size_t d, std::size_t d_ff)
{
    return {Tensor({d, d_ff}), Tensor({d_ff}), Tensor({d_ff, d}), Tensor({d})};
}

} // namespace

WeightSet zero_weights(const ModelSpec& spec)
{
    spec.validate();
    const std::size_t d = spec.d_model;
    WeightSet w;
    for (std::size_t l = 0; l < spec.encoder_layers; ++l) {
        w.encoder.push_back({unit_norm(d), zero_attention(d), unit_norm(d), zero_ffn(d, spec.d_ff)});
    }
    if (spec.final_norm) w.encoder_final = unit_norm(d);
    if (spec.kind == ModelKind::EncoderCtc) {
        w.ctc_W = Tensor({d, spec.vocab_size});
        w.ctc_b = Tensor({spec.vocab_size});
        return w;
    }
    for (std::size_t l = 0; l < spec.decoder_layers; ++l) {
        w.decoder.push_back({unit_norm(d), zero_attention(d), unit_norm(d), zero_attention(d), unit_norm(d),
                             zero_ffn(d, spec.d_ff)});
    }
    if (spec.final_norm) w.decoder_final = unit_norm(d);
    w.token_embedding = Tensor({spec.vocab_size, d});
    w.position_embedding = Tensor({spec.max_tokens, d});
    w.head_W = Tensor({d, spec.vocab_size});
    w.head_b = Tensor({spec.vocab_size});
    return w;
}

void check_weight_shapes(const ModelSpec& spec, const WeightSet& weights)
{
    spec.validate();
    check(weights.encoder.size() == spec.encoder_layers, ErrorKind::Input, "encoder layer count mismatch");
    if (spec.has_decoder()) {
        check(weights.decoder.size() == spec.decoder_layers, ErrorKind::Input, "decoder layer count mismatch");
    }
    check(weights.encoder_final.has_value() == spec.final_norm, ErrorKind::Input, "encoder final norm mismatch");
    if (spec.has_decoder()) {
        check(weights.decoder_final.has_value() == spec.final_norm, ErrorKind::Input,
              "decoder final norm mismatch");
    }
    const auto expected = zero_weights(spec);
    const auto want = expected.named(spec);
    const auto have = weights.named(spec);
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (want[i].second->shape() != have[i].second->shape()) {
            fail(ErrorKind::Input, "parameter " + want[i].first + " has shape " +
                                       shape_string(have[i].second->shape()) + ", expected " +
                                       shape_string(want[i].second->shape()));
        }
    }
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens))
{
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        index_.emplace(tokens_[i], static_cast<TokenId>(i));
    }
}

const std::string& Vocabulary::token(TokenId id) const
{
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        fail(ErrorKind::Range, "token id " + std::to_string(id) + " outside vocabulary");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(const std::string& token) const
{
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

// ---------------------------------------------------------------------------

namespace {

struct AttentionContext {
    const char* sublayer;
};

// q/k/v projections, scaled dot-product softmax per head, then the
// weighted value sum projected through W_O (bias b_O added once).
// Returns the sublayer output without the residual term.
Tensor multi_head_attention(const Tensor& query_src, const Tensor& kv_src, const AttentionWeights& w,
                            std::size_t n_heads, bool causal, AttentionCapture* capture, const ValueMask* zero_values,
                            AttentionContext ctx)
{
    const std::size_t tq = query_src.rows();
    const std::size_t tk = kv_src.rows();
    const std::size_t d = query_src.cols();
    const std::size_t dh = d / n_heads;

    const Tensor q = linear(query_src, w.W_Q, w.b_Q);
    const Tensor k = linear(kv_src, w.W_K, w.b_K);
    Tensor v = linear(kv_src, w.W_V, w.b_V);
    if (zero_values) {
        check(zero_values->size() == tk, ErrorKind::Dimension, "value mask length does not match key count");
        for (std::size_t j = 0; j < tk; ++j) {
            if ((*zero_values)[j]) std::fill(v.row(j).begin(), v.row(j).end(), 0.0f);
        }
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor context({tq, d});
    if (capture) {
        capture->weights.clear();
        capture->values.clear();
    }
    std::vector<double> logits(tk);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t off = h * dh;
        Tensor alpha({tq, tk});
        for (std::size_t i = 0; i < tq; ++i) {
            const std::size_t visible = causal ? std::min(i + 1, tk) : tk;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < visible; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) {
                    s += static_cast<double>(q.at(i, off + c)) * k.at(j, off + c);
                }
                logits[j] = s * scale;
                mx = std::max(mx, logits[j]);
            }
            if (!std::isfinite(mx)) {
                fail(ErrorKind::Numeric, std::string(ctx.sublayer) + " head " + std::to_string(h) +
                                             ": non-finite attention logit");
            }
            double total = 0.0;
            for (std::size_t j = 0; j < visible; ++j) {
                logits[j] = std::exp(logits[j] - mx);
                total += logits[j];
            }
            for (std::size_t j = 0; j < visible; ++j) alpha.at(i, j) = static_cast<float>(logits[j] / total);
        }
        for (std::size_t i = 0; i < tq; ++i) {
            for (std::size_t c = 0; c < dh; ++c) {
                double s = 0.0;
                for (std::size_t j = 0; j < tk; ++j) s += static_cast<double>(alpha.at(i, j)) * v.at(j, off + c);
                context.at(i, off + c) = static_cast<float>(s);
            }
        }
        if (!context.all_finite()) {
            fail(ErrorKind::Numeric, std::string(ctx.sublayer) + " head " + std::to_string(h) +
                                         ": non-finite context vector");
        }
        if (capture) {
            capture->weights.push_back(std::move(alpha));
            capture->values.push_back(v.slice_cols(off, off + dh));
        }
    }
    return linear(context, w.W_O, w.b_O);
}

Tensor feed_forward(const Tensor& z, const NormWeights& ln, const FeedForwardWeights& f)
{
    const Tensor hidden = gelu(linear(layer_norm_rows(z, ln.gain, ln.bias), f.W_1, f.b_1));
    return add(linear(hidden, f.W_2, f.b_2), z);
}

[[noreturn]] void rethrow_with_layer(const Error& e, const char* stack, std::size_t layer)
{
    fail(e.kind(), std::string(stack) + " layer " + std::to_string(layer) + ": " + e.what());
}

} // namespace

Tensor encoder_layer_forward(const Tensor& x, const EncoderLayerWeights& w, std::size_t n_heads,
                             LayerCapture* capture, const ValueMask* zero_values)
{
    check(x.rank() == 2 && x.cols() == w.ln_mha.gain.size(), ErrorKind::Dimension,
          "encoder layer input has shape " + shape_string(x.shape()));
    const Tensor normed = layer_norm_rows(x, w.ln_mha.gain, w.ln_mha.bias);
    AttentionCapture* attn_cap = capture ? &capture->self_attention : nullptr;
    const Tensor z = add(multi_head_attention(normed, normed, w.mha, n_heads, false, attn_cap, zero_values,
                                              {"self-attention"}),
                         x);
    Tensor out = feed_forward(z, w.ln_ffn, w.ffn);
    if (capture) {
        capture->input = x;
        capture->cross_attention.reset();
        capture->output = out;
    }
    return out;
}

Tensor decoder_layer_forward(const Tensor& y, const Tensor& enc_out, const DecoderLayerWeights& w,
                             std::size_t n_heads, LayerCapture* capture, const ValueMask* zero_self_values,
                             const ValueMask* zero_cross_values)
{
    check(y.rank() == 2 && y.cols() == w.ln_self.gain.size(), ErrorKind::Dimension,
          "decoder layer input has shape " + shape_string(y.shape()));
    check(enc_out.rank() == 2 && enc_out.cols() == y.cols(), ErrorKind::Dimension,
          "encoder output width does not match decoder width");

    AttentionCapture* self_cap = capture ? &capture->self_attention : nullptr;
    const Tensor normed_self = layer_norm_rows(y, w.ln_self.gain, w.ln_self.bias);
    const Tensor z1 = add(multi_head_attention(normed_self, normed_self, w.self_attn, n_heads, true, self_cap,
                                               zero_self_values, {"masked self-attention"}),
                          y);

    AttentionCapture cross_cap;
    const Tensor normed_cross = layer_norm_rows(z1, w.ln_cross.gain, w.ln_cross.bias);
    const Tensor z2 = add(multi_head_attention(normed_cross, enc_out, w.cross_attn, n_heads, false,
                                               capture ? &cross_cap : nullptr, zero_cross_values,
                                               {"cross-attention"}),
                          z1);

    Tensor out = feed_forward(z2, w.ln_ffn, w.ffn);
    if (capture) {
        capture->input = y;
        capture->cross_attention = std::move(cross_cap);
        capture->output = out;
    }
    return out;
}

namespace {

const ValueMask* mask_for(const ValueIntervention* iv, std::size_t layer, Sublayer sublayer)
{
    if (iv && iv->layer == layer && iv->sublayer == sublayer) return &iv->zeroed;
    return nullptr;
}

} // namespace

ForwardCapture encoder_forward(const Model& model, const Tensor& frames, const ValueIntervention* intervention)
{
    const auto& spec = model.spec;
    check(frames.rank() == 2 && frames.cols() == spec.d_model, ErrorKind::Input,
          "frames must be [T x " + std::to_string(spec.d_model) + "], got " + shape_string(frames.shape()));
    check(frames.rows() >= 1, ErrorKind::Input, "empty frame sequence");
    check(frames.rows() <= spec.max_frames, ErrorKind::Input,
          "frame count " + std::to_string(frames.rows()) + " exceeds max_frames " + std::to_string(spec.max_frames));
    check(frames.all_finite(), ErrorKind::Input, "frames contain non-finite values");
    if (intervention) {
        check(intervention->sublayer == Sublayer::SelfAttention && intervention->layer < spec.encoder_layers,
              ErrorKind::Usage, "encoder intervention must target an encoder self-attention layer");
    }

    ForwardCapture cap;
    cap.layers.resize(spec.encoder_layers);
    Tensor x = frames;
    for (std::size_t l = 0; l < spec.encoder_layers; ++l) {
        try {
            x = encoder_layer_forward(x, model.weights.encoder[l], spec.n_heads, &cap.layers[l],
                                      mask_for(intervention, l, Sublayer::SelfAttention));
        } catch (const Error& e) {
            rethrow_with_layer(e, "encoder", l);
        }
    }
    if (model.weights.encoder_final) {
        x = layer_norm_rows(x, model.weights.encoder_final->gain, model.weights.encoder_final->bias);
    }
    cap.output = x;
    if (spec.kind == ModelKind::EncoderCtc) cap.logits = linear(x, model.weights.ctc_W, model.weights.ctc_b);
    return cap;
}

ForwardCapture decoder_forward(const Model& model, std::span<const TokenId> tokens, const Tensor& enc_out,
                               const ValueIntervention* intervention)
{
    const auto& spec = model.spec;
    check(spec.has_decoder(), ErrorKind::Usage, "decoder pass on an encoder-only model");
    check(!tokens.empty(), ErrorKind::Input, "decoder needs at least one input token");
    check(tokens.size() <= spec.max_tokens, ErrorKind::Input, "token sequence exceeds max_tokens");
    if (intervention) {
        check(intervention->layer < spec.decoder_layers, ErrorKind::Usage, "intervention layer out of range");
    }
    const std::size_t d = spec.d_model;
    Tensor y({tokens.size(), d});
    for (std::size_t s = 0; s < tokens.size(); ++s) {
        const TokenId t = tokens[s];
        check(t >= 0 && static_cast<std::size_t>(t) < spec.vocab_size, ErrorKind::Input,
              "token id " + std::to_string(t) + " outside vocabulary");
        const auto emb = model.weights.token_embedding.row(static_cast<std::size_t>(t));
        const auto pos = model.weights.position_embedding.row(s);
        auto out = y.row(s);
        for (std::size_t c = 0; c < d; ++c) out[c] = emb[c] + pos[c];
    }

    ForwardCapture cap;
    cap.layers.resize(spec.decoder_layers);
    for (std::size_t l = 0; l < spec.decoder_layers; ++l) {
        try {
            y = decoder_layer_forward(y, enc_out, model.weights.decoder[l], spec.n_heads, &cap.layers[l],
                                      mask_for(intervention, l, Sublayer::SelfAttention),
                                      mask_for(intervention, l, Sublayer::CrossAttention));
        } catch (const Error& e) {
            rethrow_with_layer(e, "decoder", l);
        }
    }
    if (model.weights.decoder_final) {
        y = layer_norm_rows(y, model.weights.decoder_final->gain, model.weights.decoder_final->bias);
    }
    cap.output = y;
    cap.logits = linear(y, model.weights.head_W, model.weights.head_b);
    return cap;
}

std::vector<TokenId> argmax_rows(const Tensor& logits)
{
    std::vector<TokenId> out;
    out.reserve(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const auto row = logits.row(r);
        out.push_back(static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
    return out;
}

std::vector<TokenId> ctc_decode_greedy(const Tensor& logits, TokenId blank_id)
{
    std::vector<TokenId> out;
    TokenId prev = -1;
    for (TokenId t : argmax_rows(logits)) {
        if (t != prev && t != blank_id) out.push_back(t);
        prev = t;
    }
    return out;
}

GenerationResult greedy_generate(const Model& model, const Tensor& frames, std::size_t max_steps)
{
    check(model.spec.has_decoder(), ErrorKind::Usage, "greedy_generate requires an encoder-decoder model");
    GenerationResult result;
    result.encoder = encoder_forward(model, frames);
    std::vector<TokenId> input{model.spec.bos_id};
    result.truncated = true;
    for (std::size_t step = 0; step < max_steps && input.size() <= model.spec.max_tokens; ++step) {
        ForwardCapture cap = decoder_forward(model, input, result.encoder.output);
        const auto last = cap.logits.row(cap.logits.rows() - 1);
        const auto next = static_cast<TokenId>(std::max_element(last.begin(), last.end()) - last.begin());
        result.step_logits.emplace_back(Shape{last.size()}, std::vector<float>(last.begin(), last.end()));
        result.steps.push_back(std::move(cap));
        if (next == model.spec.eos_id) {
            result.truncated = false;
            break;
        }
        result.tokens.push_back(next);
        input.push_back(next);
    }
    return result;
}

GenerationResult teacher_forced_generation(const Model& model, const Tensor& frames, std::span<const TokenId> tokens)
{
    check(model.spec.has_decoder(), ErrorKind::Usage, "teacher forcing requires an encoder-decoder model");
    check(tokens.size() + 1 <= model.spec.max_tokens, ErrorKind::Input, "forced tokens exceed max_tokens");
    GenerationResult result;
    result.encoder = encoder_forward(model, frames);
    result.tokens.assign(tokens.begin(), tokens.end());
    std::vector<TokenId> input{model.spec.bos_id};
    for (std::size_t step = 0; step <= tokens.size(); ++step) {
        ForwardCapture cap = decoder_forward(model, input, result.encoder.output);
        const auto last = cap.logits.row(cap.logits.rows() - 1);
        result.step_logits.emplace_back(Shape{last.size()}, std::vector<float>(last.begin(), last.end()));
        result.steps.push_back(std::move(cap));
        if (step < tokens.size()) input.push_back(tokens[step]);
    }
    return result;
}

Tensor next_token_distribution(const Model& model, const Tensor& frames, std::span<const TokenId> prefix)
{
    const ForwardCapture enc = encoder_forward(model, frames);
    std::vector<TokenId> input{model.spec.bos_id};
    input.insert(input.end(), prefix.begin(), prefix.end());
    const ForwardCapture dec = decoder_forward(model, input, enc.output);
    const auto last = dec.logits.row(dec.logits.rows() - 1);
    return softmax_last(Tensor({last.size()}, std::vector<float>(last.begin(), last.end())));
}

} // namespace ctxmix

#include "ctxmix/mixing.hpp"

#include "ctxmix/error.hpp"

#include <map>
#include <memory>
#include <numeric>

namespace ctxmix {

const char* to_string(Method method)
{
    switch (method) {
    case Method::Attn: return "attn";
    case Method::AttnNorm: return "an";
    case Method::ValueZeroing: return "vz";
    }
    return "?";
}

const char* to_string(Scope scope)
{
    switch (scope) {
    case Scope::WithinEncoder: return "within-encoder";
    case Scope::WithinDecoder: return "within-decoder";
    case Scope::Cross: return "cross";
    }
    return "?";
}

Method parse_method(const std::string& text)
{
    if (text == "attn") return Method::Attn;
    if (text == "an") return Method::AttnNorm;
    if (text == "vz") return Method::ValueZeroing;
    fail(ErrorKind::Usage, "unknown method '" + text + "' (expected attn, an, vz)");
}

Scope parse_scope(const std::string& text)
{
    if (text == "within-encoder") return Scope::WithinEncoder;
    if (text == "within-decoder") return Scope::WithinDecoder;
    if (text == "cross") return Scope::Cross;
    fail(ErrorKind::Usage, "unknown scope '" + text + "' (expected within-encoder, within-decoder, cross)");
}

namespace {

// One attention sublayer seen from a set of query positions.
class LayerView {
public:
    LayerView(const AttentionCapture& attn, const AttentionWeights* weights, const Tensor* original, LayerRerun rerun)
        : attn_(attn), weights_(weights), original_(original), rerun_(std::move(rerun))
    {
        check(!attn_.weights.empty(), ErrorKind::Usage, "attention capture is empty");
    }

    const AttentionCapture& attn() const { return attn_; }
    std::size_t heads() const { return attn_.weights.size(); }
    std::size_t n_queries() const { return attn_.weights.front().rows(); }
    std::size_t n_keys() const { return attn_.weights.front().cols(); }
    const Tensor& original() const { return *original_; }

    // ||v^h_m W_O^h|| for every head and key.
    const std::vector<std::vector<double>>& value_norms()
    {
        if (!norms_.empty()) return norms_;
        check(weights_ != nullptr, ErrorKind::Usage, "attention norm needs the output projection");
        const std::size_t dh = attn_.values.front().cols();
        norms_.resize(heads());
        for (std::size_t h = 0; h < heads(); ++h) {
            const Tensor projected = matmul(attn_.values[h], weights_->output_head(h, dh));
            norms_[h].resize(projected.rows());
            for (std::size_t m = 0; m < projected.rows(); ++m) norms_[h][m] = euclidean_norm(projected.row(m));
        }
        return norms_;
    }

    const Tensor& zeroed_output(const Span& keys)
    {
        const auto key = std::make_pair(keys.begin, keys.end);
        auto it = reruns_.find(key);
        if (it != reruns_.end()) return it->second;
        check(static_cast<bool>(rerun_), ErrorKind::Usage, "value zeroing needs a layer re-run");
        ValueMask mask(n_keys(), false);
        for (std::size_t m = keys.begin; m < keys.end; ++m) mask[m] = true;
        return reruns_.emplace(key, rerun_(mask)).first->second;
    }

private:
    const AttentionCapture& attn_;
    const AttentionWeights* weights_;
    const Tensor* original_;
    LayerRerun rerun_;
    std::vector<std::vector<double>> norms_;
    std::map<std::pair<std::size_t, std::size_t>, Tensor> reruns_;
};

// Query positions for one row unit in one view; columns absent from the
// view (future decoder tokens) are nullopt and score zero.
struct Block {
    LayerView* view;
    std::vector<std::size_t> queries;
    std::vector<std::optional<Span>> columns;
};

void check_span(const Span& s, std::size_t limit, const char* what)
{
    check(!s.empty(), ErrorKind::Range, std::string("empty ") + what + " span");
    check(s.end <= limit, ErrorKind::Range,
          std::string(what) + " span [" + std::to_string(s.begin) + ", " + std::to_string(s.end) +
              ") outside [0, " + std::to_string(limit) + ")");
}

struct BlockScores {
    std::vector<double> value;
    std::vector<double> cosine;
};

BlockScores score_block(Block& block, Method method)
{
    LayerView& view = *block.view;
    const std::size_t ncols = block.columns.size();
    BlockScores out{std::vector<double>(ncols, 0.0), std::vector<double>(ncols, 1.0)};
    const double nq = static_cast<double>(block.queries.size());
    const std::size_t H = view.heads();

    for (std::size_t c = 0; c < ncols; ++c) {
        if (!block.columns[c]) continue;
        const Span keys = *block.columns[c];
        if (method == Method::ValueZeroing) {
            const Tensor& zeroed = view.zeroed_output(keys);
            double dissim = 0.0, cosine = 0.0;
            for (std::size_t n : block.queries) {
                const auto a = view.original().row(n);
                const auto b = zeroed.row(n);
                dissim += cosine_distance(a, b);
                cosine += cosine_similarity(a, b).value;
            }
            out.value[c] = dissim / nq;
            out.cosine[c] = cosine / nq;
            continue;
        }
        const std::vector<std::vector<double>>* norms = nullptr;
        if (method == Method::AttnNorm) norms = &view.value_norms();
        double sum = 0.0;
        for (std::size_t n : block.queries) {
            for (std::size_t m = keys.begin; m < keys.end; ++m) {
                for (std::size_t h = 0; h < H; ++h) {
                    const double a = view.attn().weights[h].at(n, m);
                    sum += norms ? a * (*norms)[h][m] : a;
                }
            }
        }
        out.value[c] = sum / (nq * static_cast<double>(keys.size()) * static_cast<double>(H));
    }
    return out;
}

std::vector<Block> span_blocks(LayerView& view, std::span<const Span> rows, std::span<const Span> cols)
{
    for (const auto& r : rows) check_span(r, view.n_queries(), "row");
    for (const auto& c : cols) check_span(c, view.n_keys(), "column");
    std::vector<std::optional<Span>> columns(cols.begin(), cols.end());
    std::vector<Block> blocks;
    for (const auto& r : rows) {
        std::vector<std::size_t> q(r.size());
        std::iota(q.begin(), q.end(), r.begin);
        blocks.push_back({&view, std::move(q), columns});
    }
    return blocks;
}

Tensor block_matrix(std::vector<Block>& blocks, Method method, std::size_t ncols, Tensor* cosine = nullptr)
{
    Tensor out({blocks.size(), ncols});
    if (cosine) *cosine = Tensor({blocks.size(), ncols});
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto s = score_block(blocks[i], method);
        for (std::size_t c = 0; c < ncols; ++c) {
            out.at(i, c) = static_cast<float>(s.value[c]);
            if (cosine) cosine->at(i, c) = static_cast<float>(s.cosine[c]);
        }
    }
    return out;
}

} // namespace

Tensor attn_scores(const AttentionCapture& capture, std::span<const Span> rows, std::span<const Span> cols)
{
    LayerView view(capture, nullptr, nullptr, {});
    auto blocks = span_blocks(view, rows, cols);
    return block_matrix(blocks, Method::Attn, cols.size());
}

Tensor attention_norm_scores(const AttentionCapture& capture, const AttentionWeights& weights,
                             std::span<const Span> rows, std::span<const Span> cols)
{
    LayerView view(capture, &weights, nullptr, {});
    auto blocks = span_blocks(view, rows, cols);
    return block_matrix(blocks, Method::AttnNorm, cols.size());
}

ValueZeroingScores value_zeroing_scores(const Tensor& original_output, const LayerRerun& rerun, std::size_t n_keys,
                                        std::span<const Span> rows, std::span<const Span> cols)
{
    // The view only needs key/query counts for range checks.
    AttentionCapture shape_only;
    shape_only.weights.emplace_back(Shape{original_output.rows(), n_keys});
    LayerView view(shape_only, nullptr, &original_output, rerun);
    auto blocks = span_blocks(view, rows, cols);
    ValueZeroingScores out;
    out.dissimilarity = block_matrix(blocks, Method::ValueZeroing, cols.size(), &out.cosine);
    return out;
}

// ---------------------------------------------------------------------------

UtteranceRun run_utterance(const Model& model, const Tensor& frames, const UtteranceManifest& manifest,
                           const std::vector<TokenId>* forced_tokens)
{
    UtteranceRun run;
    run.model = &model;
    run.frames = frames;
    const TimeGrid grid = time_grid_for(model.spec, frames.rows());
    for (const auto& w : manifest.words) run.words.push_back(w.text);
    run.frame_spans = word_frame_spans(manifest.words, grid);
    if (model.spec.has_decoder()) {
        run.generation = forced_tokens ? teacher_forced_generation(model, frames, *forced_tokens)
                                       : greedy_generate(model, frames, model.spec.max_tokens - 1);
        run.encoder = run.generation->encoder;
        run.token_spans = manifest.dec_spans;
    } else {
        run.encoder = encoder_forward(model, frames);
    }
    return run;
}

std::size_t layer_count(const ModelSpec& spec, Scope scope)
{
    return scope == Scope::WithinEncoder ? spec.encoder_layers : spec.decoder_layers;
}

void check_scope(const ModelSpec& spec, Scope scope)
{
    if (scope != Scope::WithinEncoder && !spec.has_decoder()) {
        fail(ErrorKind::Usage, std::string("scope ") + to_string(scope) + " requires an encoder-decoder model");
    }
}

namespace {

std::vector<std::size_t> resolve_words(std::span<const std::size_t> words, std::size_t n)
{
    std::vector<std::size_t> out;
    if (words.empty()) {
        out.resize(n);
        std::iota(out.begin(), out.end(), 0);
        return out;
    }
    for (auto w : words) {
        check(w < n, ErrorKind::Range, "word index " + std::to_string(w) + " out of range");
        out.push_back(w);
    }
    return out;
}

MixingMap empty_map(const UtteranceRun& run, std::size_t layer, Method method, Scope scope,
                    const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols)
{
    MixingMap map;
    map.layer = layer;
    map.method = method;
    map.scope = scope;
    map.row_words = rows;
    map.col_words = cols;
    for (auto r : rows) map.row_labels.push_back(run.words[r]);
    for (auto c : cols) map.col_labels.push_back(run.words[c]);
    map.flagged.assign(rows.size(), false);
    return map;
}

MixingMap encoder_map(const UtteranceRun& run, std::size_t layer, Method method,
                      const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols)
{
    const Model& model = *run.model;
    const LayerCapture& lc = run.encoder.layers.at(layer);
    const auto& w = model.weights.encoder.at(layer);
    const std::size_t n_heads = model.spec.n_heads;
    LayerView view(lc.self_attention, &w.mha, &lc.output, [&lc, &w, n_heads](const ValueMask& mask) {
        return encoder_layer_forward(lc.input, w, n_heads, nullptr, &mask);
    });
    std::vector<Span> row_spans, col_spans;
    for (auto r : rows) row_spans.push_back(run.frame_spans.at(r));
    for (auto c : cols) col_spans.push_back(run.frame_spans.at(c));
    auto blocks = span_blocks(view, row_spans, col_spans);

    MixingMap map = empty_map(run, layer, method, Scope::WithinEncoder, rows, cols);
    if (method == Method::ValueZeroing) {
        Tensor cosine;
        map.scores = block_matrix(blocks, method, cols.size(), &cosine);
        map.raw_cosine = std::move(cosine);
    } else {
        map.scores = block_matrix(blocks, method, cols.size());
    }
    return map;
}

MixingMap decoder_map(const UtteranceRun& run, std::size_t layer, Method method, Scope scope,
                      const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols)
{
    const Model& model = *run.model;
    check(run.generation.has_value(), ErrorKind::Usage, "decoder scopes need a generation run");
    const auto& gen = *run.generation;
    const auto& w = model.weights.decoder.at(layer);
    const std::size_t n_heads = model.spec.n_heads;
    const Tensor& enc_out = gen.encoder.output;
    check(run.token_spans.size() == run.words.size(), ErrorKind::Data,
          "decoder scopes need one token span per word (dec_spans)");
    const std::size_t n_frames = enc_out.rows();

    std::vector<std::unique_ptr<LayerView>> views;
    std::vector<std::vector<Block>> row_blocks(rows.size());
    for (std::size_t ri = 0; ri < rows.size(); ++ri) {
        const Span target = run.token_spans[rows[ri]];
        check(!target.empty(), ErrorKind::Range, "empty decoder token span for word " + std::to_string(rows[ri]));
        check(target.end <= gen.steps.size(), ErrorKind::Data,
              "word " + std::to_string(rows[ri]) + " has tokens beyond the generated sequence");
        for (std::size_t k = target.begin; k < target.end; ++k) {
            const LayerCapture& lc = gen.steps[k].layers.at(layer);
            std::unique_ptr<LayerView> view;
            if (scope == Scope::WithinDecoder) {
                view = std::make_unique<LayerView>(
                    lc.self_attention, &w.self_attn, &lc.output,
                    [&lc, &w, &enc_out, n_heads](const ValueMask& mask) {
                        return decoder_layer_forward(lc.input, enc_out, w, n_heads, nullptr, &mask, nullptr);
                    });
            } else {
                view = std::make_unique<LayerView>(
                    *lc.cross_attention, &w.cross_attn, &lc.output,
                    [&lc, &w, &enc_out, n_heads](const ValueMask& mask) {
                        return decoder_layer_forward(lc.input, enc_out, w, n_heads, nullptr, nullptr, &mask);
                    });
            }
            Block block{view.get(), {k}, {}};
            for (auto c : cols) {
                if (scope == Scope::Cross) {
                    const Span s = run.frame_spans.at(c);
                    check_span(s, n_frames, "column");
                    block.columns.emplace_back(s);
                } else {
                    // Input position of generated token m is m + 1 (position 0 holds bos).
                    const Span s = run.token_spans.at(c);
                    if (s.empty() || s.end > k) {
                        block.columns.emplace_back(std::nullopt);
                    } else {
                        block.columns.emplace_back(Span{s.begin + 1, s.end + 1});
                    }
                }
            }
            row_blocks[ri].push_back(std::move(block));
            views.push_back(std::move(view));
        }
    }

    MixingMap map = empty_map(run, layer, method, scope, rows, cols);
    map.scores = Tensor({rows.size(), cols.size()});
    Tensor cosine({rows.size(), cols.size()});
    for (std::size_t ri = 0; ri < rows.size(); ++ri) {
        std::vector<double> acc(cols.size(), 0.0), cacc(cols.size(), 0.0);
        for (auto& block : row_blocks[ri]) {
            const auto s = score_block(block, method);
            for (std::size_t c = 0; c < cols.size(); ++c) {
                acc[c] += s.value[c];
                cacc[c] += s.cosine[c];
            }
        }
        const double nb = static_cast<double>(row_blocks[ri].size());
        for (std::size_t c = 0; c < cols.size(); ++c) {
            map.scores.at(ri, c) = static_cast<float>(acc[c] / nb);
            cosine.at(ri, c) = static_cast<float>(cacc[c] / nb);
        }
    }
    if (method == Method::ValueZeroing) map.raw_cosine = std::move(cosine);
    return map;
}

} // namespace

MixingMap compute_map(const UtteranceRun& run, std::size_t layer, Method method, Scope scope,
                      std::span<const std::size_t> row_words, std::span<const std::size_t> col_words)
{
    check(run.model != nullptr, ErrorKind::Usage, "utterance run has no model");
    check_scope(run.model->spec, scope);
    check(layer < layer_count(run.model->spec, scope), ErrorKind::Range,
          "layer " + std::to_string(layer) + " out of range for scope " + to_string(scope));
    const auto rows = resolve_words(row_words, run.words.size());
    const auto cols = resolve_words(col_words, run.words.size());
    if (scope == Scope::WithinEncoder) return encoder_map(run, layer, method, rows, cols);
    return decoder_map(run, layer, method, scope, rows, cols);
}

MixingMap attn_score(const UtteranceRun& run, std::size_t layer, Scope scope, std::span<const std::size_t> row_words,
                     std::span<const std::size_t> col_words)
{
    return compute_map(run, layer, Method::Attn, scope, row_words, col_words);
}

MixingMap attention_norm_score(const UtteranceRun& run, std::size_t layer, Scope scope,
                               std::span<const std::size_t> row_words, std::span<const std::size_t> col_words)
{
    return compute_map(run, layer, Method::AttnNorm, scope, row_words, col_words);
}

MixingMap value_zeroing_score(const UtteranceRun& run, std::size_t layer, Scope scope,
                              std::span<const std::size_t> row_words, std::span<const std::size_t> col_words)
{
    return compute_map(run, layer, Method::ValueZeroing, scope, row_words, col_words);
}

MixingMap normalize_rows(MixingMap map)
{
    Tensor& s = map.scores;
    map.flagged.assign(s.rows(), false);
    for (std::size_t r = 0; r < s.rows(); ++r) {
        auto row = s.row(r);
        double total = 0.0;
        for (auto& v : row) {
            if (v < 0.0f) v = 0.0f;
            total += v;
        }
        if (total <= 0.0) {
            map.flagged[r] = true;
            continue;
        }
        for (auto& v : row) v = static_cast<float>(v / total);
    }
    map.normalized = true;
    return map;
}

std::vector<MixingMap> score_all(const UtteranceRun& run, const ScoreRequest& request)
{
    check(run.model != nullptr, ErrorKind::Usage, "utterance run has no model");
    const auto& spec = run.model->spec;
    for (auto scope : request.scopes) check_scope(spec, scope);

    std::size_t max_layers = 0;
    for (auto scope : request.scopes) max_layers = std::max(max_layers, layer_count(spec, scope));
    std::vector<std::size_t> layers;
    if (request.layers) {
        layers = *request.layers;
    } else {
        layers.resize(max_layers);
        std::iota(layers.begin(), layers.end(), 0);
    }

    std::vector<MixingMap> maps;
    for (auto layer : layers) {
        for (auto method : request.methods) {
            for (auto scope : request.scopes) {
                if (layer >= layer_count(spec, scope)) {
                    if (request.layers) {
                        fail(ErrorKind::Range, "layer " + std::to_string(layer + 1) + " out of range for scope " +
                                                   to_string(scope));
                    }
                    continue;
                }
                MixingMap map = compute_map(run, layer, method, scope);
                maps.push_back(request.normalize ? normalize_rows(std::move(map)) : std::move(map));
            }
        }
    }
    return maps;
}

} // namespace ctxmix

#include "ctxmix/probing.hpp"

#include "ctxmix/error.hpp"
#include "ctxmix/mixing.hpp"
#include "ctxmix/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ctxmix {

Tensor extract_target_representation(const ForwardCapture& capture, std::size_t level, const Span& span)
{
    check(level <= capture.layers.size(), ErrorKind::Range, "representation level out of range");
    const Tensor& reps = level == 0 ? capture.layers.front().input : capture.layers[level - 1].output;
    check(!span.empty(), ErrorKind::Range, "empty target span");
    check(span.end <= reps.rows(), ErrorKind::Range, "target span outside the sequence");
    const std::size_t d = reps.cols();
    std::vector<double> acc(d, 0.0);
    for (std::size_t t = span.begin; t < span.end; ++t) {
        const auto row = reps.row(t);
        for (std::size_t c = 0; c < d; ++c) acc[c] += row[c];
    }
    Tensor out({d});
    for (std::size_t c = 0; c < d; ++c) out[c] = static_cast<float>(acc[c] / static_cast<double>(span.size()));
    return out;
}

ProbeDataset build_probe_dataset(const Model& model, std::span<const Utterance> data, ProbeSide side)
{
    check(side == ProbeSide::Encoder || model.spec.has_decoder(), ErrorKind::Usage,
          "decoder probing requires an encoder-decoder model");
    check(!data.empty(), ErrorKind::Data, "empty probing dataset");
    const std::size_t levels =
        1 + (side == ProbeSide::Encoder ? model.spec.encoder_layers : model.spec.decoder_layers);
    const std::size_t d = model.spec.d_model;

    std::vector<std::vector<Tensor>> reps(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
        const auto& item = data[i];
        const std::size_t tgt = item.manifest.target_idx;
        if (side == ProbeSide::Encoder) {
            const ForwardCapture cap = encoder_forward(model, item.frames);
            const TimeGrid grid = time_grid_for(model.spec, item.frames.rows());
            const Span span = word_to_frames(item.manifest.words.at(tgt), grid);
            for (std::size_t l = 0; l < levels; ++l) reps[i].push_back(extract_target_representation(cap, l, span));
        } else {
            const UtteranceRun run = run_utterance(model, item.frames, item.manifest);
            const auto& gen = *run.generation;
            const Span tokens = item.manifest.dec_spans.at(tgt);
            check(tokens.end <= gen.tokens.size(), ErrorKind::Data,
                  item.manifest.id + ": target tokens were not generated");
            // The last step's input holds bos + every generated token.
            const ForwardCapture& cap = gen.steps.back();
            const Span positions{tokens.begin + 1, tokens.end + 1};
            for (std::size_t l = 0; l < levels; ++l) {
                reps[i].push_back(extract_target_representation(cap, l, positions));
            }
        }
    });

    ProbeDataset out;
    for (std::size_t l = 0; l < levels; ++l) {
        Tensor m({data.size(), d});
        for (std::size_t i = 0; i < data.size(); ++i) std::copy_n(reps[i][l].data().begin(), d, m.row(i).begin());
        out.levels.push_back(std::move(m));
    }
    for (const auto& item : data) {
        out.labels.push_back(item.manifest.label == NumberLabel::Plural ? 1 : 0);
        out.ids.push_back(item.manifest.id);
    }
    return out;
}

namespace {

double sigmoid(double z)
{
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z)
{
    return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double margin(const std::vector<double>& w, double b, std::span<const float> x)
{
    double z = b;
    for (std::size_t c = 0; c < w.size(); ++c) z += w[c] * x[c];
    return z;
}

double objective_of(const std::vector<double>& w, double b, const Tensor& X, std::span<const int> y, double lambda)
{
    double loss = 0.0;
    for (std::size_t i = 0; i < X.rows(); ++i) {
        const double z = margin(w, b, X.row(i));
        // -[y log s(z) + (1-y) log(1 - s(z))] = softplus(z) - y z
        loss += softplus(z) - (y[i] ? z : 0.0);
    }
    double reg = 0.0;
    for (double v : w) reg += v * v;
    return loss / static_cast<double>(X.rows()) + 0.5 * lambda * reg;
}

// Gradient with respect to (w..., b).
std::vector<double> gradient_of(const std::vector<double>& w, double b, const Tensor& X, std::span<const int> y,
                                double lambda)
{
    const std::size_t d = w.size();
    std::vector<double> g(d + 1, 0.0);
    for (std::size_t i = 0; i < X.rows(); ++i) {
        const auto x = X.row(i);
        const double r = sigmoid(margin(w, b, x)) - y[i];
        for (std::size_t c = 0; c < d; ++c) g[c] += r * x[c];
        g[d] += r;
    }
    const double n = static_cast<double>(X.rows());
    for (std::size_t c = 0; c < d; ++c) g[c] = g[c] / n + lambda * w[c];
    g[d] /= n;
    return g;
}

void check_training_input(const Tensor& X, std::span<const int> y)
{
    check(X.rank() == 2 && X.rows() == y.size(), ErrorKind::Dimension, "features and labels disagree in length");
    check(X.all_finite(), ErrorKind::Numeric, "probe features contain non-finite values");
    std::size_t pos = 0, neg = 0;
    for (int v : y) {
        check(v == 0 || v == 1, ErrorKind::Data, "labels must be 0 or 1");
        (v ? pos : neg)++;
    }
    check(pos >= 2 && neg >= 2, ErrorKind::Data, "logistic regression needs at least two samples per class");
}

} // namespace

double LogisticModel::probability(std::span<const float> x) const
{
    return sigmoid(margin(weights, bias, x));
}

double logistic_objective(const LogisticModel& model, const Tensor& features, std::span<const int> labels,
                          double lambda)
{
    return objective_of(model.weights, model.bias, features, labels, lambda);
}

std::vector<double> logistic_gradient(const LogisticModel& model, const Tensor& features, std::span<const int> labels,
                                      double lambda)
{
    return gradient_of(model.weights, model.bias, features, labels, lambda);
}

LogisticModel train_logistic_l2(const Tensor& features, std::span<const int> labels, double lambda,
                                const TrainOptions& options)
{
    check_training_input(features, labels);
    check(lambda >= 0.0, ErrorKind::Input, "lambda must be non-negative");
    const std::size_t d = features.cols();
    LogisticModel m;
    m.weights.assign(d, 0.0);
    double step = options.step_size;
    double obj = objective_of(m.weights, m.bias, features, labels, lambda);
    std::vector<double> trial(d);
    for (m.iterations = 0; m.iterations < options.max_iterations; ++m.iterations) {
        const auto g = gradient_of(m.weights, m.bias, features, labels, lambda);
        double gnorm = 0.0;
        for (double v : g) gnorm += v * v;
        if (std::sqrt(gnorm) <= options.gradient_tolerance) {
            m.converged = true;
            break;
        }
        bool accepted = false;
        while (!accepted && step > 1e-12) {
            for (std::size_t c = 0; c < d; ++c) trial[c] = m.weights[c] - step * g[c];
            const double trial_bias = m.bias - step * g[d];
            const double trial_obj = objective_of(trial, trial_bias, features, labels, lambda);
            if (trial_obj <= obj) {
                m.weights = trial;
                m.bias = trial_bias;
                obj = trial_obj;
                accepted = true;
            } else {
                step *= 0.5;
            }
        }
        if (!accepted) break; // step underflow: no descent direction left at this precision
        if (options.record_trace) m.objective_trace.push_back(obj);
    }
    return m;
}

double accuracy(const LogisticModel& model, const Tensor& features, std::span<const int> labels)
{
    check(features.rows() == labels.size() && !labels.empty(), ErrorKind::Dimension, "accuracy input mismatch");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += model.predict(features.row(i)) == labels[i];
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, std::size_t k, std::uint64_t seed)
{
    check(k >= 2, ErrorKind::Input, "k-fold needs k >= 2");
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < labels.size(); ++i) {
        check(labels[i] == 0 || labels[i] == 1, ErrorKind::Data, "labels must be 0 or 1");
        by_class[labels[i]].push_back(i);
    }
    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> folds(k);
    std::size_t next = 0;
    for (auto& members : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        for (auto i : members) {
            folds[next].push_back(i);
            next = (next + 1) % k;
        }
    }
    for (std::size_t f = 0; f < k; ++f) {
        bool has[2] = {false, false};
        for (auto i : folds[f]) has[labels[i]] = true;
        if (!has[0] || !has[1]) {
            fail(ErrorKind::Stratification, "fold " + std::to_string(f) + " does not contain both classes");
        }
        std::sort(folds[f].begin(), folds[f].end());
    }
    return folds;
}

namespace {

Tensor select_rows(const Tensor& X, const std::vector<std::size_t>& rows)
{
    Tensor out({rows.size(), X.cols()});
    for (std::size_t r = 0; r < rows.size(); ++r) std::copy_n(X.row(rows[r]).begin(), X.cols(), out.row(r).begin());
    return out;
}

} // namespace

ProbeResult kfold_probe(const ProbeDataset& data, std::size_t k, double lambda, std::uint64_t seed)
{
    check(!data.levels.empty(), ErrorKind::Data, "probe dataset has no levels");
    for (const auto& level : data.levels) {
        check(level.rows() == data.labels.size(), ErrorKind::Dimension, "probe level row count mismatch");
    }
    const auto folds = stratified_folds(data.labels, k, seed);

    ProbeResult result;
    result.levels.resize(data.levels.size());
    parallel_for(data.levels.size(), [&](std::size_t l) {
        const Tensor& X = data.levels[l];
        LevelProbe lp;
        lp.level = l;
        lp.lambda = lambda;
        for (std::size_t f = 0; f < k; ++f) {
            std::vector<std::size_t> train_idx;
            for (std::size_t g = 0; g < k; ++g) {
                if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
            }
            std::sort(train_idx.begin(), train_idx.end());
            std::vector<int> train_y, test_y;
            for (auto i : train_idx) train_y.push_back(data.labels[i]);
            for (auto i : folds[f]) test_y.push_back(data.labels[i]);
            const auto model = train_logistic_l2(select_rows(X, train_idx), train_y, lambda);
            lp.fold_accuracies.push_back(accuracy(model, select_rows(X, folds[f]), test_y));
        }
        double sum = 0.0;
        for (double a : lp.fold_accuracies) sum += a;
        lp.mean_accuracy = sum / static_cast<double>(k);
        result.levels[l] = std::move(lp);
    });
    return result;
}

} // namespace ctxmix

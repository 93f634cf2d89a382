#pragma once

#include "ctxmix/alignment.hpp"
#include "ctxmix/dataset.hpp"
#include "ctxmix/model.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace ctxmix {

// Mean-pooled word representation at one depth: level 0 is the layer input
// (frames or embeddings), level l >= 1 is the output of layer l.
Tensor extract_target_representation(const ForwardCapture& capture, std::size_t level, const Span& span);

enum class ProbeSide { Encoder, Decoder };

struct ProbeDataset {
    std::vector<Tensor> levels; // [N x d] per level, levels 0..L
    std::vector<int> labels;    // 0 = Singular, 1 = Plural
    std::vector<std::string> ids;
};

ProbeDataset build_probe_dataset(const Model& model, std::span<const Utterance> data, ProbeSide side);

struct LogisticModel {
    std::vector<double> weights;
    double bias = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    std::vector<double> objective_trace; // objective after every accepted step (optional)

    double probability(std::span<const float> x) const;
    int predict(std::span<const float> x) const { return probability(x) >= 0.5 ? 1 : 0; }
};

struct TrainOptions {
    double step_size = 0.1;
    double gradient_tolerance = 1e-6;
    std::size_t max_iterations = 10000;
    bool record_trace = false;
};

// Minimizes mean log-loss + lambda/2 ||w||^2 (bias unregularized) by full-batch
// gradient descent from zero; the step halves whenever it would increase the
// objective.
LogisticModel train_logistic_l2(const Tensor& features, std::span<const int> labels, double lambda,
                                const TrainOptions& options = {});

double logistic_objective(const LogisticModel& model, const Tensor& features, std::span<const int> labels,
                          double lambda);
std::vector<double> logistic_gradient(const LogisticModel& model, const Tensor& features,
                                      std::span<const int> labels, double lambda);
double accuracy(const LogisticModel& model, const Tensor& features, std::span<const int> labels);

inline constexpr std::uint64_t kFoldSeed = 13;

// Test-index sets for stratified k-fold: each class is shuffled with the seed
// and dealt round-robin across folds.
std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, std::size_t k,
                                                       std::uint64_t seed = kFoldSeed);

struct LevelProbe {
    std::size_t level = 0;
    double mean_accuracy = 0.0;
    std::vector<double> fold_accuracies;
    double lambda = 0.0;
};

struct ProbeResult {
    std::vector<LevelProbe> levels;
};

ProbeResult kfold_probe(const ProbeDataset& data, std::size_t k = 3, double lambda = 1.0,
                        std::uint64_t seed = kFoldSeed);

} // namespace ctxmix

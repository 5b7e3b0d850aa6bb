#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xlf/embedding.hpp"

namespace xlf::classifier {

using embedding::EmbeddingVector;

struct LabeledExample {
    EmbeddingVector x;
    int y = 0;  // 0 or 1
    std::string origin;
};

struct LinearClassifier {
    std::vector<double> w;
    double b = 0.0;
    bool normalize_inputs = true;
    std::string trained_on;
    std::uint64_t seed = 0;
    std::string version;
    double l2_lambda = 0.0;
    double train_loss = 0.0;
    std::string config_hash;  // empty when not produced by the CLI

    std::size_t dim() const noexcept { return w.size(); }
    bool operator==(const LinearClassifier&) const = default;
};

struct TrainConfig {
    double l2_lambda = 1e-4;
    int max_epochs = 500;
    /// Initial step for the line search (full batch) or base step (minibatch).
    double learning_rate = 1.0;
    /// Stop once the full-data gradient norm drops below this.
    double tolerance = 1e-6;
    /// Unset selects full-batch gradient descent with backtracking line search.
    std::optional<std::size_t> minibatch_size;
    std::uint64_t seed = 0;
    bool normalize_inputs = true;
    std::size_t workers = 1;
};

void validate(const TrainConfig& config);

double sigmoid(double z) noexcept;

/// The input the weights see: x itself, or x/|x| when the classifier
/// normalizes inputs and x is nonzero.
EmbeddingVector prepare_input(const LinearClassifier& clf, const EmbeddingVector& x);

double logit(const LinearClassifier& clf, const EmbeddingVector& x);
double score(const LinearClassifier& clf, const EmbeddingVector& x);

struct LossGradient {
    double loss = 0.0;
    std::vector<double> grad_w;
    double grad_b = 0.0;
};

/// Mean binary cross-entropy plus (lambda/2)|w|^2 with its exact gradient.
/// Partial sums are reduced over fixed-size blocks in a fixed pairwise
/// order, so the result is bit-identical for any worker count.
LossGradient loss_and_gradient(const LinearClassifier& clf, std::span<const LabeledExample> data, double l2_lambda,
                               std::size_t workers = 1);

struct TrainResult {
    LinearClassifier classifier;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double final_grad_norm = 0.0;
    int epochs = 0;
    bool converged = false;
};

TrainResult train_logistic_traced(std::span<const LabeledExample> data, const TrainConfig& config,
                                  std::string trained_on = {});

LinearClassifier train_logistic(std::span<const LabeledExample> data, const TrainConfig& config,
                                std::string trained_on = {});

struct Evaluation {
    double accuracy = 0.0;
    std::optional<double> auc;  // absent when only one class is present
    std::size_t n = 0;
};

/// Accuracy predicts class 1 when score > 0.5. AUC is the rank statistic with
/// tied scores sharing their average rank.
Evaluation evaluate_scores(std::span<const double> scores, std::span<const int> labels);
Evaluation evaluate(const LinearClassifier& clf, std::span<const LabeledExample> data);

struct Annotation {
    std::string text;
    int score = 0;  // 0..5
};

struct BinaryLabel {
    std::string text;
    int y = 0;
};

inline constexpr int fwe_positive_cutoff = 2;

int binarize_fwe_score(int score);
std::vector<BinaryLabel> binarize_fwe_annotations(std::span<const Annotation> records);

std::string to_json(const LinearClassifier& clf);
LinearClassifier from_json(std::string_view text);
void save_classifier(const LinearClassifier& clf, const std::filesystem::path& path);
LinearClassifier load_classifier(const std::filesystem::path& path);

/// Hash of the serialized classifier; keys score caches.
std::string fingerprint(const LinearClassifier& clf);

}  // namespace xlf::classifier

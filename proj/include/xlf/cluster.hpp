#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlf/embedding.hpp"

namespace xlf::cluster {

using embedding::EmbeddingVector;

inline constexpr std::size_t default_clusters = 64;
inline constexpr std::size_t default_fit_sample = 200'000;

struct ClusterModel {
    std::size_t k = 0;
    std::size_t dim = 0;
    std::size_t capacity = 0;
    std::uint64_t seed = 0;
    std::vector<double> centroids;  // k x dim, row-major

    std::span<const double> centroid(std::size_t j) const { return std::span(centroids).subspan(j * dim, dim); }
    bool operator==(const ClusterModel&) const = default;
};

struct BalancedFit {
    ClusterModel model;
    std::vector<std::size_t> assignment;  // cluster per input point
    std::vector<std::size_t> sizes;
    /// Within-cluster sum of squares after every assignment and every update
    /// step; non-increasing by construction.
    std::vector<double> wcss_history;
    int iterations = 0;
    bool converged = false;
};

/// Lloyd iteration with a capacity-constrained greedy assignment. Points are
/// placed in ascending order of distance to their nearest open centroid; the
/// first N mod K clusters to fill take ceil(N/K) points, the rest floor(N/K),
/// so final cluster sizes differ by at most one. A greedy assignment that
/// would raise the objective is rejected in favour of the previous one, which
/// ends the fit.
BalancedFit fit_balanced_kmeans(std::span<const EmbeddingVector> points, std::size_t k, std::uint64_t seed,
                                int max_iters, std::size_t workers = 1);

double squared_distance(std::span<const double> a, std::span<const double> b) noexcept;

/// Nearest centroid, lowest index on ties. Capacity does not apply here.
std::size_t assign(const ClusterModel& model, const EmbeddingVector& x);

struct ClusterHistogram {
    std::string dataset_name;
    std::vector<std::uint64_t> counts;
    std::uint64_t total = 0;

    bool operator==(const ClusterHistogram&) const = default;
};

/// Streaming accumulator behind histogram_over_clusters.
class HistogramBuilder {
public:
    HistogramBuilder(const ClusterModel& model, std::string dataset_name);

    void add(const EmbeddingVector& x);
    ClusterHistogram finish() const;

private:
    const ClusterModel& model_;
    ClusterHistogram hist_;
};

ClusterHistogram histogram_over_clusters(const ClusterModel& model, std::span<const EmbeddingVector> dataset,
                                         std::string name);

/// Adds b's counts into a; both must cover the same K.
ClusterHistogram merge(const ClusterHistogram& a, const ClusterHistogram& b, std::string name);

/// Total variation distance between the normalized histograms.
double histogram_distance(const ClusterHistogram& a, const ClusterHistogram& b);

std::vector<std::vector<double>> distance_matrix(std::span<const ClusterHistogram> hists);

nlohmann::ordered_json to_json(const ClusterModel& model);
ClusterModel model_from_json(const nlohmann::json& j);
void save_model(const ClusterModel& model, const std::filesystem::path& path);
ClusterModel load_model(const std::filesystem::path& path);

nlohmann::ordered_json to_json(const ClusterHistogram& hist);

}  // namespace xlf::cluster

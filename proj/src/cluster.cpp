#include "xlf/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>
#include <tuple>

#include "xlf/error.hpp"
#include "xlf/parallel.hpp"
#include "xlf/rng.hpp"

namespace xlf::cluster {

namespace {

constexpr std::size_t distance_chunk = 1024;

void check_points(std::span<const EmbeddingVector> points, std::size_t dim)
{
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (points[i].dim() != dim)
            throw Error(ErrorKind::DimensionMismatch, "point " + std::to_string(i) + " has dim "
                                                          + std::to_string(points[i].dim()) + ", expected "
                                                          + std::to_string(dim));
        embedding::check_vector(points[i]);
    }
}

std::vector<double> seed_centroids(std::span<const EmbeddingVector> points, std::size_t k, Rng& rng)
{
    const std::size_t n = points.size();
    const std::size_t dim = points.front().dim();
    std::vector<double> centroids;
    centroids.reserve(k * dim);
    std::vector<bool> chosen(n, false);

    auto take = [&](std::size_t i) {
        chosen[i] = true;
        centroids.insert(centroids.end(), points[i].values.begin(), points[i].values.end());
    };
    take(rng.below(n));

    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i)
        d2[i] = squared_distance(points[i].values, std::span(centroids).subspan(0, dim));

    while (centroids.size() < k * dim) {
        double total = 0.0;
        for (double v : d2)
            total += v;
        std::size_t pick = n;
        if (total > 0.0) {
            const double r = rng.uniform() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (d2[i] > 0.0 && acc > r) {
                    pick = i;
                    break;
                }
            }
            if (pick == n)  // rounding at the tail
                for (std::size_t i = n; i-- > 0;)
                    if (d2[i] > 0.0) {
                        pick = i;
                        break;
                    }
        } else {
            // every point coincides with a centroid: pick uniformly among the unchosen
            std::vector<std::size_t> rest;
            for (std::size_t i = 0; i < n; ++i)
                if (!chosen[i])
                    rest.push_back(i);
            pick = rest[rng.below(rest.size())];
        }
        take(pick);
        const auto c = std::span(centroids).subspan(centroids.size() - dim, dim);
        for (std::size_t i = 0; i < n; ++i)
            d2[i] = std::min(d2[i], squared_distance(points[i].values, c));
    }
    return centroids;
}

std::vector<double> distance_table(std::span<const EmbeddingVector> points, const ClusterModel& model,
                                   std::size_t workers)
{
    const std::size_t n = points.size();
    std::vector<double> table(n * model.k);
    const std::size_t chunks = (n + distance_chunk - 1) / distance_chunk;
    parallel_for(chunks, workers, [&](std::size_t c) {
        const std::size_t end = std::min(n, (c + 1) * distance_chunk);
        for (std::size_t i = c * distance_chunk; i < end; ++i)
            for (std::size_t j = 0; j < model.k; ++j)
                table[i * model.k + j] = squared_distance(points[i].values, model.centroid(j));
    });
    return table;
}

std::vector<std::size_t> balanced_assignment(const std::vector<double>& table, std::size_t n, std::size_t k)
{
    const std::size_t cap_lo = n / k;
    const std::size_t big_slots = n % k;
    std::size_t big_used = 0;
    std::vector<std::size_t> sizes(k, 0);

    auto open = [&](std::size_t j) {
        return sizes[j] < cap_lo || (sizes[j] == cap_lo && big_used < big_slots);
    };
    auto nearest_open = [&](std::size_t i) {
        std::size_t best = k;
        for (std::size_t j = 0; j < k; ++j)
            if (open(j) && (best == k || table[i * k + j] < table[i * k + best]))
                best = j;
        return best;
    };

    using Entry = std::tuple<double, std::size_t, std::size_t>;  // distance, point, cluster
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = nearest_open(i);
        heap.emplace(table[i * k + j], i, j);
    }

    std::vector<std::size_t> assignment(n, k);
    while (!heap.empty()) {
        const auto [d, i, j] = heap.top();
        heap.pop();
        if (!open(j)) {
            const std::size_t alt = nearest_open(i);
            heap.emplace(table[i * k + alt], i, alt);
            continue;
        }
        assignment[i] = j;
        if (sizes[j] == cap_lo)
            ++big_used;
        ++sizes[j];
    }
    return assignment;
}

double assignment_cost(const std::vector<double>& table, const std::vector<std::size_t>& assignment, std::size_t k)
{
    double cost = 0.0;
    for (std::size_t i = 0; i < assignment.size(); ++i)
        cost += table[i * k + assignment[i]];
    return cost;
}

double update_centroids(std::span<const EmbeddingVector> points, const std::vector<std::size_t>& assignment,
                        ClusterModel& model)
{
    std::vector<double> sums(model.k * model.dim, 0.0);
    std::vector<std::size_t> counts(model.k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const std::size_t j = assignment[i];
        ++counts[j];
        for (std::size_t t = 0; t < model.dim; ++t)
            sums[j * model.dim + t] += points[i].values[t];
    }
    for (std::size_t j = 0; j < model.k; ++j) {
        if (counts[j] == 0)
            continue;  // unreachable under exact balancing; keep the old centroid
        for (std::size_t t = 0; t < model.dim; ++t)
            model.centroids[j * model.dim + t] = sums[j * model.dim + t] / static_cast<double>(counts[j]);
    }
    double wcss = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i)
        wcss += squared_distance(points[i].values, model.centroid(assignment[i]));
    return wcss;
}

}  // namespace

double squared_distance(std::span<const double> a, std::span<const double> b) noexcept
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

BalancedFit fit_balanced_kmeans(std::span<const EmbeddingVector> points, std::size_t k, std::uint64_t seed,
                                int max_iters, std::size_t workers)
{
    if (k == 0)
        throw Error(ErrorKind::ConfigError, "K must be positive");
    if (max_iters <= 0)
        throw Error(ErrorKind::ConfigError, "max_iters must be positive");
    if (points.size() < k)
        throw Error(ErrorKind::TooFewPoints, std::to_string(points.size()) + " points for K=" + std::to_string(k));
    const std::size_t n = points.size();
    const std::size_t dim = points.front().dim();
    check_points(points, dim);

    BalancedFit fit;
    auto& model = fit.model;
    model.k = k;
    model.dim = dim;
    model.capacity = (n + k - 1) / k;
    model.seed = seed;
    Rng rng(seed);
    model.centroids = seed_centroids(points, k, rng);

    std::vector<std::size_t>& assignment = fit.assignment;
    for (int iter = 0; iter < max_iters; ++iter) {
        const auto table = distance_table(points, model, workers);
        auto proposed = balanced_assignment(table, n, k);
        const double proposed_cost = assignment_cost(table, proposed, k);
        if (!assignment.empty()) {
            if (proposed == assignment || proposed_cost >= assignment_cost(table, assignment, k)) {
                fit.converged = true;
                break;
            }
        }
        assignment = std::move(proposed);
        fit.wcss_history.push_back(proposed_cost);
        fit.wcss_history.push_back(update_centroids(points, assignment, model));
        fit.iterations = iter + 1;
    }

    fit.sizes.assign(k, 0);
    for (std::size_t j : assignment)
        ++fit.sizes[j];
    return fit;
}

std::size_t assign(const ClusterModel& model, const EmbeddingVector& x)
{
    if (x.dim() != model.dim)
        throw Error(ErrorKind::DimensionMismatch, "point dim " + std::to_string(x.dim()) + ", model dim "
                                                      + std::to_string(model.dim));
    std::size_t best = 0;
    double best_d = squared_distance(x.values, model.centroid(0));
    for (std::size_t j = 1; j < model.k; ++j) {
        const double d = squared_distance(x.values, model.centroid(j));
        if (d < best_d) {
            best = j;
            best_d = d;
        }
    }
    return best;
}

HistogramBuilder::HistogramBuilder(const ClusterModel& model, std::string dataset_name) : model_(model)
{
    hist_.dataset_name = std::move(dataset_name);
    hist_.counts.assign(model.k, 0);
}

void HistogramBuilder::add(const EmbeddingVector& x)
{
    ++hist_.counts[assign(model_, x)];
    ++hist_.total;
}

ClusterHistogram HistogramBuilder::finish() const
{
    if (hist_.total == 0)
        throw Error(ErrorKind::EmptyDataset, "dataset '" + hist_.dataset_name + "' has no points");
    return hist_;
}

ClusterHistogram histogram_over_clusters(const ClusterModel& model, std::span<const EmbeddingVector> dataset,
                                         std::string name)
{
    HistogramBuilder builder(model, std::move(name));
    for (const auto& x : dataset)
        builder.add(x);
    return builder.finish();
}

ClusterHistogram merge(const ClusterHistogram& a, const ClusterHistogram& b, std::string name)
{
    if (a.counts.size() != b.counts.size())
        throw Error(ErrorKind::LengthMismatch, "histograms cover different K");
    ClusterHistogram out{std::move(name), a.counts, a.total + b.total};
    for (std::size_t j = 0; j < b.counts.size(); ++j)
        out.counts[j] += b.counts[j];
    return out;
}

double histogram_distance(const ClusterHistogram& a, const ClusterHistogram& b)
{
    if (a.counts.size() != b.counts.size())
        throw Error(ErrorKind::LengthMismatch, "histograms cover different K");
    if (a.total == 0 || b.total == 0)
        throw Error(ErrorKind::EmptyHistogram, "histogram with zero total");
    const double ta = static_cast<double>(a.total);
    const double tb = static_cast<double>(b.total);
    double sum = 0.0;
    for (std::size_t j = 0; j < a.counts.size(); ++j)
        sum += std::abs(static_cast<double>(a.counts[j]) / ta - static_cast<double>(b.counts[j]) / tb);
    return std::clamp(0.5 * sum, 0.0, 1.0);
}

std::vector<std::vector<double>> distance_matrix(std::span<const ClusterHistogram> hists)
{
    std::vector<std::vector<double>> m(hists.size(), std::vector<double>(hists.size(), 0.0));
    for (std::size_t i = 0; i < hists.size(); ++i)
        for (std::size_t j = i + 1; j < hists.size(); ++j)
            m[i][j] = m[j][i] = histogram_distance(hists[i], hists[j]);
    return m;
}

nlohmann::ordered_json to_json(const ClusterModel& model)
{
    nlohmann::ordered_json j;
    j["K"] = model.k;
    j["dim"] = model.dim;
    j["seed"] = model.seed;
    j["capacity"] = model.capacity;
    j["centroids"] = model.centroids;
    return j;
}

ClusterModel model_from_json(const nlohmann::json& j)
{
    ClusterModel m;
    try {
        m.k = j.at("K").get<std::size_t>();
        m.dim = j.at("dim").get<std::size_t>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.capacity = j.at("capacity").get<std::size_t>();
        m.centroids = j.at("centroids").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedRecord, std::string("cluster model: ") + e.what());
    }
    if (m.k == 0 || m.dim == 0 || m.centroids.size() != m.k * m.dim)
        throw Error(ErrorKind::DimensionMismatch, "cluster model centroid array does not match K x dim");
    if (!std::all_of(m.centroids.begin(), m.centroids.end(), [](double x) { return std::isfinite(x); }))
        throw Error(ErrorKind::InvalidVector, "cluster model has non-finite centroids");
    return m;
}

void save_model(const ClusterModel& model, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
    out << to_json(model).dump() << '\n';
}

ClusterModel load_model(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorKind::FileNotFound, path.string());
    try {
        return model_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::MalformedRecord, std::string("cluster model: ") + e.what());
    }
}

nlohmann::ordered_json to_json(const ClusterHistogram& hist)
{
    nlohmann::ordered_json j;
    j["dataset_name"] = hist.dataset_name;
    j["K"] = hist.counts.size();
    j["counts"] = hist.counts;
    j["total"] = hist.total;
    return j;
}

}  // namespace xlf::cluster

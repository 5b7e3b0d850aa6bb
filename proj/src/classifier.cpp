#include "xlf/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "xlf/error.hpp"
#include "xlf/hashing.hpp"
#include "xlf/parallel.hpp"
#include "xlf/rng.hpp"
#include "xlf/version.hpp"

namespace xlf::classifier {

namespace {

constexpr std::size_t block_size = 256;

double softplus(double z) noexcept
{
    return std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0);
}

double dot(std::span<const double> a, std::span<const double> b) noexcept
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

void check_examples(std::span<const LabeledExample> data, std::size_t dim)
{
    if (data.empty())
        throw Error(ErrorKind::EmptyData, "no labeled examples");
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data[i].x.dim() != dim)
            throw Error(ErrorKind::DimensionMismatch, "example " + std::to_string(i) + " has dim "
                                                          + std::to_string(data[i].x.dim()) + ", expected "
                                                          + std::to_string(dim));
        if (data[i].y != 0 && data[i].y != 1)
            throw Error(ErrorKind::ConfigError, "example " + std::to_string(i) + " has label outside {0,1}");
    }
}

// Unregularized sums over data[begin, end): slot 0 is the loss, slots 1..d
// the weight gradient, slot d+1 the bias gradient.
void accumulate_block(std::span<const double> w, double b, std::span<const LabeledExample> data,
                      std::span<double> out)
{
    const std::size_t d = w.size();
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& ex : data) {
        const double z = dot(w, ex.x.values) + b;
        out[0] += softplus(z) - ex.y * z;
        const double r = sigmoid(z) - ex.y;
        for (std::size_t j = 0; j < d; ++j)
            out[1 + j] += r * ex.x.values[j];
        out[1 + d] += r;
    }
}

// Examples are assumed already prepared (normalized if required).
LossGradient raw_loss_and_gradient(std::span<const double> w, double b, std::span<const LabeledExample> data,
                                   double l2_lambda, std::size_t workers)
{
    const std::size_t d = w.size();
    const std::size_t width = d + 2;
    const std::size_t blocks = (data.size() + block_size - 1) / block_size;
    std::vector<double> partial(blocks * width);

    parallel_for(blocks, workers, [&](std::size_t k) {
        const std::size_t begin = k * block_size;
        const std::size_t len = std::min(block_size, data.size() - begin);
        accumulate_block(w, b, data.subspan(begin, len), std::span(partial).subspan(k * width, width));
    });

    // pairwise tree reduction in fixed order
    for (std::size_t stride = 1; stride < blocks; stride *= 2)
        for (std::size_t k = 0; k + stride < blocks; k += 2 * stride)
            for (std::size_t j = 0; j < width; ++j)
                partial[k * width + j] += partial[(k + stride) * width + j];

    const double n = static_cast<double>(data.size());
    LossGradient out;
    out.loss = partial[0] / n + 0.5 * l2_lambda * dot(w, w);
    out.grad_w.resize(d);
    for (std::size_t j = 0; j < d; ++j)
        out.grad_w[j] = partial[1 + j] / n + l2_lambda * w[j];
    out.grad_b = partial[1 + d] / n;
    return out;
}

double grad_norm(const LossGradient& g)
{
    return std::sqrt(dot(g.grad_w, g.grad_w) + g.grad_b * g.grad_b);
}

std::vector<LabeledExample> prepared_copy(std::span<const LabeledExample> data, bool normalize)
{
    std::vector<LabeledExample> out(data.begin(), data.end());
    if (normalize)
        for (auto& ex : out)
            if (embedding::l2_norm(ex.x.values) > 0.0)
                ex.x = embedding::l2_normalize(ex.x);
    return out;
}

struct Params {
    std::vector<double> w;
    double b = 0.0;
};

void run_full_batch(Params& p, std::span<const LabeledExample> data, const TrainConfig& config, TrainResult& result)
{
    constexpr double armijo = 1e-4;
    constexpr double min_step = 1e-20;

    LossGradient g = raw_loss_and_gradient(p.w, p.b, data, config.l2_lambda, config.workers);
    double step = config.learning_rate;
    int epoch = 0;
    for (; epoch < config.max_epochs; ++epoch) {
        const double gn2 = dot(g.grad_w, g.grad_w) + g.grad_b * g.grad_b;
        if (std::sqrt(gn2) < config.tolerance) {
            result.converged = true;
            break;
        }
        Params trial;
        LossGradient tg;
        bool accepted = false;
        while (step >= min_step) {
            trial.w = p.w;
            for (std::size_t j = 0; j < trial.w.size(); ++j)
                trial.w[j] -= step * g.grad_w[j];
            trial.b = p.b - step * g.grad_b;
            tg = raw_loss_and_gradient(trial.w, trial.b, data, config.l2_lambda, config.workers);
            if (tg.loss <= g.loss - armijo * step * gn2) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted)
            break;  // no descent possible at machine precision
        p = std::move(trial);
        g = std::move(tg);
        step *= 2.0;
    }
    result.epochs = epoch;
    result.final_loss = g.loss;
    result.final_grad_norm = grad_norm(g);
    if (result.final_grad_norm < config.tolerance)
        result.converged = true;
}

void run_minibatch(Params& p, std::span<const LabeledExample> data, const TrainConfig& config, TrainResult& result)
{
    const std::size_t batch = *config.minibatch_size;
    Rng rng(config.seed ^ 0x5bd1e995ULL);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<LabeledExample> scratch;
    scratch.reserve(batch);

    Params best = p;
    LossGradient best_g = raw_loss_and_gradient(p.w, p.b, data, config.l2_lambda, config.workers);
    int epoch = 0;
    for (; epoch < config.max_epochs; ++epoch) {
        if (grad_norm(best_g) < config.tolerance) {
            result.converged = true;
            break;
        }
        rng.shuffle(order);
        const double step = config.learning_rate / std::sqrt(1.0 + epoch);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            scratch.clear();
            for (std::size_t i = start; i < std::min(order.size(), start + batch); ++i)
                scratch.push_back(data[order[i]]);
            const LossGradient g = raw_loss_and_gradient(p.w, p.b, scratch, config.l2_lambda, 1);
            for (std::size_t j = 0; j < p.w.size(); ++j)
                p.w[j] -= step * g.grad_w[j];
            p.b -= step * g.grad_b;
        }
        LossGradient full = raw_loss_and_gradient(p.w, p.b, data, config.l2_lambda, config.workers);
        if (full.loss <= best_g.loss) {
            best = p;
            best_g = std::move(full);
        }
    }
    p = std::move(best);
    result.epochs = epoch;
    result.final_loss = best_g.loss;
    result.final_grad_norm = grad_norm(best_g);
}

}  // namespace

void validate(const TrainConfig& config)
{
    if (!(config.l2_lambda >= 0.0) || !std::isfinite(config.l2_lambda))
        throw Error(ErrorKind::ConfigError, "l2_lambda must be >= 0");
    if (config.max_epochs <= 0)
        throw Error(ErrorKind::ConfigError, "max_epochs must be positive");
    if (!(config.learning_rate > 0.0))
        throw Error(ErrorKind::ConfigError, "learning_rate must be positive");
    if (!(config.tolerance > 0.0))
        throw Error(ErrorKind::ConfigError, "tolerance must be positive");
    if (config.minibatch_size && *config.minibatch_size == 0)
        throw Error(ErrorKind::ConfigError, "minibatch size must be positive");
}

double sigmoid(double z) noexcept
{
    if (z >= 0.0)
        return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

EmbeddingVector prepare_input(const LinearClassifier& clf, const EmbeddingVector& x)
{
    if (x.dim() != clf.dim())
        throw Error(ErrorKind::DimensionMismatch, "input dim " + std::to_string(x.dim()) + ", classifier dim "
                                                      + std::to_string(clf.dim()));
    if (clf.normalize_inputs && !x.normalized && embedding::l2_norm(x.values) > 0.0)
        return embedding::l2_normalize(x);
    return x;
}

double logit(const LinearClassifier& clf, const EmbeddingVector& x)
{
    if (x.dim() != clf.dim())
        throw Error(ErrorKind::DimensionMismatch, "input dim " + std::to_string(x.dim()) + ", classifier dim "
                                                      + std::to_string(clf.dim()));
    if (clf.normalize_inputs && !x.normalized) {
        const double norm = embedding::l2_norm(x.values);
        if (norm > 0.0)
            return dot(clf.w, x.values) / norm + clf.b;
    }
    return dot(clf.w, x.values) + clf.b;
}

double score(const LinearClassifier& clf, const EmbeddingVector& x)
{
    return sigmoid(logit(clf, x));
}

LossGradient loss_and_gradient(const LinearClassifier& clf, std::span<const LabeledExample> data, double l2_lambda,
                               std::size_t workers)
{
    check_examples(data, clf.dim());
    if (clf.normalize_inputs) {
        const auto prepared = prepared_copy(data, true);
        return raw_loss_and_gradient(clf.w, clf.b, prepared, l2_lambda, workers);
    }
    return raw_loss_and_gradient(clf.w, clf.b, data, l2_lambda, workers);
}

TrainResult train_logistic_traced(std::span<const LabeledExample> data, const TrainConfig& config,
                                  std::string trained_on)
{
    validate(config);
    if (data.empty())
        throw Error(ErrorKind::EmptyData, "no labeled examples");
    const std::size_t dim = data.front().x.dim();
    check_examples(data, dim);
    const auto positives = std::count_if(data.begin(), data.end(), [](const auto& ex) { return ex.y == 1; });
    if (positives == 0 || static_cast<std::size_t>(positives) == data.size())
        throw Error(ErrorKind::SingleClassData, "training data contains only class "
                                                    + std::to_string(positives == 0 ? 0 : 1));

    const auto prepared = prepared_copy(data, config.normalize_inputs);

    Params p;
    p.w.resize(dim);
    Rng rng(config.seed);
    for (double& x : p.w)
        x = 0.01 * rng.normal();

    TrainResult result;
    result.initial_loss = raw_loss_and_gradient(p.w, p.b, prepared, config.l2_lambda, config.workers).loss;
    if (config.minibatch_size)
        run_minibatch(p, prepared, config, result);
    else
        run_full_batch(p, prepared, config, result);

    auto& clf = result.classifier;
    clf.w = std::move(p.w);
    clf.b = p.b;
    clf.normalize_inputs = config.normalize_inputs;
    clf.trained_on = std::move(trained_on);
    clf.seed = config.seed;
    clf.version = toolkit_version;
    clf.l2_lambda = config.l2_lambda;
    clf.train_loss = result.final_loss;
    return result;
}

LinearClassifier train_logistic(std::span<const LabeledExample> data, const TrainConfig& config,
                                std::string trained_on)
{
    return train_logistic_traced(data, config, std::move(trained_on)).classifier;
}

Evaluation evaluate_scores(std::span<const double> scores, std::span<const int> labels)
{
    if (scores.size() != labels.size())
        throw Error(ErrorKind::LengthMismatch, "scores and labels differ in length");
    if (scores.empty())
        throw Error(ErrorKind::EmptyData, "nothing to evaluate");

    Evaluation ev;
    ev.n = scores.size();
    std::size_t correct = 0;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        correct += static_cast<std::size_t>((scores[i] > 0.5 ? 1 : 0) == labels[i]);
        positives += static_cast<std::size_t>(labels[i] == 1);
    }
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(ev.n);

    const std::size_t negatives = ev.n - positives;
    if (positives == 0 || negatives == 0)
        return ev;

    std::vector<std::size_t> order(ev.n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double positive_rank_sum = 0.0;
    for (std::size_t i = 0; i < ev.n;) {
        std::size_t j = i;
        while (j < ev.n && scores[order[j]] == scores[order[i]])
            ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1)
                positive_rank_sum += avg_rank;
        i = j;
    }
    const double np = static_cast<double>(positives);
    const double nn = static_cast<double>(negatives);
    ev.auc = (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
    return ev;
}

Evaluation evaluate(const LinearClassifier& clf, std::span<const LabeledExample> data)
{
    if (data.empty())
        throw Error(ErrorKind::EmptyData, "nothing to evaluate");
    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(data.size());
    labels.reserve(data.size());
    for (const auto& ex : data) {
        scores.push_back(score(clf, ex.x));
        labels.push_back(ex.y);
    }
    return evaluate_scores(scores, labels);
}

int binarize_fwe_score(int score)
{
    if (score < 0 || score > 5)
        throw Error(ErrorKind::ScoreOutOfRange, "annotation score " + std::to_string(score) + " outside 0..5");
    return score >= fwe_positive_cutoff ? 1 : 0;
}

std::vector<BinaryLabel> binarize_fwe_annotations(std::span<const Annotation> records)
{
    std::vector<BinaryLabel> out;
    out.reserve(records.size());
    for (const auto& r : records)
        out.push_back({r.text, binarize_fwe_score(r.score)});
    return out;
}

std::string to_json(const LinearClassifier& clf)
{
    nlohmann::ordered_json j;
    j["version"] = clf.version;
    j["dim"] = clf.dim();
    j["normalize_inputs"] = clf.normalize_inputs;
    j["w"] = clf.w;
    j["b"] = clf.b;
    j["trained_on"] = clf.trained_on;
    j["seed"] = clf.seed;
    j["l2_lambda"] = clf.l2_lambda;
    j["train_loss"] = clf.train_loss;
    if (!clf.config_hash.empty())
        j["config_hash"] = clf.config_hash;
    return j.dump();
}

LinearClassifier from_json(std::string_view text)
{
    LinearClassifier clf;
    try {
        const auto j = nlohmann::json::parse(text);
        clf.version = j.at("version").get<std::string>();
        const auto dim = j.at("dim").get<std::size_t>();
        clf.normalize_inputs = j.at("normalize_inputs").get<bool>();
        clf.w = j.at("w").get<std::vector<double>>();
        clf.b = j.at("b").get<double>();
        clf.trained_on = j.at("trained_on").get<std::string>();
        clf.seed = j.at("seed").get<std::uint64_t>();
        clf.l2_lambda = j.at("l2_lambda").get<double>();
        clf.train_loss = j.at("train_loss").get<double>();
        if (auto it = j.find("config_hash"); it != j.end())
            clf.config_hash = it->get<std::string>();
        if (dim != clf.w.size())
            throw Error(ErrorKind::DimensionMismatch, "classifier declares dim " + std::to_string(dim) + " but has "
                                                          + std::to_string(clf.w.size()) + " weights");
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedRecord, std::string("classifier file: ") + e.what());
    }
    if (clf.w.empty())
        throw Error(ErrorKind::MalformedRecord, "classifier has no weights");
    if (!std::all_of(clf.w.begin(), clf.w.end(), [](double x) { return std::isfinite(x); }) || !std::isfinite(clf.b))
        throw Error(ErrorKind::InvalidVector, "classifier has non-finite parameters");
    return clf;
}

void save_classifier(const LinearClassifier& clf, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
    out << to_json(clf) << '\n';
    if (!out)
        throw Error(ErrorKind::IoError, "write failed on " + path.string());
}

LinearClassifier load_classifier(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorKind::FileNotFound, path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

std::string fingerprint(const LinearClassifier& clf)
{
    return hex_digest(to_json(clf));
}

}  // namespace xlf::classifier

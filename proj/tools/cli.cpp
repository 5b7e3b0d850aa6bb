#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "xlf/classifier.hpp"
#include "xlf/cluster.hpp"
#include "xlf/corpus_io.hpp"
#include "xlf/embedding.hpp"
#include "xlf/hashing.hpp"
#include "xlf/planner.hpp"
#include "xlf/rng.hpp"
#include "xlf/threshold.hpp"
#include "xlf/version.hpp"

namespace xlf::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

int exit_code(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::PercentileOutOfRange:
    case ErrorKind::Overflow:
        return exit_config;
    case ErrorKind::RemoteUnavailable:
        return exit_remote;
    case ErrorKind::IoError:
        return exit_other;
    default:
        return exit_data;
    }
}

namespace {

// Lets "[embedding]\ndim = 64" in a config file set --embedding.dim.
class SectionedConfig : public CLI::ConfigTOML {
public:
    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override
    {
        std::vector<CLI::ConfigItem> items;
        for (auto& item : CLI::ConfigTOML::from_config(input)) {
            if (item.name == "++" || item.name == "--")
                continue;
            std::string name;
            for (const auto& p : item.parents)
                name += p + ".";
            item.name = name + item.name;
            item.parents.clear();
            items.push_back(std::move(item));
        }
        return items;
    }
};

struct Settings {
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::string out = "xlf-out";

    std::vector<std::string> manifests;
    std::string sample = "first_file";
    std::size_t random_files = 4;
    std::size_t sample_docs = corpus::default_sample_docs;

    std::string provider = "hashed_ngram";
    std::size_t dim = 384;
    std::string endpoint;
    int ngram_low = 1;
    int ngram_high = 3;
    std::uint64_t embedding_seed = 0;
    std::size_t batch_size = 64;
    std::size_t truncate_chars = 2048;
    std::size_t max_in_flight = 4;
    int max_retries = 3;
    int retry_backoff_ms = 100;
    int timeout_s = 30;

    std::string classifier_path;
    std::string seed_data;
    double l2_lambda = 1e-4;
    int max_epochs = 500;
    double learning_rate = 1.0;
    double tolerance = 1e-6;
    std::size_t minibatch_size = 0;
    bool normalize_inputs = true;
    double holdout = 0.2;

    std::vector<double> percentiles{threshold::headline_percentile};
    std::vector<std::string> scores;
    std::string tau;
    bool compare = false;

    std::size_t clusters = cluster::default_clusters;
    int max_iters = 50;
    std::size_t fit_sample = cluster::default_fit_sample;
    std::string cluster_model;

    std::uint64_t steps = 200'000;
    std::uint64_t plan_batch = 1024;
    std::uint64_t context_len = 1024;
    std::string languages = "fr:0.5,en:0.5";
    std::string model = "1.3B";
    std::string params_basis = "non_embedding";
    std::string budgets_file;
    std::vector<std::string> budgets;
};

// Every setting that can change an output; paths to the output directory and
// the worker count are left out.
ordered_json resolved_config(const Settings& s)
{
    ordered_json j;
    j["seed"] = s.seed;
    j["corpus"] = {{"manifests", s.manifests},
                   {"sample", s.sample},
                   {"random_files", s.random_files},
                   {"sample_docs", s.sample_docs}};
    j["embedding"] = {{"provider", s.provider},         {"dim", s.dim},
                      {"endpoint", s.endpoint},         {"ngram_low", s.ngram_low},
                      {"ngram_high", s.ngram_high},     {"seed", s.embedding_seed},
                      {"batch_size", s.batch_size},     {"truncate_chars", s.truncate_chars}};
    j["classifier"] = {{"path", s.classifier_path},
                       {"seed_data", s.seed_data},
                       {"l2_lambda", s.l2_lambda},
                       {"max_epochs", s.max_epochs},
                       {"learning_rate", s.learning_rate},
                       {"tolerance", s.tolerance},
                       {"minibatch_size", s.minibatch_size},
                       {"normalize_inputs", s.normalize_inputs},
                       {"holdout", s.holdout}};
    j["threshold"] = {{"percentiles", s.percentiles}, {"scores", s.scores}, {"tau", s.tau}, {"compare", s.compare}};
    j["clusters"] = {{"k", s.clusters},
                     {"max_iters", s.max_iters},
                     {"fit_sample", s.fit_sample},
                     {"model", s.cluster_model}};
    j["plan"] = {{"steps", s.steps},
                 {"batch_size", s.plan_batch},
                 {"context_len", s.context_len},
                 {"languages", s.languages},
                 {"model", s.model},
                 {"params_basis", s.params_basis},
                 {"budgets_file", s.budgets_file},
                 {"budget", s.budgets}};
    return j;
}

std::string num(double x, int digits = 6)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, x);
    return buf;
}

std::string fixed(double x, int decimals)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, x);
    return buf;
}

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"')
            q += '"';
        q += c;
    }
    return q + '"';
}

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text))
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
}

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorKind::FileNotFound, path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class Job {
public:
    Job(const Settings& s, std::string command, std::ostream& out)
      : s_(s), command_(std::move(command)), out_(out), dir_(s.out),
        config_hash_(hex_digest(resolved_config(s).dump()))
    {
        fs::create_directories(dir_);
    }

    const Settings& settings() const { return s_; }
    const fs::path& dir() const { return dir_; }
    std::ostream& log() { return out_; }

    void record(std::string kind, const ordered_json& fields)
    {
        ordered_json r;
        r["record"] = std::move(kind);
        for (const auto& [k, v] : fields.items())
            r[k] = v;
        r["toolkit_version"] = toolkit_version;
        r["config_hash"] = config_hash_;
        r["seed"] = s_.seed;
        records_ += r.dump() + '\n';
    }

    std::string provenance_line() const
    {
        return "xlf " + std::string(toolkit_version) + " " + command_ + " config_hash=" + config_hash_
               + " seed=" + std::to_string(s_.seed);
    }

    ordered_json provenance() const
    {
        return {{"toolkit_version", toolkit_version}, {"config_hash", config_hash_}, {"seed", s_.seed}};
    }

    const std::string& config_hash() const { return config_hash_; }

    void summary(const std::string& line) { summary_ += line + '\n'; }

    void finish()
    {
        write_text(dir_ / (command_ + ".report.jsonl"), records_);
        const std::string text = provenance_line() + "\n" + summary_;
        write_text(dir_ / (command_ + ".summary.txt"), text);
        out_ << text;
    }

private:
    const Settings& s_;
    std::string command_;
    std::ostream& out_;
    fs::path dir_;
    std::string config_hash_;
    std::string records_;
    std::string summary_;
};

embedding::EmbeddingProviderConfig provider_config(const Settings& s)
{
    embedding::EmbeddingProviderConfig c;
    c.kind = embedding::parse_provider_kind(s.provider);
    c.dim = s.dim;
    c.endpoint = s.endpoint;
    c.ngram_low = s.ngram_low;
    c.ngram_high = s.ngram_high;
    c.seed = s.embedding_seed;
    c.batch_size = s.batch_size;
    c.truncate_chars = s.truncate_chars;
    c.max_in_flight = s.max_in_flight;
    c.max_retries = s.max_retries;
    c.retry_backoff = std::chrono::milliseconds(s.retry_backoff_ms);
    c.timeout = std::chrono::seconds(s.timeout_s);
    embedding::validate(c);
    return c;
}

corpus::SampleStrategy strategy(const Settings& s)
{
    if (s.sample == "first_file")
        return corpus::FirstFile{};
    if (s.sample == "random_files")
        return corpus::RandomFiles{s.random_files, s.seed};
    throw Error(ErrorKind::ConfigError, "corpus.sample must be first_file or random_files, got '" + s.sample + "'");
}

std::vector<corpus::CorpusManifest> manifests(const Settings& s)
{
    if (s.manifests.empty())
        throw Error(ErrorKind::ConfigError, "no corpus manifests configured (corpus.manifest)");
    std::vector<corpus::CorpusManifest> out;
    for (const auto& p : s.manifests)
        out.push_back(corpus::load_manifest(p));
    return out;
}

fs::path classifier_file(const Job& job)
{
    fs::path p = job.settings().classifier_path;
    if (p.empty())
        p = job.dir() / "classifier.json";
    if (!fs::exists(p))
        throw Error(ErrorKind::ConfigError,
                    "classifier file " + p.string() + " does not exist; run train-filter or set classifier.path");
    return p;
}

std::string percentile_label(double p)
{
    return "p" + num(p);
}

struct SeedSet {
    std::vector<std::string> texts;
    std::vector<int> labels;
    std::size_t annotated = 0;  // records that carried a 0-5 score
};

SeedSet read_seed_data(const fs::path& path)
{
    SeedSet set;
    std::istringstream in(read_text(path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        const auto where = path.string() + " line " + std::to_string(line_no);
        try {
            const auto j = nlohmann::json::parse(line);
            std::string text = j.at("text").get<std::string>();
            int y = 0;
            if (j.contains("label")) {
                y = j.at("label").get<int>();
                if (y != 0 && y != 1)
                    throw Error(ErrorKind::MalformedRecord, where + ": label must be 0 or 1");
            } else if (j.contains("score")) {
                y = classifier::binarize_fwe_score(j.at("score").get<int>());
                ++set.annotated;
            } else {
                throw Error(ErrorKind::MalformedRecord, where + ": record needs a label or a score");
            }
            set.texts.push_back(std::move(text));
            set.labels.push_back(y);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::MalformedRecord, where + ": " + e.what());
        }
    }
    return set;
}

std::vector<embedding::EmbeddingVector> embed_all(embedding::EmbeddingProvider& provider,
                                                  const std::vector<std::string>& texts)
{
    return provider.embed_batch(texts);
}

template <typename Fn>
void for_each_embedded(embedding::EmbeddingProvider& provider, const std::vector<corpus::Document>& docs, Fn&& fn)
{
    constexpr std::size_t chunk = 4096;
    std::vector<std::string> texts;
    for (std::size_t start = 0; start < docs.size(); start += chunk) {
        texts.clear();
        for (std::size_t i = start; i < std::min(docs.size(), start + chunk); ++i)
            texts.push_back(docs[i].text);
        for (const auto& v : provider.embed_batch(texts))
            fn(v);
    }
}

void cmd_train_filter(Job& job)
{
    const auto& s = job.settings();
    if (s.seed_data.empty())
        throw Error(ErrorKind::ConfigError, "train-filter needs classifier.seed-data");
    if (!(s.holdout >= 0.0 && s.holdout < 1.0))
        throw Error(ErrorKind::ConfigError, "classifier.holdout must be in [0, 1)");

    const auto seed = read_seed_data(s.seed_data);
    const auto provider = embedding::make_provider(provider_config(s));
    const auto vectors = embed_all(*provider, seed.texts);

    // Stratified holdout so both splits see both classes when possible.
    Rng rng(splitmix64(s.seed));
    std::vector<bool> held(vectors.size(), false);
    for (int cls : {0, 1}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < seed.labels.size(); ++i)
            if (seed.labels[i] == cls)
                idx.push_back(i);
        rng.shuffle(idx);
        auto n_hold = static_cast<std::size_t>(std::floor(s.holdout * static_cast<double>(idx.size())));
        if (!idx.empty())
            n_hold = std::min(n_hold, idx.size() - 1);
        for (std::size_t i = 0; i < n_hold; ++i)
            held[idx[i]] = true;
    }
    std::vector<classifier::LabeledExample> train, holdout;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        positives += seed.labels[i];
        (held[i] ? holdout : train).push_back({vectors[i], seed.labels[i], s.seed_data});
    }

    classifier::TrainConfig tc;
    tc.l2_lambda = s.l2_lambda;
    tc.max_epochs = s.max_epochs;
    tc.learning_rate = s.learning_rate;
    tc.tolerance = s.tolerance;
    if (s.minibatch_size > 0)
        tc.minibatch_size = s.minibatch_size;
    tc.seed = s.seed;
    tc.normalize_inputs = s.normalize_inputs;
    tc.workers = s.workers;

    const std::string origin = "seed_data=" + fs::path(s.seed_data).filename().string()
                               + " sha=" + hex_digest(read_text(s.seed_data)) + " n=" + std::to_string(vectors.size())
                               + " positives=" + std::to_string(positives);
    auto result = classifier::train_logistic_traced(train, tc, origin);
    result.classifier.config_hash = job.config_hash();
    const auto clf_path = job.dir() / "classifier.json";
    classifier::save_classifier(result.classifier, clf_path);

    job.record("train", {{"seed_data", origin},
                         {"annotated_records", seed.annotated},
                         {"n_train", train.size()},
                         {"n_holdout", holdout.size()},
                         {"dim", result.classifier.dim()},
                         {"l2_lambda", s.l2_lambda},
                         {"epochs", result.epochs},
                         {"converged", result.converged},
                         {"initial_loss", result.initial_loss},
                         {"final_loss", result.final_loss},
                         {"final_grad_norm", result.final_grad_norm},
                         {"classifier", clf_path.filename().string()},
                         {"fingerprint", classifier::fingerprint(result.classifier)}});
    job.summary("seed data: " + origin);
    job.summary("trained on " + std::to_string(train.size()) + " examples in " + std::to_string(result.epochs)
                + " epochs, loss " + num(result.initial_loss) + " -> " + num(result.final_loss)
                + (result.converged ? " (converged)" : " (epoch limit)"));
    for (auto [name, split] : {std::pair{"train", &train}, std::pair{"holdout", &holdout}}) {
        if (split->empty())
            continue;
        const auto ev = classifier::evaluate(result.classifier, *split);
        ordered_json rec{{"split", name}, {"n", ev.n}, {"accuracy", ev.accuracy}};
        rec["auc"] = ev.auc ? ordered_json(*ev.auc) : ordered_json(nullptr);
        job.record("evaluation", rec);
        job.summary(std::string(name) + ": n=" + std::to_string(ev.n) + " accuracy=" + fixed(ev.accuracy, 4)
                    + " auc=" + (ev.auc ? fixed(*ev.auc, 4) : std::string("n/a")));
    }
    job.summary("classifier written to " + clf_path.string());
}

fs::path scores_for(Job& job, const corpus::CorpusManifest& m, std::size_t index,
                    const embedding::EmbeddingProviderConfig& provider,
                    const std::optional<classifier::LinearClassifier>& clf)
{
    const auto& s = job.settings();
    if (!s.scores.empty()) {
        if (s.scores.size() != s.manifests.size())
            throw Error(ErrorKind::ConfigError, "threshold.scores needs one score file per manifest");
        return s.scores[index];
    }
    const auto cached = threshold::score_corpus_cached(m, provider, *clf, job.dir() / "scores", s.workers);
    job.log() << (cached.reused ? "reusing scores " : "scored ") << m.corpus_name << " -> " << cached.path.string()
              << '\n';
    return cached.path;
}

void cmd_score(Job& job)
{
    const auto& s = job.settings();
    const auto provider = provider_config(s);
    const auto clf = classifier::load_classifier(classifier_file(job));
    const auto ms = manifests(s);
    for (std::size_t i = 0; i < ms.size(); ++i) {
        const auto path = threshold::score_corpus_cached(ms[i], provider, clf, job.dir() / "scores", s.workers).path;
        const auto scores = threshold::read_scores(path);
        std::vector<double> values;
        for (const auto& r : scores)
            values.push_back(r.score);
        job.record("scores", {{"corpus", ms[i].corpus_name},
                              {"documents", scores.size()},
                              {"scores", fs::relative(path, job.dir()).string()},
                              {"classifier", classifier::fingerprint(clf)}});
        job.summary(ms[i].corpus_name + ": " + std::to_string(scores.size()) + " documents scored into "
                    + fs::relative(path, job.dir()).string());
    }
}

void cmd_threshold(Job& job)
{
    const auto& s = job.settings();
    const threshold::DocumentScorer scorer(provider_config(s), classifier::load_classifier(classifier_file(job)));
    const auto strat = strategy(s);
    for (const auto& m : manifests(s)) {
        for (double p : s.percentiles) {
            const auto est = threshold::estimate_threshold(m, strat, scorer, p, s.sample_docs);
            job.record("threshold", threshold::to_json(est));
            job.summary(m.corpus_name + " " + percentile_label(p) + ": tau=" + fixed(est.tau, 6) + " from "
                        + std::to_string(est.sample_size) + " docs (" + est.strategy + ")");
            if (s.compare) {
                const auto cmp = threshold::compare_sampling_strategies(m, scorer, p, s.random_files, s.seed,
                                                                        s.sample_docs);
                auto rec = threshold::to_json(cmp);
                rec["corpus"] = m.corpus_name;
                rec["percentile"] = p;
                job.record("sampling_comparison", rec);
                job.summary("  first_file tau=" + fixed(cmp.tau_first, 6) + " random_files tau="
                            + fixed(cmp.tau_random, 6) + " rel_diff=" + fixed(cmp.rel_diff, 4)
                            + (cmp.flagged ? " FLAGGED" : ""));
            }
        }
    }
}

void write_score_histogram(Job& job, const std::string& corpus_name, const threshold::FilterStats& stats)
{
    std::string csv = "# " + job.provenance_line() + "\nbin,lower,upper,count\n";
    for (std::size_t b = 0; b < threshold::histogram_bins; ++b) {
        const double lo = static_cast<double>(b) / threshold::histogram_bins;
        const double hi = static_cast<double>(b + 1) / threshold::histogram_bins;
        csv += std::to_string(b) + "," + fixed(lo, 2) + "," + fixed(hi, 2) + ","
               + std::to_string(stats.score_histogram[b]) + "\n";
    }
    write_text(job.dir() / (corpus_name + ".score_histogram.csv"), csv);
}

void cmd_filter(Job& job)
{
    const auto& s = job.settings();
    const auto provider = provider_config(s);
    std::optional<double> fixed_tau;
    if (!s.tau.empty()) {
        try {
            fixed_tau = std::stod(s.tau);
        } catch (const std::exception&) {
            throw Error(ErrorKind::ConfigError, "threshold.tau is not a number: " + s.tau);
        }
    }
    std::optional<classifier::LinearClassifier> clf;
    if (!fixed_tau || s.scores.empty())
        clf = classifier::load_classifier(classifier_file(job));
    const auto strat = strategy(s);
    const auto ms = manifests(s);
    job.summary("corpus | cut | tau | docs_in | docs_out | retention");
    for (std::size_t i = 0; i < ms.size(); ++i) {
        const auto& m = ms[i];
        const auto scores_path = scores_for(job, m, i, provider, clf);
        std::vector<std::pair<std::string, double>> cuts;
        if (fixed_tau) {
            cuts.emplace_back("tau-" + num(*fixed_tau), *fixed_tau);
        } else {
            const threshold::DocumentScorer scorer(provider, *clf);
            for (double p : s.percentiles) {
                const auto est = threshold::estimate_threshold(m, strat, scorer, p, s.sample_docs);
                job.record("threshold", threshold::to_json(est));
                cuts.emplace_back(percentile_label(p), est.tau);
            }
        }
        for (std::size_t c = 0; c < cuts.size(); ++c) {
            const auto& [label, tau] = cuts[c];
            const auto out_dir = job.dir() / "filtered" / m.corpus_name / label;
            const auto stats = threshold::apply_filter(m, scores_path, tau, out_dir, s.workers);
            corpus::save_manifest(threshold::filtered_manifest(m, out_dir), out_dir / "manifest.json");
            ordered_json rec{{"corpus", m.corpus_name}, {"cut", label}};
            const auto stats_json = threshold::to_json(stats);
            for (const auto& [k, v] : stats_json.items())
                rec[k] = v;
            rec["output"] = fs::relative(out_dir, job.dir()).string();
            job.record("filter", rec);
            job.summary(m.corpus_name + " | " + label + " | " + fixed(tau, 6) + " | " + std::to_string(stats.docs_in)
                        + " | " + std::to_string(stats.docs_out) + " | " + fixed(stats.retention, 4));
            if (c == 0)
                write_score_histogram(job, m.corpus_name, stats);
        }
    }
}

void cmd_clusters(Job& job)
{
    const auto& s = job.settings();
    const auto provider = embedding::make_provider(provider_config(s));
    const auto strat = strategy(s);
    const auto ms = manifests(s);

    cluster::ClusterModel model;
    if (!s.cluster_model.empty()) {
        model = cluster::load_model(s.cluster_model);
        if (model.dim != s.dim)
            throw Error(ErrorKind::DimensionMismatch, "cluster model dim " + std::to_string(model.dim)
                                                          + " but embedding dim " + std::to_string(s.dim));
        job.record("cluster_model", {{"source", s.cluster_model}, {"K", model.k}, {"dim", model.dim}});
        job.summary("loaded K=" + std::to_string(model.k) + " model from " + s.cluster_model);
    } else {
        const auto docs = corpus::sample_documents(ms.front(), strat, s.fit_sample);
        std::vector<embedding::EmbeddingVector> points;
        points.reserve(docs.size());
        for_each_embedded(*provider, docs, [&](const embedding::EmbeddingVector& v) { points.push_back(v); });
        const auto fit = cluster::fit_balanced_kmeans(points, s.clusters, s.seed, s.max_iters, s.workers);
        model = fit.model;
        auto j = cluster::to_json(model);
        j["provenance"] = job.provenance();
        write_text(job.dir() / "clusters" / "model.json", j.dump() + "\n");
        job.record("cluster_fit", {{"fit_corpus", ms.front().corpus_name},
                                   {"fit_points", points.size()},
                                   {"K", model.k},
                                   {"dim", model.dim},
                                   {"capacity", model.capacity},
                                   {"iterations", fit.iterations},
                                   {"converged", fit.converged},
                                   {"wcss", fit.wcss_history.empty() ? 0.0 : fit.wcss_history.back()},
                                   {"sizes", fit.sizes}});
        job.summary("fit K=" + std::to_string(model.k) + " balanced clusters on " + std::to_string(points.size())
                    + " points of " + ms.front().corpus_name + " (capacity " + std::to_string(model.capacity) + ", "
                    + std::to_string(fit.iterations) + " iterations)");
    }

    std::vector<cluster::ClusterHistogram> hists;
    std::map<std::string, int> seen;
    for (const auto& m : ms) {
        std::string name = m.corpus_name;
        if (int n = seen[name]++; n > 0)
            name += "#" + std::to_string(n + 1);
        cluster::HistogramBuilder builder(model, name);
        const auto docs = corpus::sample_documents(m, strat, s.sample_docs);
        for_each_embedded(*provider, docs, [&](const embedding::EmbeddingVector& v) { builder.add(v); });
        hists.push_back(builder.finish());
    }

    std::string hist_lines;
    const auto provenance = job.provenance();
    for (const auto& h : hists) {
        auto j = cluster::to_json(h);
        for (const auto& [k, v] : provenance.items())
            j[k] = v;
        hist_lines += j.dump() + "\n";
        job.record("histogram", {{"dataset_name", h.dataset_name}, {"K", h.counts.size()}, {"total", h.total}});
    }
    write_text(job.dir() / "clusters" / "histograms.jsonl", hist_lines);

    std::string csv = "# " + job.provenance_line() + "\ncluster";
    for (const auto& h : hists)
        csv += "," + csv_field(h.dataset_name);
    csv += "\n";
    for (std::size_t c = 0; c < model.k; ++c) {
        csv += std::to_string(c);
        for (const auto& h : hists)
            csv += "," + std::to_string(h.counts[c]);
        csv += "\n";
    }
    write_text(job.dir() / "clusters" / ("histograms_k" + std::to_string(model.k) + ".csv"), csv);

    const auto tv = cluster::distance_matrix(hists);
    std::string tv_csv = "# " + job.provenance_line() + "\ndataset";
    for (const auto& h : hists)
        tv_csv += "," + csv_field(h.dataset_name);
    tv_csv += "\n";
    for (std::size_t a = 0; a < hists.size(); ++a) {
        tv_csv += csv_field(hists[a].dataset_name);
        for (std::size_t b = 0; b < hists.size(); ++b) {
            tv_csv += "," + fixed(tv[a][b], 6);
            if (b > a) {
                job.record("tv_distance",
                           {{"a", hists[a].dataset_name}, {"b", hists[b].dataset_name}, {"tv", tv[a][b]}});
                job.summary("TV(" + hists[a].dataset_name + ", " + hists[b].dataset_name + ") = " + fixed(tv[a][b], 4));
            }
        }
        tv_csv += "\n";
    }
    write_text(job.dir() / "clusters" / "tv_matrix.csv", tv_csv);
}

std::string trim(std::string s)
{
    const auto a = s.find_first_not_of(" \t");
    const auto b = s.find_last_not_of(" \t");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

double parse_number(const std::string& text, const std::string& what)
{
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size())
        throw Error(ErrorKind::ConfigError, what + " is not a number: '" + text + "'");
    return v;
}

planner::TrainingPlan plan_from(const Settings& s)
{
    planner::TrainingPlan plan;
    plan.steps = s.steps;
    plan.batch_size = s.plan_batch;
    plan.context_len = s.context_len;
    std::istringstream langs(s.languages);
    std::string item;
    while (std::getline(langs, item, ',')) {
        item = trim(item);
        if (item.empty())
            continue;
        const auto colon = item.find(':');
        if (colon == std::string::npos)
            throw Error(ErrorKind::ConfigError, "plan.languages entry '" + item + "' is not lang:weight");
        plan.languages.push_back({trim(item.substr(0, colon)),
                                  parse_number(trim(item.substr(colon + 1)), "language weight")});
    }
    const bool preset = std::any_of(std::begin(planner::model_presets), std::end(planner::model_presets),
                                    [&](const auto& p) { return s.model == p.name; });
    plan.model_params = preset ? planner::preset_params(s.model) : parse_number(s.model, "plan.model");
    plan.params_basis = planner::parse_params_basis(s.params_basis);
    planner::validate(plan);
    return plan;
}

std::vector<planner::BudgetEntry> budgets_from(const Settings& s)
{
    std::vector<planner::BudgetEntry> out;
    if (!s.budgets_file.empty()) {
        std::istringstream in(read_text(s.budgets_file));
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty())
                continue;
            try {
                const auto j = nlohmann::json::parse(line);
                out.push_back({j.at("dataset").get<std::string>(), j.at("lang").get<std::string>(),
                               j.at("available_tokens").get<double>()});
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorKind::MalformedRecord,
                            s.budgets_file + " line " + std::to_string(line_no) + ": " + e.what());
            }
        }
    }
    for (const auto& entry : s.budgets) {
        const auto last = entry.rfind(':');
        const auto mid = last == std::string::npos || last == 0 ? std::string::npos : entry.rfind(':', last - 1);
        if (mid == std::string::npos)
            throw Error(ErrorKind::ConfigError, "plan.budget entry '" + entry + "' is not dataset:lang:tokens");
        out.push_back({trim(entry.substr(0, mid)), trim(entry.substr(mid + 1, last - mid - 1)),
                       parse_number(trim(entry.substr(last + 1)), "budget tokens")});
    }
    if (out.empty())
        throw Error(ErrorKind::ConfigError, "no budget entries (plan.budgets or plan.budget)");
    return out;
}

void cmd_plan(Job& job)
{
    const auto plan = plan_from(job.settings());
    const auto rows = planner::plan_mix(plan, budgets_from(job.settings()));
    const auto plan_json = planner::to_json(plan);
    job.record("plan", plan_json);
    for (const auto& r : rows)
        job.record("budget", planner::to_json(r));
    const auto table = planner::format_table(rows);
    const double tokens = static_cast<double>(planner::tokens_for_steps(plan.steps, plan.batch_size, plan.context_len));
    const std::string multiple = "tokens: " + num(tokens / 1e9, 8) + "B, " + fixed(plan_json["chinchilla_multiple"], 2)
                                 + "x chinchilla at " + num(plan.model_params / 1e9) + "B "
                                 + planner::to_string(plan.params_basis) + " params";
    write_text(job.dir() / "plan.md", "<!-- " + job.provenance_line() + " -->\n" + table + "\n" + multiple + "\n");
    job.summary(multiple);
    job.summary(table);
    for (const auto& r : rows) {
        if (r.warn)
            job.summary("warning: " + r.dataset + " repeats " + fixed(r.epochs, 2) + " epochs");
        else if (r.advisory)
            job.summary("advisory: " + r.dataset + " repeats " + fixed(r.epochs, 2) + " epochs");
    }
}

void cmd_report(Job& job)
{
    int found = 0;
    for (const char* name : {"train-filter", "score", "threshold", "filter", "clusters", "plan"}) {
        const auto path = job.dir() / (std::string(name) + ".summary.txt");
        if (!fs::exists(path))
            continue;
        ++found;
        job.summary("## " + std::string(name));
        job.summary(read_text(path));
        job.record("section", {{"command", name}, {"summary", fs::relative(path, job.dir()).string()}});
    }
    if (found == 0)
        throw Error(ErrorKind::ConfigError, "no command summaries found in " + job.dir().string());
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err)
{
    Settings s;
    CLI::App app{"Cross-lingual quality filtering toolkit", "xlf"};
    app.option_defaults()->always_capture_default();
    app.config_formatter(std::make_shared<SectionedConfig>());
    app.set_config("--config", "", "TOML/INI config; [section] key maps to --section.key");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.set_version_flag("--version", std::string(toolkit_version));
    app.require_subcommand(1);

    app.add_option("--seed", s.seed, "Seed recorded in every artifact");
    app.add_option("--workers", s.workers, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out", s.out, "Output directory");

    app.add_option("--corpus.manifest", s.manifests, "Corpus manifest(s)")->check(CLI::ExistingFile);
    app.add_option("--corpus.sample", s.sample, "first_file or random_files");
    app.add_option("--corpus.random-files", s.random_files, "Shards drawn by random_files")
        ->check(CLI::PositiveNumber);
    app.add_option("--corpus.sample-docs", s.sample_docs, "Documents per sample")->check(CLI::PositiveNumber);

    app.add_option("--embedding.provider", s.provider, "hashed_ngram or remote");
    app.add_option("--embedding.dim", s.dim);
    app.add_option("--embedding.endpoint", s.endpoint, "Remote service base URL");
    app.add_option("--embedding.ngram-low", s.ngram_low);
    app.add_option("--embedding.ngram-high", s.ngram_high);
    app.add_option("--embedding.seed", s.embedding_seed);
    app.add_option("--embedding.batch-size", s.batch_size);
    app.add_option("--embedding.truncate-chars", s.truncate_chars);
    app.add_option("--embedding.max-in-flight", s.max_in_flight);
    app.add_option("--embedding.max-retries", s.max_retries);
    app.add_option("--embedding.retry-backoff-ms", s.retry_backoff_ms);
    app.add_option("--embedding.timeout-s", s.timeout_s);

    app.add_option("--classifier.path", s.classifier_path, "Trained classifier (default OUT/classifier.json)");
    app.add_option("--classifier.seed-data", s.seed_data, "ndjson {text,label} or {text,score}")
        ->check(CLI::ExistingFile);
    app.add_option("--classifier.l2-lambda", s.l2_lambda);
    app.add_option("--classifier.max-epochs", s.max_epochs);
    app.add_option("--classifier.learning-rate", s.learning_rate);
    app.add_option("--classifier.tolerance", s.tolerance);
    app.add_option("--classifier.minibatch-size", s.minibatch_size, "0 = full batch");
    app.add_option("--classifier.normalize-inputs", s.normalize_inputs);
    app.add_option("--classifier.holdout", s.holdout, "Held-out fraction per class");

    app.add_option("--threshold.percentiles", s.percentiles);
    app.add_option("--threshold.scores", s.scores, "Precomputed score file(s), one per manifest")
        ->check(CLI::ExistingFile);
    app.add_option("--threshold.tau", s.tau, "Fixed threshold instead of percentiles");
    app.add_flag("--threshold.compare", s.compare, "Compare first_file and random_files thresholds");

    app.add_option("--clusters.k", s.clusters);
    app.add_option("--clusters.max-iters", s.max_iters);
    app.add_option("--clusters.fit-sample", s.fit_sample);
    app.add_option("--clusters.model", s.cluster_model, "Reuse a fitted model")->check(CLI::ExistingFile);

    app.add_option("--plan.steps", s.steps);
    app.add_option("--plan.batch-size", s.plan_batch);
    app.add_option("--plan.context-len", s.context_len);
    app.add_option("--plan.languages", s.languages, "lang:weight,...");
    app.add_option("--plan.model", s.model, "Preset (350M, 1.3B, 2.7B) or parameter count");
    app.add_option("--plan.params-basis", s.params_basis, "non_embedding or total");
    app.add_option("--plan.budgets", s.budgets_file, "ndjson {dataset,lang,available_tokens}")
        ->check(CLI::ExistingFile);
    app.add_option("--plan.budget", s.budgets, "dataset:lang:billions");

    using Command = void (*)(Job&);
    const std::vector<std::tuple<std::string, std::string, Command>> commands{
        {"train-filter", "Train the quality classifier on seed data", cmd_train_filter},
        {"score", "Score every document of the corpora", cmd_score},
        {"threshold", "Estimate percentile thresholds from a sample", cmd_threshold},
        {"filter", "Keep documents scoring above the threshold", cmd_filter},
        {"clusters", "Fit balanced clusters and compare dataset histograms", cmd_clusters},
        {"plan", "Token budget and repetition table for a training plan", cmd_plan},
        {"report", "Collect the command summaries in the output directory", cmd_report},
    };
    for (const auto& [name, help, fn] : commands)
        app.add_subcommand(name, help)->fallthrough();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? exit_ok : exit_config;
    }

    try {
        for (const auto& [name, help, fn] : commands) {
            if (!app.got_subcommand(name))
                continue;
            Job job(s, name, out);
            fn(job);
            job.finish();
        }
    } catch (const Error& e) {
        err << "xlf: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        err << "xlf: " << e.what() << '\n';
        return exit_other;
    }
    return exit_ok;
}

}  // namespace xlf::cli

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlf/classifier.hpp"
#include "xlf/corpus_io.hpp"
#include "xlf/embedding.hpp"

namespace xlf::threshold {

struct ScoreRecord {
    std::string doc_id;
    double score = 0.0;
    std::string shard;

    bool operator==(const ScoreRecord&) const = default;
};

std::string encode_score(const ScoreRecord& record);
ScoreRecord decode_score(std::string_view line);
std::vector<ScoreRecord> read_scores(const std::filesystem::path& path);
void write_scores(const std::filesystem::path& path, std::span<const ScoreRecord> records);

inline constexpr std::array<double, 4> percentile_presets{30.0, 60.0, 90.0, 95.0};
inline constexpr double headline_percentile = 90.0;
inline constexpr std::size_t histogram_bins = 100;

/// The selection rule: a document is kept iff its score is strictly above tau.
inline bool passes(double score, double tau) noexcept { return score > tau; }

std::size_t histogram_bin(double score) noexcept;

struct ThresholdEstimate {
    double percentile = 0.0;
    double tau = 0.0;
    std::size_t sample_size = 0;
    std::string strategy;
    std::string corpus_name;
};

struct FilterStats {
    std::uint64_t docs_in = 0;
    std::uint64_t docs_out = 0;
    double retention = 0.0;
    std::array<std::uint64_t, histogram_bins> score_histogram{};
    double tau = 0.0;
};

/// Nearest rank: tau is the ceil(p/100 * n)-th smallest score.
double estimate_percentile_threshold(std::span<const double> scores, double percentile);

/// Percentile whose threshold keeps roughly the given fraction of a corpus.
double percentile_for_retention(double retention);

/// Embeds and scores documents with a fixed provider and classifier.
class DocumentScorer {
public:
    DocumentScorer(const embedding::EmbeddingProviderConfig& provider, classifier::LinearClassifier clf);

    std::vector<double> score(std::span<const corpus::Document> docs) const;

    const embedding::EmbeddingProviderConfig& provider_config() const noexcept { return provider_->config(); }
    const classifier::LinearClassifier& classifier() const noexcept { return clf_; }

private:
    std::unique_ptr<embedding::EmbeddingProvider> provider_;
    classifier::LinearClassifier clf_;
};

struct ScoringSummary {
    std::size_t documents = 0;
    std::size_t malformed_lines = 0;
};

/// Scores every document of the corpus into a score file. Shards are scored
/// in parallel into per-shard fragments and concatenated in shard order, so
/// the output does not depend on the worker count.
ScoringSummary score_corpus(const corpus::CorpusManifest& manifest,
                            const embedding::EmbeddingProviderConfig& provider,
                            const classifier::LinearClassifier& clf, const std::filesystem::path& out_path,
                            std::size_t workers = 1);

/// Cache location keyed by corpus, provider config and classifier.
std::filesystem::path score_cache_path(const std::filesystem::path& cache_dir,
                                       const corpus::CorpusManifest& manifest,
                                       const embedding::EmbeddingProviderConfig& provider,
                                       const classifier::LinearClassifier& clf);

struct CachedScores {
    std::filesystem::path path;
    bool reused = false;
};

CachedScores score_corpus_cached(const corpus::CorpusManifest& manifest,
                                 const embedding::EmbeddingProviderConfig& provider,
                                 const classifier::LinearClassifier& clf, const std::filesystem::path& cache_dir,
                                 std::size_t workers = 1);

ThresholdEstimate estimate_threshold(const corpus::CorpusManifest& manifest, const corpus::SampleStrategy& strategy,
                                     const DocumentScorer& scorer, double percentile,
                                     std::size_t max_docs = corpus::default_sample_docs);

/// Writes one output shard per input shard (same file name) under out_dir
/// holding exactly the documents whose score passes tau, in input order.
FilterStats apply_filter(const corpus::CorpusManifest& manifest, const std::filesystem::path& scores_path,
                         double tau, const std::filesystem::path& out_dir, std::size_t workers = 1);

/// Manifest describing the shards apply_filter wrote.
corpus::CorpusManifest filtered_manifest(const corpus::CorpusManifest& manifest,
                                         const std::filesystem::path& out_dir);

inline constexpr double sampling_flag_threshold = 0.10;

struct SamplingComparison {
    double tau_first = 0.0;
    double tau_random = 0.0;
    double rel_diff = 0.0;
    bool flagged = false;
    std::size_t first_sample_size = 0;
    std::size_t random_sample_size = 0;
};

/// |a - b| / max(a, b), zero when both are zero.
double relative_difference(double a, double b) noexcept;

SamplingComparison compare_sampling_strategies(const corpus::CorpusManifest& manifest, const DocumentScorer& scorer,
                                               double percentile, std::size_t n_random, std::uint64_t seed,
                                               std::size_t max_docs = corpus::default_sample_docs);

SamplingComparison compare_sampling_strategies(const corpus::CorpusManifest& manifest,
                                               const embedding::EmbeddingProviderConfig& provider,
                                               const classifier::LinearClassifier& clf, double percentile,
                                               std::size_t n_random, std::uint64_t seed,
                                               std::size_t max_docs = corpus::default_sample_docs);

nlohmann::ordered_json to_json(const ThresholdEstimate& estimate);
nlohmann::ordered_json to_json(const FilterStats& stats);
nlohmann::ordered_json to_json(const SamplingComparison& comparison);

}  // namespace xlf::threshold

#include "xlf/threshold.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_map>

#include "xlf/error.hpp"
#include "xlf/hashing.hpp"
#include "xlf/parallel.hpp"

namespace xlf::threshold {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string encode_score(const ScoreRecord& record)
{
    json j;
    j["doc_id"] = record.doc_id;
    j["score"] = record.score;
    j["shard"] = record.shard;
    return j.dump();
}

ScoreRecord decode_score(std::string_view line)
{
    ScoreRecord r;
    try {
        const auto j = nlohmann::json::parse(line);
        r.doc_id = j.at("doc_id").get<std::string>();
        r.score = j.at("score").get<double>();
        r.shard = j.at("shard").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedRecord, std::string("score record: ") + e.what());
    }
    if (!std::isfinite(r.score) || r.score < 0.0 || r.score > 1.0)
        throw Error(ErrorKind::MalformedRecord, "score for '" + r.doc_id + "' outside [0,1]");
    return r;
}

std::vector<ScoreRecord> read_scores(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorKind::FileNotFound, path.string());
    std::vector<ScoreRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        try {
            out.push_back(decode_score(line));
        } catch (const Error& e) {
            throw Error(ErrorKind::MalformedRecord, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void write_scores(const fs::path& path, std::span<const ScoreRecord> records)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
    for (const auto& r : records)
        out << encode_score(r) << '\n';
    if (!out)
        throw Error(ErrorKind::IoError, "write failed on " + path.string());
}

std::size_t histogram_bin(double score) noexcept
{
    if (!(score > 0.0))
        return 0;
    const auto bin = static_cast<std::size_t>(score * static_cast<double>(histogram_bins));
    return std::min(bin, histogram_bins - 1);
}

double estimate_percentile_threshold(std::span<const double> scores, double percentile)
{
    if (scores.empty())
        throw Error(ErrorKind::EmptyScores, "cannot estimate a threshold from no scores");
    if (!(percentile > 0.0 && percentile < 100.0))
        throw Error(ErrorKind::PercentileOutOfRange, "percentile " + std::to_string(percentile) + " not in (0,100)");
    const auto n = scores.size();
    // p*n is exact for integral percentiles, so the division is the only rounding step
    auto rank = static_cast<std::size_t>(std::ceil(percentile * static_cast<double>(n) / 100.0));
    rank = std::clamp<std::size_t>(rank, 1, n);
    std::vector<double> sorted(scores.begin(), scores.end());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1), sorted.end());
    return sorted[rank - 1];
}

double percentile_for_retention(double retention)
{
    if (!(retention > 0.0 && retention < 1.0))
        throw Error(ErrorKind::PercentileOutOfRange, "retention must lie in (0,1)");
    return 100.0 * (1.0 - retention);
}

DocumentScorer::DocumentScorer(const embedding::EmbeddingProviderConfig& provider, classifier::LinearClassifier clf)
  : provider_(embedding::make_provider(provider)), clf_(std::move(clf))
{
    if (provider.dim != clf_.dim())
        throw Error(ErrorKind::DimensionMismatch, "provider dim " + std::to_string(provider.dim)
                                                      + " but classifier dim " + std::to_string(clf_.dim()));
}

std::vector<double> DocumentScorer::score(std::span<const corpus::Document> docs) const
{
    std::vector<double> out;
    out.reserve(docs.size());
    const std::size_t batch = provider_->config().batch_size;
    std::vector<std::string> texts;
    for (std::size_t start = 0; start < docs.size(); start += batch) {
        texts.clear();
        for (std::size_t i = start; i < std::min(docs.size(), start + batch); ++i)
            texts.push_back(docs[i].text);
        for (const auto& v : provider_->embed_batch(texts))
            out.push_back(classifier::score(clf_, v));
    }
    return out;
}

namespace {

fs::path fragment_path(const fs::path& out_path, std::size_t shard)
{
    return fs::path(out_path.string() + ".part-" + std::to_string(shard));
}

Error shard_error(const fs::path& shard, const Error& e)
{
    return Error(e.kind(), "shard " + shard.string() + ": " + e.what());
}

}  // namespace

ScoringSummary score_corpus(const corpus::CorpusManifest& manifest, const embedding::EmbeddingProviderConfig& provider,
                            const classifier::LinearClassifier& clf, const fs::path& out_path, std::size_t workers)
{
    const DocumentScorer scorer(provider, clf);
    const auto& shards = manifest.shard_paths;
    std::vector<ScoringSummary> per_shard(shards.size());

    try {
        parallel_for(shards.size(), workers, [&](std::size_t i) {
            try {
                corpus::ShardReader reader(shards[i]);
                std::ofstream out(fragment_path(out_path, i), std::ios::binary | std::ios::trunc);
                if (!out)
                    throw Error(ErrorKind::IoError, "cannot write " + fragment_path(out_path, i).string());
                const std::string shard_name = shards[i].filename().string();
                std::vector<corpus::Document> batch;
                auto flush = [&] {
                    if (batch.empty())
                        return;
                    const auto scores = scorer.score(batch);
                    for (std::size_t k = 0; k < batch.size(); ++k)
                        out << encode_score({batch[k].id, scores[k], shard_name}) << '\n';
                    per_shard[i].documents += batch.size();
                    batch.clear();
                };
                while (auto doc = reader.next()) {
                    batch.push_back(std::move(*doc));
                    if (batch.size() >= provider.batch_size)
                        flush();
                }
                flush();
                per_shard[i].malformed_lines = reader.malformed().size();
                if (!out)
                    throw Error(ErrorKind::IoError, "write failed on " + fragment_path(out_path, i).string());
            } catch (const Error& e) {
                throw shard_error(shards[i], e);
            }
        });
    } catch (...) {
        for (std::size_t i = 0; i < shards.size(); ++i) {
            std::error_code ec;
            fs::remove(fragment_path(out_path, i), ec);
        }
        throw;
    }

    const fs::path tmp = out_path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error(ErrorKind::IoError, "cannot write " + tmp.string());
        for (std::size_t i = 0; i < shards.size(); ++i) {
            {
                std::ifstream in(fragment_path(out_path, i), std::ios::binary);
                if (in.peek() != std::ifstream::traits_type::eof())
                    out << in.rdbuf();
            }
            fs::remove(fragment_path(out_path, i));
        }
        if (!out)
            throw Error(ErrorKind::IoError, "write failed on " + tmp.string());
    }
    fs::rename(tmp, out_path);

    ScoringSummary total;
    for (const auto& s : per_shard) {
        total.documents += s.documents;
        total.malformed_lines += s.malformed_lines;
    }
    return total;
}

fs::path score_cache_path(const fs::path& cache_dir, const corpus::CorpusManifest& manifest,
                          const embedding::EmbeddingProviderConfig& provider, const classifier::LinearClassifier& clf)
{
    std::string corpus_key = manifest.corpus_name;
    for (const auto& p : manifest.shard_paths)
        corpus_key += "|" + p.string();
    const std::string key = hex_digest(corpus_key) + "-" + hex_digest(embedding::canonical_form(provider)) + "-"
                            + classifier::fingerprint(clf);
    return cache_dir / (manifest.corpus_name + "-" + key + ".scores.jsonl");
}

CachedScores score_corpus_cached(const corpus::CorpusManifest& manifest,
                                 const embedding::EmbeddingProviderConfig& provider,
                                 const classifier::LinearClassifier& clf, const fs::path& cache_dir,
                                 std::size_t workers)
{
    fs::create_directories(cache_dir);
    CachedScores cached{score_cache_path(cache_dir, manifest, provider, clf), false};
    if (fs::exists(cached.path)) {
        cached.reused = true;
        return cached;
    }
    score_corpus(manifest, provider, clf, cached.path, workers);
    return cached;
}

ThresholdEstimate estimate_threshold(const corpus::CorpusManifest& manifest, const corpus::SampleStrategy& strategy,
                                     const DocumentScorer& scorer, double percentile, std::size_t max_docs)
{
    const auto docs = corpus::sample_documents(manifest, strategy, max_docs);
    const auto scores = scorer.score(docs);
    ThresholdEstimate est;
    est.percentile = percentile;
    est.tau = estimate_percentile_threshold(scores, percentile);
    est.sample_size = scores.size();
    est.strategy = corpus::describe(strategy);
    est.corpus_name = manifest.corpus_name;
    return est;
}

FilterStats apply_filter(const corpus::CorpusManifest& manifest, const fs::path& scores_path, double tau,
                         const fs::path& out_dir, std::size_t workers)
{
    std::set<std::string> names;
    for (const auto& p : manifest.shard_paths)
        if (!names.insert(p.filename().string()).second)
            throw Error(ErrorKind::ConfigError, "two shards share the file name " + p.filename().string());

    std::unordered_map<std::string, double> scores;
    for (auto& r : read_scores(scores_path))
        scores[std::move(r.doc_id)] = r.score;

    fs::create_directories(out_dir);
    const auto& shards = manifest.shard_paths;
    std::vector<FilterStats> per_shard(shards.size());
    parallel_for(shards.size(), workers, [&](std::size_t i) {
        auto& stats = per_shard[i];
        corpus::ShardReader reader(shards[i]);
        corpus::ShardWriter writer(out_dir / shards[i].filename());
        while (auto doc = reader.next()) {
            auto it = scores.find(doc->id);
            if (it == scores.end())
                throw Error(ErrorKind::MissingScore, "no score for document '" + doc->id + "'");
            ++stats.docs_in;
            ++stats.score_histogram[histogram_bin(it->second)];
            if (passes(it->second, tau)) {
                writer.write(*doc);
                ++stats.docs_out;
            }
        }
        writer.close();
    });

    FilterStats total;
    total.tau = tau;
    for (const auto& s : per_shard) {
        total.docs_in += s.docs_in;
        total.docs_out += s.docs_out;
        for (std::size_t b = 0; b < histogram_bins; ++b)
            total.score_histogram[b] += s.score_histogram[b];
    }
    total.retention = total.docs_in == 0 ? 0.0
                                         : static_cast<double>(total.docs_out) / static_cast<double>(total.docs_in);
    return total;
}

corpus::CorpusManifest filtered_manifest(const corpus::CorpusManifest& manifest, const fs::path& out_dir)
{
    std::vector<fs::path> shards;
    for (const auto& p : manifest.shard_paths)
        shards.push_back(out_dir / p.filename());
    return corpus::make_manifest(manifest.corpus_name + "-filtered", manifest.lang, std::move(shards));
}

double relative_difference(double a, double b) noexcept
{
    const double denom = std::max(a, b);
    if (denom <= 0.0)
        return 0.0;
    return std::abs(a - b) / denom;
}

SamplingComparison compare_sampling_strategies(const corpus::CorpusManifest& manifest, const DocumentScorer& scorer,
                                               double percentile, std::size_t n_random, std::uint64_t seed,
                                               std::size_t max_docs)
{
    const auto first = estimate_threshold(manifest, corpus::FirstFile{}, scorer, percentile, max_docs);
    const auto random = estimate_threshold(manifest, corpus::RandomFiles{n_random, seed}, scorer, percentile, max_docs);
    SamplingComparison c;
    c.tau_first = first.tau;
    c.tau_random = random.tau;
    c.rel_diff = relative_difference(first.tau, random.tau);
    c.flagged = c.rel_diff > sampling_flag_threshold;
    c.first_sample_size = first.sample_size;
    c.random_sample_size = random.sample_size;
    return c;
}

SamplingComparison compare_sampling_strategies(const corpus::CorpusManifest& manifest,
                                               const embedding::EmbeddingProviderConfig& provider,
                                               const classifier::LinearClassifier& clf, double percentile,
                                               std::size_t n_random, std::uint64_t seed, std::size_t max_docs)
{
    const DocumentScorer scorer(provider, clf);
    return compare_sampling_strategies(manifest, scorer, percentile, n_random, seed, max_docs);
}

json to_json(const ThresholdEstimate& estimate)
{
    json j;
    j["corpus_name"] = estimate.corpus_name;
    j["percentile"] = estimate.percentile;
    j["tau"] = estimate.tau;
    j["sample_size"] = estimate.sample_size;
    j["strategy"] = estimate.strategy;
    return j;
}

json to_json(const FilterStats& stats)
{
    json j;
    j["docs_in"] = stats.docs_in;
    j["docs_out"] = stats.docs_out;
    j["retention"] = stats.retention;
    j["tau"] = stats.tau;
    j["score_histogram"] = stats.score_histogram;
    return j;
}

json to_json(const SamplingComparison& c)
{
    json j;
    j["tau_first"] = c.tau_first;
    j["tau_random"] = c.tau_random;
    j["rel_diff"] = c.rel_diff;
    j["flagged"] = c.flagged;
    j["first_sample_size"] = c.first_sample_size;
    j["random_sample_size"] = c.random_sample_size;
    return j;
}

}  // namespace xlf::threshold

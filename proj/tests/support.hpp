#pragma once

// Shared fixtures for the unit and acceptance suites.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "xlf/classifier.hpp"
#include "xlf/corpus_io.hpp"
#include "xlf/embedding.hpp"
#include "xlf/rng.hpp"

namespace xlf::testing {

class TempDir {
public:
    TempDir()
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path()
                / ("xlf-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& contents)
{
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << contents;
}

inline const std::vector<std::string>& plain_words()
{
    static const std::vector<std::string> words{
        "the", "le", "der", "und", "et", "de", "la", "die", "with", "avec", "mit", "this", "ce", "das",
        "page", "site", "click", "home", "login", "news", "menu", "cookie", "shop", "free", "deal", "price"};
    return words;
}

inline const std::vector<std::string>& rich_words()
{
    static const std::vector<std::string> words{
        "theorem", "photosynthesis", "équation", "wissenschaft", "hypothesis", "molecule", "théorie",
        "experiment", "analysis", "derivation", "évolution", "geschichte", "quantum", "literature",
        "philosophie", "mathematik", "biologie", "explanation"};
    return words;
}

/// Random text of `words` tokens; `richness` in [0,1] is the chance each token
/// comes from the "rich" vocabulary.
inline std::string synthetic_text(Rng& rng, std::size_t words, double richness)
{
    std::string out;
    for (std::size_t i = 0; i < words; ++i) {
        const auto& pool = rng.uniform() < richness ? rich_words() : plain_words();
        if (!out.empty())
            out += ' ';
        out += pool[rng.below(pool.size())];
    }
    return out;
}

inline corpus::Document make_doc(std::string id, std::string text, std::string lang = "fr",
                                 std::string source = "synthetic")
{
    return corpus::Document{std::move(id), std::move(text), std::move(lang), std::move(source), {}};
}

/// Writes `shards` shards of `per_shard` documents and returns the manifest.
/// `richness(shard, i)` controls the text mix of each document.
template <typename RichnessFn>
corpus::CorpusManifest write_corpus(const std::filesystem::path& dir, const std::string& name, std::size_t shards,
                                    std::size_t per_shard, std::uint64_t seed, RichnessFn richness,
                                    std::size_t words = 12)
{
    std::filesystem::create_directories(dir);
    Rng rng(seed);
    std::vector<std::filesystem::path> paths;
    for (std::size_t s = 0; s < shards; ++s) {
        std::vector<corpus::Document> docs;
        docs.reserve(per_shard);
        for (std::size_t i = 0; i < per_shard; ++i)
            docs.push_back(make_doc(name + "-" + std::to_string(s) + "-" + std::to_string(i),
                                    synthetic_text(rng, words, richness(s, i))));
        char file[64];
        std::snprintf(file, sizeof file, "shard-%05zu.jsonl", s);
        paths.push_back(dir / file);
        corpus::write_shard(paths.back(), docs);
    }
    return corpus::make_manifest(name, "fr", std::move(paths));
}

/// Two isotropic 2-D Gaussian classes centred at (-2,0) and (+2,0), sigma 1.
inline std::vector<classifier::LabeledExample> two_gaussians(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<classifier::LabeledExample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % 2);
        const double cx = y == 1 ? 2.0 : -2.0;
        out.push_back({embedding::EmbeddingVector{{cx + rng.normal(), rng.normal()}, false}, y, "synthetic"});
    }
    return out;
}

/// Seed set of hashed embeddings: positives from rich text, negatives from plain text.
inline std::vector<classifier::LabeledExample> text_seed_set(const embedding::EmbeddingProviderConfig& provider,
                                                             std::size_t per_class, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<std::string> texts;
    std::vector<int> labels;
    for (std::size_t i = 0; i < per_class; ++i) {
        texts.push_back(synthetic_text(rng, 12, 0.9));
        labels.push_back(1);
        texts.push_back(synthetic_text(rng, 12, 0.05));
        labels.push_back(0);
    }
    const auto vecs = embedding::embed_batch(provider, texts);
    std::vector<classifier::LabeledExample> out;
    for (std::size_t i = 0; i < vecs.size(); ++i)
        out.push_back({vecs[i], labels[i], labels[i] ? "synthetic_rich" : "synthetic_plain"});
    return out;
}

inline embedding::EmbeddingProviderConfig small_hashed_provider(std::size_t dim = 64)
{
    embedding::EmbeddingProviderConfig cfg;
    cfg.kind = embedding::ProviderKind::hashed_ngram;
    cfg.dim = dim;
    cfg.ngram_low = 1;
    cfg.ngram_high = 3;
    cfg.seed = 11;
    return cfg;
}

}  // namespace xlf::testing

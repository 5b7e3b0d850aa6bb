#include <doctest.h>

#include <cmath>
#include <set>

#include "support.hpp"
#include "xlf/error.hpp"
#include "xlf/threshold.hpp"

using namespace xlf;
using namespace xlf::threshold;
using xlf::testing::TempDir;

namespace {

ErrorKind kind_of(auto&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an xlf::Error");
    return ErrorKind::IoError;
}

/// Ten documents in one shard with hand-assigned scores 0.1 .. 1.0.
struct TenDocs {
    corpus::CorpusManifest manifest;
    std::filesystem::path scores;
};

TenDocs ten_docs(const TempDir& dir)
{
    std::vector<corpus::Document> docs;
    std::vector<ScoreRecord> scores;
    for (int i = 1; i <= 10; ++i) {
        docs.push_back(xlf::testing::make_doc("d" + std::to_string(i), "text " + std::to_string(i)));
        scores.push_back({"d" + std::to_string(i), i / 10.0, "s.jsonl"});
    }
    corpus::write_shard(dir / "s.jsonl", docs);
    write_scores(dir / "scores.jsonl", scores);
    return {corpus::make_manifest("ten", "fr", {dir / "s.jsonl"}), dir / "scores.jsonl"};
}

classifier::LinearClassifier fixed_classifier(std::size_t dim, std::uint64_t seed)
{
    Rng rng(seed);
    classifier::LinearClassifier clf;
    for (std::size_t j = 0; j < dim; ++j)
        clf.w.push_back(rng.normal());
    clf.b = -0.5;
    return clf;
}

}  // namespace

TEST_CASE("nearest-rank percentile")
{
    const std::vector<double> s{0.5, 0.1, 0.3, 0.2, 1.0, 0.4, 0.9, 0.6, 0.8, 0.7};
    CHECK(estimate_percentile_threshold(s, 90) == 0.9);
    CHECK(estimate_percentile_threshold(s, 30) == 0.3);
    CHECK(estimate_percentile_threshold(s, 95) == 1.0);
    CHECK(estimate_percentile_threshold(s, 0.01) == 0.1);
    CHECK(estimate_percentile_threshold(std::vector<double>{0.42}, 37) == 0.42);

    const std::vector<double> same(50, 0.3);
    const double tau = estimate_percentile_threshold(same, 90);
    CHECK(tau == 0.3);
    CHECK(std::none_of(same.begin(), same.end(), [&](double x) { return passes(x, tau); }));

    CHECK(kind_of([] { estimate_percentile_threshold(std::vector<double>{}, 50); }) == ErrorKind::EmptyScores);
    CHECK(kind_of([&] { estimate_percentile_threshold(s, 0); }) == ErrorKind::PercentileOutOfRange);
    CHECK(kind_of([&] { estimate_percentile_threshold(s, 100); }) == ErrorKind::PercentileOutOfRange);
}

TEST_CASE("property: nearest rank matches sorting by hand")
{
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> s(1 + rng.below(300));
        for (double& x : s)
            x = rng.uniform();
        const double p = 1.0 + static_cast<double>(rng.below(98));
        auto sorted = s;
        std::sort(sorted.begin(), sorted.end());
        // smallest value with at least p% of the sample at or below it
        std::size_t k = 0;
        while (100.0 * static_cast<double>(k + 1) < p * static_cast<double>(s.size()))
            ++k;
        CHECK(estimate_percentile_threshold(s, p) == sorted[k]);
    }
}

TEST_CASE("retention inversion")
{
    CHECK(percentile_for_retention(0.1) == doctest::Approx(90.0));
    CHECK(kind_of([] { percentile_for_retention(1.0); }) == ErrorKind::PercentileOutOfRange);
}

TEST_CASE("histogram bins")
{
    CHECK(histogram_bin(0.0) == 0);
    CHECK(histogram_bin(0.005) == 0);
    CHECK(histogram_bin(0.5) == 50);
    CHECK(histogram_bin(0.999) == 99);
    CHECK(histogram_bin(1.0) == 99);
}

TEST_CASE("apply_filter keeps scores strictly above tau")
{
    TempDir dir;
    const auto fx = ten_docs(dir);

    auto stats = apply_filter(fx.manifest, fx.scores, 0.9, dir / "out90");
    CHECK(stats.docs_in == 10);
    CHECK(stats.docs_out == 1);
    CHECK(stats.retention == doctest::Approx(0.1));
    const auto kept = corpus::read_shard(dir / "out90" / "s.jsonl").documents;
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].id == "d10");
    std::uint64_t hist_total = 0;
    for (auto c : stats.score_histogram)
        hist_total += c;
    CHECK(hist_total == 10);

    CHECK(apply_filter(fx.manifest, fx.scores, 0.0, dir / "out0").docs_out == 10);
    CHECK(apply_filter(fx.manifest, fx.scores, 1.0, dir / "out100").docs_out == 0);

    // ties at tau are dropped
    stats = apply_filter(fx.manifest, fx.scores, 0.5, dir / "out50");
    CHECK(stats.docs_out == 5);
    const auto mid = corpus::read_shard(dir / "out50" / "s.jsonl").documents;
    CHECK(mid.front().id == "d6");
    CHECK(mid.back().id == "d10");
}

TEST_CASE("apply_filter reports the missing document")
{
    TempDir dir;
    const auto fx = ten_docs(dir);
    auto scores = read_scores(fx.scores);
    scores.erase(scores.begin() + 3);
    write_scores(dir / "partial.jsonl", scores);
    try {
        apply_filter(fx.manifest, dir / "partial.jsonl", 0.5, dir / "out");
        FAIL("expected MissingScore");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::MissingScore);
        CHECK(std::string(e.what()).find("d4") != std::string::npos);
    }
}

TEST_CASE("score_corpus is deterministic and worker-independent")
{
    TempDir dir;
    const auto provider = xlf::testing::small_hashed_provider(64);
    const auto m = xlf::testing::write_corpus(dir / "c", "c", 3, 4, 1, [](std::size_t, std::size_t) { return 0.4; });
    const auto clf = fixed_classifier(64, 2);

    CHECK(score_corpus(m, provider, clf, dir / "a.jsonl", 1).documents == 12);
    score_corpus(m, provider, clf, dir / "b.jsonl", 3);
    score_corpus(m, provider, clf, dir / "a2.jsonl", 1);
    const auto bytes = xlf::testing::slurp(dir / "a.jsonl");
    CHECK(bytes == xlf::testing::slurp(dir / "b.jsonl"));
    CHECK(bytes == xlf::testing::slurp(dir / "a2.jsonl"));

    const auto records = read_scores(dir / "a.jsonl");
    REQUIRE(records.size() == 12);
    CHECK(records.front().shard == "shard-00000.jsonl");
    CHECK(records.back().shard == "shard-00002.jsonl");
    for (const auto& r : records)
        CHECK((r.score >= 0.0 && r.score <= 1.0));
    for (std::size_t i = 0; i < 3; ++i)
        CHECK_FALSE(std::filesystem::exists(dir.path() / ("a.jsonl.part-" + std::to_string(i))));
}

TEST_CASE("zero classifier scores everything at one half")
{
    TempDir dir;
    const auto provider = xlf::testing::small_hashed_provider(64);
    const auto m = xlf::testing::write_corpus(dir / "c", "c", 1, 10, 1, [](std::size_t, std::size_t) { return 0.4; });
    classifier::LinearClassifier zero;
    zero.w.assign(64, 0.0);
    score_corpus(m, provider, zero, dir / "s.jsonl");
    const auto records = read_scores(dir / "s.jsonl");
    CHECK(records.size() == 10);
    for (const auto& r : records)
        CHECK(r.score == 0.5);
}

TEST_CASE("score_corpus rejects a classifier of the wrong width")
{
    TempDir dir;
    const auto m = xlf::testing::write_corpus(dir / "c", "c", 1, 2, 1, [](std::size_t, std::size_t) { return 0.4; });
    CHECK(kind_of([&] {
              score_corpus(m, xlf::testing::small_hashed_provider(64), fixed_classifier(32, 1), dir / "s.jsonl");
          })
          == ErrorKind::DimensionMismatch);
}

TEST_CASE("a missing shard aborts scoring and names the shard")
{
    TempDir dir;
    auto m = xlf::testing::write_corpus(dir / "c", "c", 2, 2, 1, [](std::size_t, std::size_t) { return 0.4; });
    m.shard_paths.push_back(dir / "c" / "zz-missing.jsonl");
    try {
        score_corpus(m, xlf::testing::small_hashed_provider(64), fixed_classifier(64, 1), dir / "s.jsonl", 2);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::FileNotFound);
        CHECK(std::string(e.what()).find("zz-missing.jsonl") != std::string::npos);
    }
    CHECK_FALSE(std::filesystem::exists(dir / "s.jsonl"));
}

TEST_CASE("seed-positive texts outscore the rest after training")
{
    TempDir dir;
    const auto provider = xlf::testing::small_hashed_provider(128);
    Rng rng(77);
    std::vector<std::string> pos, neg;
    for (int i = 0; i < 100; ++i) {
        pos.push_back(xlf::testing::synthetic_text(rng, 12, 0.9));
        neg.push_back(xlf::testing::synthetic_text(rng, 12, 0.05));
    }
    std::vector<classifier::LabeledExample> seeds;
    const auto pv = embedding::embed_batch(provider, pos);
    const auto nv = embedding::embed_batch(provider, neg);
    for (std::size_t i = 0; i < pv.size(); ++i) {
        seeds.push_back({pv[i], 1, "pos"});
        seeds.push_back({nv[i], 0, "neg"});
    }
    const auto clf = classifier::train_logistic(seeds, {});

    std::vector<corpus::Document> docs;
    for (int i = 0; i < 50; ++i) {
        docs.push_back(xlf::testing::make_doc("p" + std::to_string(i), pos[i]));
        docs.push_back(xlf::testing::make_doc("o" + std::to_string(i), xlf::testing::synthetic_text(rng, 12, 0.3)));
    }
    corpus::write_shard(dir / "mixed.jsonl", docs);
    score_corpus(corpus::make_manifest("mixed", "fr", {dir / "mixed.jsonl"}), provider, clf, dir / "s.jsonl");
    double pos_mean = 0.0, other_mean = 0.0;
    for (const auto& r : read_scores(dir / "s.jsonl"))
        (r.doc_id[0] == 'p' ? pos_mean : other_mean) += r.score / 50.0;
    CHECK(pos_mean > other_mean);
}

TEST_CASE("filter output matches an independent re-scoring oracle")
{
    TempDir dir;
    const auto provider = xlf::testing::small_hashed_provider(64);
    const auto m = xlf::testing::write_corpus(dir / "c", "c", 4, 250, 9,
                                              [](std::size_t s, std::size_t i) { return 0.1 * s + 0.001 * i; });
    const auto clf = fixed_classifier(64, 4);
    score_corpus(m, provider, clf, dir / "scores.jsonl", 2);
    std::vector<double> all;
    for (const auto& r : read_scores(dir / "scores.jsonl"))
        all.push_back(r.score);
    const double tau = estimate_percentile_threshold(all, 60);
    const auto stats = apply_filter(m, dir / "scores.jsonl", tau, dir / "out", 3);

    std::size_t expected_total = 0;
    for (const auto& shard : m.shard_paths) {
        std::vector<std::string> expected;
        for (const auto& doc : corpus::read_shard(shard).documents) {
            const auto x = embedding::hashed_ngram_embed(embedding::truncate_chars(doc.text, provider.truncate_chars),
                                                         64, {1, 3}, provider.seed);
            double z = clf.b;
            for (std::size_t j = 0; j < 64; ++j)
                z += clf.w[j] * x.values[j];
            if (1.0 / (1.0 + std::exp(-z)) > tau)
                expected.push_back(doc.id);
        }
        std::vector<std::string> got;
        for (const auto& doc : corpus::read_shard(dir / "out" / shard.filename()).documents)
            got.push_back(doc.id);
        CHECK(got == expected);
        expected_total += expected.size();
    }
    CHECK(stats.docs_out == expected_total);
    CHECK(stats.docs_in == 1000);
}

TEST_CASE("percentile presets give monotone thresholds and retention")
{
    TempDir dir;
    const auto provider = xlf::testing::small_hashed_provider(64);
    const auto m = xlf::testing::write_corpus(dir / "c", "c", 2, 300, 5, [](std::size_t, std::size_t) { return 0.3; });
    score_corpus(m, provider, fixed_classifier(64, 6), dir / "scores.jsonl");
    std::vector<double> all;
    for (const auto& r : read_scores(dir / "scores.jsonl"))
        all.push_back(r.score);
    double prev_tau = -1.0, prev_ret = 2.0;
    for (double p : percentile_presets) {
        const double tau = estimate_percentile_threshold(all, p);
        const auto stats = apply_filter(m, dir / "scores.jsonl", tau, dir / ("out" + std::to_string(int(p))));
        CHECK(tau >= prev_tau);
        CHECK(stats.retention <= prev_ret);
        prev_tau = tau;
        prev_ret = stats.retention;
    }
}

TEST_CASE("sampling strategy comparison")
{
    TempDir dir;
    const auto provider = xlf::testing::small_hashed_provider(64);
    const auto clf = fixed_classifier(64, 8);

    SUBCASE("single shard: both arms identical")
    {
        const auto m = xlf::testing::write_corpus(dir / "one", "one", 1, 200, 2, [](std::size_t, std::size_t) { return 0.4; });
        const auto c = compare_sampling_strategies(m, provider, clf, 90, 1, 5);
        CHECK(c.tau_first == c.tau_random);
        CHECK(c.rel_diff == 0.0);
        CHECK_FALSE(c.flagged);
    }
    SUBCASE("random arm needs enough shards")
    {
        const auto m = xlf::testing::write_corpus(dir / "two", "two", 2, 5, 2, [](std::size_t, std::size_t) { return 0.4; });
        CHECK(kind_of([&] { compare_sampling_strategies(m, provider, clf, 90, 3, 5); }) == ErrorKind::ConfigError);
    }
    CHECK(relative_difference(0.0, 0.0) == 0.0);
    CHECK(relative_difference(0.2, 0.25) == doctest::Approx(0.2));
}

TEST_CASE("score cache is keyed by corpus, provider and classifier")
{
    TempDir dir;
    const auto provider = xlf::testing::small_hashed_provider(64);
    const auto m = xlf::testing::write_corpus(dir / "c", "c", 1, 5, 1, [](std::size_t, std::size_t) { return 0.4; });
    const auto clf = fixed_classifier(64, 1);
    const auto first = score_corpus_cached(m, provider, clf, dir / "cache");
    CHECK_FALSE(first.reused);
    const auto second = score_corpus_cached(m, provider, clf, dir / "cache");
    CHECK(second.reused);
    CHECK(second.path == first.path);
    CHECK(score_cache_path(dir / "cache", m, provider, fixed_classifier(64, 2)) != first.path);
    auto other = provider;
    other.seed = 99;
    CHECK(score_cache_path(dir / "cache", m, other, clf) != first.path);
}

TEST_CASE("score records reject out-of-range values")
{
    CHECK(kind_of([] { decode_score(R"({"doc_id":"a","score":1.5,"shard":"s"})"); }) == ErrorKind::MalformedRecord);
    CHECK(kind_of([] { decode_score(R"({"doc_id":"a"})"); }) == ErrorKind::MalformedRecord);
    const ScoreRecord r{"a", 0.1 + 0.2, "s"};
    CHECK(decode_score(encode_score(r)) == r);
}

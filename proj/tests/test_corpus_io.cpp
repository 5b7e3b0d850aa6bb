#include <doctest.h>

#include <set>

#include "support.hpp"
#include "xlf/corpus_io.hpp"
#include "xlf/error.hpp"

using namespace xlf;
using namespace xlf::corpus;
using xlf::testing::TempDir;

namespace {

std::vector<Document> random_documents(std::size_t n, std::uint64_t seed)
{
    static const std::vector<std::string> pieces{
        "plain", "quote\"inside", "back\\slash", "tab\there", "line\nbreak", "crlf\r\nend", "été", "größe",
        "中文文本", "emoji 😀", "{\"json\":1}", "  padded  ", " nbsp", "control\x01char"};
    Rng rng(seed);
    std::vector<Document> docs;
    for (std::size_t i = 0; i < n; ++i) {
        Document d;
        d.id = "doc-" + std::to_string(i) + (rng.below(4) == 0 ? "-été" : "");
        const std::size_t parts = 1 + rng.below(6);
        for (std::size_t k = 0; k < parts; ++k)
            d.text += pieces[rng.below(pieces.size())] + " ";
        d.text += "x";
        d.lang = rng.below(2) ? "fr" : "zh";
        d.source = rng.below(2) ? "rpj2" : "";
        if (rng.below(3) == 0)
            d.meta = {{"url", "https://example.org/" + std::to_string(i)}, {"note", pieces[rng.below(pieces.size())]}};
        docs.push_back(std::move(d));
    }
    return docs;
}

}  // namespace

TEST_CASE("read_shard yields valid lines in order")
{
    TempDir dir;
    const auto path = dir / "a.jsonl";
    xlf::testing::spit(path, R"({"id":"1","text":"un","lang":"fr","source":"s"}
{"id":"2","text":"deux","lang":"fr","source":"s"}
{"id":"3","text":"trois","lang":"fr","source":"s","meta":{"k":"v"}}
)");
    const auto contents = read_shard(path);
    REQUIRE(contents.documents.size() == 3);
    CHECK(contents.malformed.empty());
    CHECK(contents.documents[0].id == "1");
    CHECK(contents.documents[2].text == "trois");
    CHECK(contents.documents[2].meta.at("k") == "v");
}

TEST_CASE("invalid encoding is reported and skipped without reordering")
{
    TempDir dir;
    const auto path = dir / "a.jsonl";
    std::string bad = "{\"id\":\"x\",\"text\":\"caf\xe9\",\"lang\":\"fr\",\"source\":\"s\"}";
    xlf::testing::spit(path, "{\"id\":\"1\",\"text\":\"a\",\"lang\":\"fr\",\"source\":\"s\"}\n" + bad
                                 + "\n{\"id\":\"2\",\"text\":\"b\",\"lang\":\"fr\",\"source\":\"s\"}\n");
    const auto contents = read_shard(path);
    REQUIRE(contents.documents.size() == 2);
    CHECK(contents.documents[0].id == "1");
    CHECK(contents.documents[1].id == "2");
    REQUIRE(contents.malformed.size() == 1);
    CHECK(contents.malformed[0].line_no == 2);
}

TEST_CASE("records violating document invariants are malformed")
{
    TempDir dir;
    const auto path = dir / "a.jsonl";
    xlf::testing::spit(path, R"({"id":"","text":"a","lang":"fr","source":"s"}
{"id":"1","text":"  \t ","lang":"fr","source":"s"}
{"id":"2","text":"a","lang":"","source":"s"}
{"id":"3","text":"a","lang":"fr"}
{"id":"4","text":"a","lang":"fr","source":"s","meta":{"k":3}}
[1,2]

{"id":"ok","text":"a","lang":"fr","source":"s"}
)");
    const auto contents = read_shard(path);
    REQUIRE(contents.documents.size() == 1);
    CHECK(contents.documents[0].id == "ok");
    CHECK(contents.malformed.size() == 7);
}

TEST_CASE("empty file gives an empty stream")
{
    TempDir dir;
    xlf::testing::spit(dir / "e.jsonl", "");
    const auto contents = read_shard(dir / "e.jsonl");
    CHECK(contents.documents.empty());
    CHECK(contents.malformed.empty());
}

TEST_CASE("missing shard is FileNotFound")
{
    try {
        read_shard("/nonexistent/shard.jsonl");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::FileNotFound);
    }
}

TEST_CASE("write_shard round-trips 100 documents")
{
    TempDir dir;
    const auto docs = random_documents(100, 3);
    CHECK(write_shard(dir / "out.jsonl", docs) == 100);
    const std::string bytes = xlf::testing::slurp(dir / "out.jsonl");
    CHECK(std::count(bytes.begin(), bytes.end(), '\n') == 100);
    CHECK(read_shard(dir / "out.jsonl").documents == docs);

    // re-writing what was read reproduces the file byte for byte
    write_shard(dir / "again.jsonl", read_shard(dir / "out.jsonl").documents);
    CHECK(xlf::testing::slurp(dir / "again.jsonl") == bytes);
}

TEST_CASE("write_shard of nothing writes an empty file")
{
    TempDir dir;
    CHECK(write_shard(dir / "empty.jsonl", std::vector<Document>{}) == 0);
    CHECK(std::filesystem::file_size(dir / "empty.jsonl") == 0);
}

TEST_CASE("embedded newline is escaped on disk")
{
    TempDir dir;
    const std::vector<Document> docs{xlf::testing::make_doc("n", "first line\nsecond line")};
    write_shard(dir / "nl.jsonl", docs);
    const std::string bytes = xlf::testing::slurp(dir / "nl.jsonl");
    CHECK(std::count(bytes.begin(), bytes.end(), '\n') == 1);
    CHECK(bytes.find("first line\\nsecond line") != std::string::npos);
    CHECK(read_shard(dir / "nl.jsonl").documents == docs);
}

TEST_CASE("writer rejects invalid documents")
{
    TempDir dir;
    ShardWriter w(dir / "x.jsonl");
    CHECK_THROWS_AS(w.write(xlf::testing::make_doc("", "text")), Error);
    CHECK_THROWS_AS(w.write(xlf::testing::make_doc("a", "   ")), Error);
    CHECK_THROWS_AS(w.write(xlf::testing::make_doc("a", "bad \xff utf8")), Error);
}

TEST_CASE("property: round-trip preserves random documents")
{
    TempDir dir;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto docs = random_documents(1 + seed * 7, seed);
        write_shard(dir / "p.jsonl", docs);
        const auto back = read_shard(dir / "p.jsonl");
        CHECK(back.malformed.empty());
        CHECK(back.documents == docs);
    }
}

TEST_CASE("manifest sorts shards and resolves relative paths")
{
    TempDir dir;
    xlf::testing::spit(dir / "m.json", R"({"corpus_name":"c","lang":"de","shards":["b.jsonl","a.jsonl","c.jsonl"]})");
    const auto m = load_manifest(dir / "m.json");
    REQUIRE(m.shard_paths.size() == 3);
    CHECK(m.shard_paths[0] == dir / "a.jsonl");
    CHECK(m.shard_paths[2] == dir / "c.jsonl");
    CHECK(m.lang == "de");

    save_manifest(m, dir / "m2.json");
    CHECK(load_manifest(dir / "m2.json").shard_paths == m.shard_paths);

    CHECK_THROWS_AS(make_manifest("c", "fr", {}), Error);
    xlf::testing::spit(dir / "bad.json", R"({"corpus_name":"c","shards":[]})");
    CHECK_THROWS_AS(load_manifest(dir / "bad.json"), Error);
}

TEST_CASE("sample_documents first_file reads only shard 0")
{
    TempDir dir;
    const auto m = xlf::testing::write_corpus(dir.path(), "c", 5, 20, 1, [](std::size_t, std::size_t) { return 0.5; });
    const auto docs = sample_documents(m, FirstFile{}, 10);
    REQUIRE(docs.size() == 10);
    const auto shard0 = read_shard(m.shard_paths[0]).documents;
    for (std::size_t i = 0; i < 10; ++i)
        CHECK(docs[i] == shard0[i]);
}

TEST_CASE("sample_documents random_files is deterministic and without replacement")
{
    TempDir dir;
    const auto m = xlf::testing::write_corpus(dir.path(), "c", 5, 20, 1, [](std::size_t, std::size_t) { return 0.5; });
    const auto a = sample_documents(m, RandomFiles{2, 7}, 30);
    const auto b = sample_documents(m, RandomFiles{2, 7}, 30);
    CHECK(a == b);
    CHECK(a.size() == 30);

    const auto picked = select_shards(m, RandomFiles{2, 7});
    REQUIRE(picked.size() == 2);
    CHECK(picked[0] != picked[1]);

    // round-robin: documents alternate between the two shards
    std::set<std::string> shard_tags;
    for (std::size_t i = 0; i < 2; ++i)
        shard_tags.insert(a[i].id.substr(0, a[i].id.rfind('-')));
    CHECK(shard_tags.size() == 2);

    CHECK_THROWS_AS(sample_documents(m, RandomFiles{6, 1}, 10), Error);
    CHECK_THROWS_AS(sample_documents(m, RandomFiles{0, 1}, 10), Error);
}

TEST_CASE("random_files over every shard touches all of them")
{
    TempDir dir;
    const auto m = xlf::testing::write_corpus(dir.path(), "c", 100, 2, 5, [](std::size_t, std::size_t) { return 0.5; });
    const auto picked = select_shards(m, RandomFiles{100, 42});
    CHECK(picked.size() == 100);
    CHECK(std::set<std::size_t>(picked.begin(), picked.end()).size() == 100);
    const auto docs = sample_documents(m, RandomFiles{100, 42}, 1000);
    CHECK(docs.size() == 200);
}

TEST_CASE("sampling a corpus of empty shards is EmptyCorpus")
{
    TempDir dir;
    xlf::testing::spit(dir / "a.jsonl", "");
    const auto m = make_manifest("c", "fr", {dir / "a.jsonl"});
    try {
        sample_documents(m, FirstFile{}, 10);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::EmptyCorpus);
    }
}

TEST_CASE("strategy descriptions")
{
    CHECK(describe(FirstFile{}) == "first_file");
    CHECK(describe(RandomFiles{100, 3}) == "random_files(100,3)");
}

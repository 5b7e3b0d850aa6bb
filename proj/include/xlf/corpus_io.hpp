#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace xlf::corpus {

struct Document {
    std::string id;
    std::string text;
    std::string lang;
    std::string source;
    std::map<std::string, std::string> meta;

    bool operator==(const Document&) const = default;
};

/// Empty string when the document satisfies its invariants, otherwise the reason.
std::string validate(const Document& doc);

/// One line per record: {"id","text","lang","source"[,"meta"]}.
std::string encode_document(const Document& doc);

/// Throws Error{MalformedRecord} with the reason.
Document decode_document(std::string_view line);

struct CorpusManifest {
    std::string corpus_name;
    std::string lang;
    std::vector<std::filesystem::path> shard_paths;  // kept sorted
    std::optional<std::uint64_t> doc_count_estimate;
};

/// Sorts shard paths lexicographically and checks invariants.
CorpusManifest make_manifest(std::string corpus_name, std::string lang,
                             std::vector<std::filesystem::path> shards,
                             std::optional<std::uint64_t> doc_count_estimate = std::nullopt);

/// Relative shard paths resolve against the manifest's directory.
CorpusManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const CorpusManifest& manifest, const std::filesystem::path& path);

struct MalformedLine {
    std::size_t line_no;  // 1-based
    std::string reason;
};

/// Streams documents from one shard in file order. Malformed lines are skipped
/// and recorded; the valid documents keep their relative order.
class ShardReader {
public:
    explicit ShardReader(const std::filesystem::path& path);

    std::optional<Document> next();

    const std::vector<MalformedLine>& malformed() const noexcept { return malformed_; }
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
    std::ifstream in_;
    std::size_t line_no_ = 0;
    std::vector<MalformedLine> malformed_;
};

struct ShardContents {
    std::vector<Document> documents;
    std::vector<MalformedLine> malformed;
};

ShardContents read_shard(const std::filesystem::path& path);

class ShardWriter {
public:
    explicit ShardWriter(const std::filesystem::path& path);

    void write(const Document& doc);
    std::size_t count() const noexcept { return count_; }
    void close();

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::size_t count_ = 0;
};

std::size_t write_shard(const std::filesystem::path& path, std::span<const Document> docs);

struct FirstFile {};
struct RandomFiles {
    std::size_t n;
    std::uint64_t seed;
};
using SampleStrategy = std::variant<FirstFile, RandomFiles>;

inline constexpr std::size_t default_sample_docs = 100'000;

/// "first_file" or "random_files(n,seed)".
std::string describe(const SampleStrategy& strategy);

/// Shard indices the strategy touches, in read order.
std::vector<std::size_t> select_shards(const CorpusManifest& manifest, const SampleStrategy& strategy);

std::vector<Document> sample_documents(const CorpusManifest& manifest, const SampleStrategy& strategy,
                                       std::size_t max_docs = default_sample_docs);

}  // namespace xlf::corpus

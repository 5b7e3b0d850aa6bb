#include "xlf/corpus_io.hpp"

#include <algorithm>
#include <memory>
#include <numeric>

#include <json.hpp>

#include "xlf/error.hpp"
#include "xlf/rng.hpp"

namespace xlf::corpus {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

bool is_blank(std::string_view s)
{
    return std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    });
}

const std::string& require_string(const json& j, const char* key)
{
    auto it = j.find(key);
    if (it == j.end())
        throw Error(ErrorKind::MalformedRecord, std::string("missing field '") + key + "'");
    if (!it->is_string())
        throw Error(ErrorKind::MalformedRecord, std::string("field '") + key + "' is not a string");
    return it->get_ref<const std::string&>();
}

}  // namespace

std::string validate(const Document& doc)
{
    if (doc.id.empty())
        return "empty id";
    if (is_blank(doc.text))
        return "empty text";
    if (doc.lang.empty())
        return "empty lang";
    return {};
}

std::string encode_document(const Document& doc)
{
    json j;
    j["id"] = doc.id;
    j["text"] = doc.text;
    j["lang"] = doc.lang;
    j["source"] = doc.source;
    if (!doc.meta.empty()) {
        json meta = json::object();
        for (const auto& [k, v] : doc.meta)
            meta[k] = v;
        j["meta"] = std::move(meta);
    }
    try {
        return j.dump();
    } catch (const json::type_error& e) {
        throw Error(ErrorKind::InvalidDocument, "document '" + doc.id + "' is not valid UTF-8");
    }
}

Document decode_document(std::string_view line)
{
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::MalformedRecord, e.what());
    }
    if (!j.is_object())
        throw Error(ErrorKind::MalformedRecord, "record is not an object");

    Document doc;
    doc.id = require_string(j, "id");
    doc.text = require_string(j, "text");
    doc.lang = require_string(j, "lang");
    doc.source = require_string(j, "source");
    if (auto it = j.find("meta"); it != j.end()) {
        if (!it->is_object())
            throw Error(ErrorKind::MalformedRecord, "field 'meta' is not an object");
        for (const auto& [k, v] : it->items()) {
            if (!v.is_string())
                throw Error(ErrorKind::MalformedRecord, "meta value '" + k + "' is not a string");
            doc.meta.emplace(k, v.get<std::string>());
        }
    }
    if (auto reason = validate(doc); !reason.empty())
        throw Error(ErrorKind::MalformedRecord, reason);
    return doc;
}

CorpusManifest make_manifest(std::string corpus_name, std::string lang, std::vector<fs::path> shards,
                             std::optional<std::uint64_t> doc_count_estimate)
{
    if (shards.empty())
        throw Error(ErrorKind::ConfigError, "manifest '" + corpus_name + "' lists no shards");
    std::sort(shards.begin(), shards.end(),
              [](const fs::path& a, const fs::path& b) { return a.string() < b.string(); });
    return CorpusManifest{std::move(corpus_name), std::move(lang), std::move(shards), doc_count_estimate};
}

CorpusManifest load_manifest(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorKind::FileNotFound, path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::ConfigError, "manifest " + path.string() + ": " + e.what());
    }
    try {
        std::vector<fs::path> shards;
        const fs::path base = path.parent_path();
        for (const auto& s : j.at("shards")) {
            fs::path p = s.get<std::string>();
            shards.push_back(p.is_absolute() ? p : base / p);
        }
        std::optional<std::uint64_t> estimate;
        if (auto it = j.find("doc_count_estimate"); it != j.end() && !it->is_null())
            estimate = it->get<std::uint64_t>();
        return make_manifest(j.at("corpus_name").get<std::string>(), j.at("lang").get<std::string>(),
                             std::move(shards), estimate);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::ConfigError, "manifest " + path.string() + ": " + e.what());
    }
}

void save_manifest(const CorpusManifest& manifest, const fs::path& path)
{
    json j;
    j["corpus_name"] = manifest.corpus_name;
    j["lang"] = manifest.lang;
    json shards = json::array();
    for (const auto& p : manifest.shard_paths)
        shards.push_back(p.string());
    j["shards"] = std::move(shards);
    if (manifest.doc_count_estimate)
        j["doc_count_estimate"] = *manifest.doc_count_estimate;
    std::ofstream out(path);
    if (!out)
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

ShardReader::ShardReader(const fs::path& path) : path_(path)
{
    if (!fs::exists(path_))
        throw Error(ErrorKind::FileNotFound, path_.string());
    in_.open(path_, std::ios::binary);
    if (!in_)
        throw Error(ErrorKind::IoError, "cannot open " + path_.string());
}

std::optional<Document> ShardReader::next()
{
    std::string line;
    while (std::getline(in_, line)) {
        ++line_no_;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        try {
            return decode_document(line);
        } catch (const Error& e) {
            malformed_.push_back({line_no_, e.what()});
        }
    }
    if (in_.bad())
        throw Error(ErrorKind::IoError, "read failed on " + path_.string());
    return std::nullopt;
}

ShardContents read_shard(const fs::path& path)
{
    ShardReader reader(path);
    ShardContents contents;
    while (auto doc = reader.next())
        contents.documents.push_back(std::move(*doc));
    contents.malformed = reader.malformed();
    return contents;
}

ShardWriter::ShardWriter(const fs::path& path) : path_(path)
{
    out_.open(path_, std::ios::binary | std::ios::trunc);
    if (!out_)
        throw Error(ErrorKind::IoError, "cannot write " + path_.string());
}

void ShardWriter::write(const Document& doc)
{
    if (auto reason = validate(doc); !reason.empty())
        throw Error(ErrorKind::InvalidDocument, "document '" + doc.id + "': " + reason);
    out_ << encode_document(doc) << '\n';
    if (!out_)
        throw Error(ErrorKind::IoError, "write failed on " + path_.string());
    ++count_;
}

void ShardWriter::close()
{
    out_.close();
    if (out_.fail())
        throw Error(ErrorKind::IoError, "close failed on " + path_.string());
}

std::size_t write_shard(const fs::path& path, std::span<const Document> docs)
{
    ShardWriter writer(path);
    for (const auto& doc : docs)
        writer.write(doc);
    writer.close();
    return writer.count();
}

std::string describe(const SampleStrategy& strategy)
{
    if (std::holds_alternative<FirstFile>(strategy))
        return "first_file";
    const auto& r = std::get<RandomFiles>(strategy);
    return "random_files(" + std::to_string(r.n) + "," + std::to_string(r.seed) + ")";
}

std::vector<std::size_t> select_shards(const CorpusManifest& manifest, const SampleStrategy& strategy)
{
    const std::size_t total = manifest.shard_paths.size();
    if (total == 0)
        throw Error(ErrorKind::ConfigError, "manifest '" + manifest.corpus_name + "' lists no shards");
    if (std::holds_alternative<FirstFile>(strategy))
        return {0};

    const auto& r = std::get<RandomFiles>(strategy);
    if (r.n == 0 || r.n > total)
        throw Error(ErrorKind::ConfigError, "random_files n=" + std::to_string(r.n) + " but corpus has "
                                                + std::to_string(total) + " shards");
    // Partial Fisher-Yates: first n slots are a uniform draw without replacement.
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(r.seed);
    for (std::size_t i = 0; i < r.n; ++i)
        std::swap(idx[i], idx[i + rng.below(total - i)]);
    idx.resize(r.n);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::vector<Document> sample_documents(const CorpusManifest& manifest, const SampleStrategy& strategy,
                                       std::size_t max_docs)
{
    if (max_docs == 0)
        throw Error(ErrorKind::ConfigError, "max_docs must be positive");

    std::vector<std::unique_ptr<ShardReader>> readers;
    for (std::size_t i : select_shards(manifest, strategy))
        readers.push_back(std::make_unique<ShardReader>(manifest.shard_paths[i]));

    std::vector<Document> out;
    std::vector<bool> done(readers.size(), false);
    std::size_t live = readers.size();
    while (live > 0 && out.size() < max_docs) {
        for (std::size_t i = 0; i < readers.size() && out.size() < max_docs; ++i) {
            if (done[i])
                continue;
            if (auto doc = readers[i]->next()) {
                out.push_back(std::move(*doc));
            } else {
                done[i] = true;
                --live;
            }
        }
    }
    if (out.empty())
        throw Error(ErrorKind::EmptyCorpus, "no documents in sampled shards of '" + manifest.corpus_name + "'");
    return out;
}

}  // namespace xlf::corpus

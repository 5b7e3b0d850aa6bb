#include <cstdlib>
#include <semaphore>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "xlf/embedding.hpp"
#include "xlf/error.hpp"

namespace xlf::embedding {

namespace {

using json = nlohmann::json;

struct Endpoint {
    std::string scheme_host_port;
    std::string base_path;
};

Endpoint split_endpoint(const std::string& url)
{
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw Error(ErrorKind::ConfigError, "endpoint '" + url + "' has no scheme");
    const auto path_start = url.find('/', scheme_end + 3);
    Endpoint ep;
    ep.scheme_host_port = url.substr(0, path_start);
    if (path_start != std::string::npos)
        ep.base_path = url.substr(path_start);
    while (!ep.base_path.empty() && ep.base_path.back() == '/')
        ep.base_path.pop_back();
    return ep;
}

class RemoteProvider final : public EmbeddingProvider {
public:
    explicit RemoteProvider(EmbeddingProviderConfig config)
      : config_(std::move(config)),
        endpoint_(split_endpoint(config_.endpoint)),
        in_flight_(static_cast<std::ptrdiff_t>(std::min<std::size_t>(config_.max_in_flight, 1024)))
    {
        if (const char* key = std::getenv(endpoint_secret_env))
            api_key_ = key;
    }

    std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override
    {
        if (texts.empty())
            throw Error(ErrorKind::EmptyInput, "embed_batch called with no texts");
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (std::size_t start = 0; start < texts.size(); start += config_.batch_size) {
            const auto chunk = texts.subspan(start, std::min(config_.batch_size, texts.size() - start));
            auto vectors = post_with_retry(chunk);
            for (auto& v : vectors)
                out.push_back(std::move(v));
        }
        return out;
    }

    const EmbeddingProviderConfig& config() const noexcept override { return config_; }

private:
    std::vector<EmbeddingVector> post_with_retry(std::span<const std::string> texts)
    {
        json body;
        body["texts"] = json::array();
        for (const auto& t : texts) {
            std::string truncated = truncate_chars(t, config_.truncate_chars);
            if (truncated.empty())
                throw Error(ErrorKind::EmptyInput, "empty text in batch");
            body["texts"].push_back(std::move(truncated));
        }
        const std::string payload = body.dump(-1, ' ', false, json::error_handler_t::replace);

        auto backoff = config_.retry_backoff;
        for (int attempt = 0;; ++attempt) {
            try {
                return post_once(payload, texts.size());
            } catch (const Error& e) {
                if (!e.retryable() || attempt >= config_.max_retries)
                    throw;
            }
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
    }

    std::vector<EmbeddingVector> post_once(const std::string& payload, std::size_t expected)
    {
        in_flight_.acquire();
        struct Release {
            std::counting_semaphore<1024>& s;
            ~Release() { s.release(); }
        } release{in_flight_};

        httplib::Client client(endpoint_.scheme_host_port);
        client.set_connection_timeout(config_.timeout);
        client.set_read_timeout(config_.timeout);
        client.set_write_timeout(config_.timeout);
        httplib::Headers headers;
        if (!api_key_.empty())
            headers.emplace("Authorization", "Bearer " + api_key_);

        auto res = client.Post(endpoint_.base_path + "/embed", headers, payload, "application/json");
        if (!res)
            throw Error(ErrorKind::RemoteUnavailable, "request failed: " + httplib::to_string(res.error()));
        if (res->status != 200)
            throw Error(ErrorKind::RemoteUnavailable, "embedding service returned status " + std::to_string(res->status));

        json reply;
        try {
            reply = json::parse(res->body);
        } catch (const json::parse_error& e) {
            throw Error(ErrorKind::RemoteUnavailable, std::string("unparseable response: ") + e.what());
        }
        if (!reply.is_object() || !reply.contains("vectors") || !reply["vectors"].is_array())
            throw Error(ErrorKind::RemoteUnavailable, "response lacks a 'vectors' array");
        if (auto it = reply.find("dim"); it != reply.end()) {
            if (!it->is_number_integer() || it->get<long long>() != static_cast<long long>(config_.dim))
                throw Error(ErrorKind::DimensionMismatch,
                            "service reported dim " + it->dump() + ", expected " + std::to_string(config_.dim));
        }
        const auto& vectors = reply["vectors"];
        if (vectors.size() != expected)
            throw Error(ErrorKind::RemoteUnavailable, "partial batch: got " + std::to_string(vectors.size())
                                                          + " vectors for " + std::to_string(expected) + " texts");
        std::vector<EmbeddingVector> out;
        out.reserve(expected);
        for (const auto& row : vectors) {
            if (!row.is_array() || row.size() != config_.dim)
                throw Error(ErrorKind::DimensionMismatch, "vector of dim " + std::to_string(row.size())
                                                              + ", expected " + std::to_string(config_.dim));
            EmbeddingVector v;
            v.values.reserve(config_.dim);
            for (const auto& x : row) {
                if (!x.is_number())
                    throw Error(ErrorKind::InvalidVector, "non-numeric vector component");
                v.values.push_back(x.get<double>());
            }
            check_vector(v);
            out.push_back(std::move(v));
        }
        return out;
    }

    EmbeddingProviderConfig config_;
    Endpoint endpoint_;
    std::counting_semaphore<1024> in_flight_;
    std::string api_key_;
};

}  // namespace

std::unique_ptr<EmbeddingProvider> make_remote_provider(const EmbeddingProviderConfig& config)
{
    return std::make_unique<RemoteProvider>(config);
}

}  // namespace xlf::embedding

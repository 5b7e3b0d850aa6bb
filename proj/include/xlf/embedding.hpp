#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace xlf::embedding {

struct EmbeddingVector {
    std::vector<double> values;
    bool normalized = false;

    std::size_t dim() const noexcept { return values.size(); }
    bool operator==(const EmbeddingVector&) const = default;
};

/// Throws InvalidVector on NaN/Inf, on an empty vector, or when the
/// normalized flag disagrees with the norm by more than 1e-6.
void check_vector(const EmbeddingVector& v);

double l2_norm(std::span<const double> v) noexcept;

/// Throws ZeroVector when every component is zero.
EmbeddingVector l2_normalize(const EmbeddingVector& v);

enum class ProviderKind { remote, hashed_ngram };

struct EmbeddingProviderConfig {
    ProviderKind kind = ProviderKind::hashed_ngram;
    std::size_t dim = 384;
    std::string endpoint;  // remote only, e.g. "http://127.0.0.1:8080" or ".../v1"
    int ngram_low = 1;
    int ngram_high = 3;
    std::uint64_t seed = 0;
    std::size_t batch_size = 64;
    std::size_t truncate_chars = 2048;

    // remote client tuning
    std::size_t max_in_flight = 4;
    int max_retries = 3;
    std::chrono::milliseconds retry_backoff{100};
    std::chrono::seconds timeout{30};
};

/// Throws ConfigError when the config breaks its invariants.
void validate(const EmbeddingProviderConfig& config);

/// Canonical text form of every field that affects the produced vectors.
std::string canonical_form(const EmbeddingProviderConfig& config);

std::string to_string(ProviderKind kind);
ProviderKind parse_provider_kind(std::string_view s);

/// UTF-8 helpers: decoding replaces invalid sequences with U+FFFD.
std::u32string decode_utf8(std::string_view s);
std::string encode_utf8(std::u32string_view s);
std::string truncate_chars(std::string_view text, std::size_t max_chars);

/// Simple case folding for Latin, Greek and Cyrillic ranges; other scripts are
/// caseless or left unchanged.
char32_t fold_case(char32_t c) noexcept;

/// Signed feature hashing of character n-grams (code points of the
/// case-folded text), L2-normalized. A text whose signed counts cancel to the
/// zero vector is returned as zeros with normalized=false.
EmbeddingVector hashed_ngram_embed(std::string_view text, std::size_t dim, std::pair<int, int> ngram_range,
                                   std::uint64_t seed);

/// Bucket and sign an n-gram hashes to; exposed for hand-traced tests.
struct HashedSlot {
    std::size_t bucket;
    int sign;
};
HashedSlot hash_ngram(std::string_view gram_utf8, std::size_t dim, std::uint64_t seed) noexcept;

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    /// Order-aligned; one vector of dimension config().dim per text.
    virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) = 0;

    virtual const EmbeddingProviderConfig& config() const noexcept = 0;
};

std::unique_ptr<EmbeddingProvider> make_provider(const EmbeddingProviderConfig& config);

std::vector<EmbeddingVector> embed_batch(const EmbeddingProviderConfig& config,
                                         std::span<const std::string> texts);

/// Name of the environment variable holding the remote service API key.
inline constexpr const char* endpoint_secret_env = "XLF_EMBED_API_KEY";

}  // namespace xlf::embedding

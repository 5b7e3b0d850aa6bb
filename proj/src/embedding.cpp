#include "xlf/embedding.hpp"

#include <cmath>
#include <sstream>

#include "xlf/error.hpp"
#include "xlf/hashing.hpp"

namespace xlf::embedding {

double l2_norm(std::span<const double> v) noexcept
{
    double sum = 0.0;
    for (double x : v)
        sum += x * x;
    return std::sqrt(sum);
}

void check_vector(const EmbeddingVector& v)
{
    if (v.values.empty())
        throw Error(ErrorKind::InvalidVector, "vector has dimension 0");
    for (std::size_t i = 0; i < v.values.size(); ++i)
        if (!std::isfinite(v.values[i]))
            throw Error(ErrorKind::InvalidVector, "non-finite component at index " + std::to_string(i));
    if (v.normalized && std::abs(l2_norm(v.values) - 1.0) > 1e-6)
        throw Error(ErrorKind::InvalidVector, "vector flagged normalized but norm is not 1");
}

EmbeddingVector l2_normalize(const EmbeddingVector& v)
{
    const double norm = l2_norm(v.values);
    if (norm == 0.0)
        throw Error(ErrorKind::ZeroVector, "cannot normalize the zero vector");
    EmbeddingVector out{v.values, true};
    for (double& x : out.values)
        x /= norm;
    return out;
}

std::string to_string(ProviderKind kind)
{
    return kind == ProviderKind::remote ? "remote" : "hashed_ngram";
}

ProviderKind parse_provider_kind(std::string_view s)
{
    if (s == "remote")
        return ProviderKind::remote;
    if (s == "hashed_ngram")
        return ProviderKind::hashed_ngram;
    throw Error(ErrorKind::ConfigError, "unknown embedding provider kind '" + std::string(s) + "'");
}

void validate(const EmbeddingProviderConfig& config)
{
    if (config.dim == 0)
        throw Error(ErrorKind::ConfigError, "embedding dim must be positive");
    if (config.batch_size == 0)
        throw Error(ErrorKind::ConfigError, "embedding batch_size must be positive");
    if (config.truncate_chars == 0)
        throw Error(ErrorKind::ConfigError, "embedding truncate_chars must be positive");
    if (config.kind == ProviderKind::remote) {
        if (config.endpoint.empty())
            throw Error(ErrorKind::ConfigError, "remote embedding provider requires an endpoint");
        if (config.max_in_flight == 0)
            throw Error(ErrorKind::ConfigError, "max_in_flight must be positive");
    } else {
        if (config.dim < 8)
            throw Error(ErrorKind::ConfigError, "hashed_ngram requires dim >= 8");
        if (config.ngram_low < 1 || config.ngram_low > config.ngram_high)
            throw Error(ErrorKind::ConfigError, "ngram_range must satisfy 1 <= low <= high");
    }
}

std::string canonical_form(const EmbeddingProviderConfig& config)
{
    std::ostringstream os;
    os << "kind=" << to_string(config.kind) << ";dim=" << config.dim
       << ";truncate_chars=" << config.truncate_chars;
    if (config.kind == ProviderKind::remote)
        os << ";endpoint=" << config.endpoint;
    else
        os << ";ngram=" << config.ngram_low << "-" << config.ngram_high << ";seed=" << config.seed;
    return os.str();
}

std::u32string decode_utf8(std::string_view s)
{
    constexpr char32_t replacement = 0xFFFD;
    std::u32string out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        if (c < 0x80) {
            out.push_back(c);
            ++i;
            continue;
        }
        int extra;
        char32_t cp;
        char32_t min;
        if ((c & 0xE0) == 0xC0) {
            extra = 1, cp = c & 0x1F, min = 0x80;
        } else if ((c & 0xF0) == 0xE0) {
            extra = 2, cp = c & 0x0F, min = 0x800;
        } else if ((c & 0xF8) == 0xF0) {
            extra = 3, cp = c & 0x07, min = 0x10000;
        } else {
            out.push_back(replacement);
            ++i;
            continue;
        }
        if (i + extra >= s.size()) {
            out.push_back(replacement);
            ++i;
            continue;
        }
        bool ok = true;
        for (int k = 1; k <= extra; ++k) {
            const auto cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xC0) != 0x80) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (cc & 0x3F);
        }
        if (!ok || cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
            out.push_back(replacement);
            ++i;
            continue;
        }
        out.push_back(cp);
        i += extra + 1;
    }
    return out;
}

std::string encode_utf8(std::u32string_view s)
{
    std::string out;
    out.reserve(s.size());
    for (char32_t cp : s) {
        if (cp < 0x80) {
            out.push_back(static_cast<char>(cp));
        } else if (cp < 0x800) {
            out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else if (cp < 0x10000) {
            out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else {
            out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        }
    }
    return out;
}

std::string truncate_chars(std::string_view text, std::size_t max_chars)
{
    std::size_t chars = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        // count lead bytes only
        if ((static_cast<unsigned char>(text[i]) & 0xC0) != 0x80) {
            if (chars == max_chars)
                return std::string(text.substr(0, i));
            ++chars;
        }
    }
    return std::string(text);
}

char32_t fold_case(char32_t c) noexcept
{
    if (c >= U'A' && c <= U'Z')
        return c + 32;
    if (c < 0xC0)
        return c;
    if (c <= 0xDE)
        return c == 0xD7 ? c : c + 32;
    if (c >= 0x100 && c <= 0x17F) {
        if (c == 0x178)
            return 0xFF;
        const bool odd_pairs = (c >= 0x139 && c <= 0x148) || (c >= 0x179 && c <= 0x17E);
        const bool even_pairs = (c <= 0x12F) || (c >= 0x132 && c <= 0x137) || (c >= 0x14A && c <= 0x177);
        if (odd_pairs && (c & 1))
            return c + 1;
        if (even_pairs && !(c & 1))
            return c + 1;
        return c;
    }
    if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2)
        return c + 32;
    if (c >= 0x410 && c <= 0x42F)
        return c + 32;
    if (c >= 0x400 && c <= 0x40F)
        return c + 80;
    return c;
}

HashedSlot hash_ngram(std::string_view gram_utf8, std::size_t dim, std::uint64_t seed) noexcept
{
    const std::uint64_t h = stable_hash(gram_utf8, seed);
    return {static_cast<std::size_t>(h % dim), (h >> 63) ? -1 : 1};
}

EmbeddingVector hashed_ngram_embed(std::string_view text, std::size_t dim, std::pair<int, int> ngram_range,
                                   std::uint64_t seed)
{
    if (text.empty())
        throw Error(ErrorKind::EmptyText, "cannot embed empty text");
    if (dim < 8)
        throw Error(ErrorKind::ConfigError, "hashed_ngram requires dim >= 8");
    const auto [low, high] = ngram_range;
    if (low < 1 || low > high)
        throw Error(ErrorKind::ConfigError, "ngram_range must satisfy 1 <= low <= high");

    std::u32string folded = decode_utf8(text);
    for (char32_t& c : folded)
        c = fold_case(c);

    EmbeddingVector v{std::vector<double>(dim, 0.0), false};
    const std::u32string_view view(folded);
    for (int n = low; n <= high; ++n) {
        const auto len = static_cast<std::size_t>(n);
        for (std::size_t i = 0; i + len <= view.size(); ++i) {
            const HashedSlot slot = hash_ngram(encode_utf8(view.substr(i, len)), dim, seed);
            v.values[slot.bucket] += slot.sign;
        }
    }
    if (l2_norm(v.values) == 0.0)
        return v;
    return l2_normalize(v);
}

namespace {

class HashedNgramProvider final : public EmbeddingProvider {
public:
    explicit HashedNgramProvider(EmbeddingProviderConfig config) : config_(std::move(config)) {}

    std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override
    {
        if (texts.empty())
            throw Error(ErrorKind::EmptyInput, "embed_batch called with no texts");
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (const auto& text : texts) {
            const std::string truncated = truncate_chars(text, config_.truncate_chars);
            if (truncated.empty())
                throw Error(ErrorKind::EmptyInput, "empty text in batch");
            out.push_back(hashed_ngram_embed(truncated, config_.dim, {config_.ngram_low, config_.ngram_high},
                                             config_.seed));
        }
        return out;
    }

    const EmbeddingProviderConfig& config() const noexcept override { return config_; }

private:
    EmbeddingProviderConfig config_;
};

}  // namespace

std::unique_ptr<EmbeddingProvider> make_remote_provider(const EmbeddingProviderConfig& config);

std::unique_ptr<EmbeddingProvider> make_provider(const EmbeddingProviderConfig& config)
{
    validate(config);
    if (config.kind == ProviderKind::remote)
        return make_remote_provider(config);
    return std::make_unique<HashedNgramProvider>(config);
}

std::vector<EmbeddingVector> embed_batch(const EmbeddingProviderConfig& config, std::span<const std::string> texts)
{
    return make_provider(config)->embed_batch(texts);
}

}  // namespace xlf::embedding

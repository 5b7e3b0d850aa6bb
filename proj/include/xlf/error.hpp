#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xlf {

enum class ErrorKind {
    FileNotFound,
    IoError,
    MalformedRecord,
    InvalidDocument,
    EmptyCorpus,
    ConfigError,
    EmptyInput,
    EmptyText,
    ZeroVector,
    InvalidVector,
    DimensionMismatch,
    RemoteUnavailable,
    EmptyData,
    SingleClassData,
    ScoreOutOfRange,
    EmptyScores,
    PercentileOutOfRange,
    MissingScore,
    TooFewPoints,
    LengthMismatch,
    EmptyHistogram,
    EmptyDataset,
    MissingLanguageBudget,
    ZeroAvailability,
    Overflow,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the toolkit carries a kind so callers (and the CLI
/// exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind)
    {}

    ErrorKind kind() const noexcept { return kind_; }

    bool retryable() const noexcept { return kind_ == ErrorKind::RemoteUnavailable; }

private:
    ErrorKind kind_;
};

}  // namespace xlf

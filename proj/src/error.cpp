#include "xlf/error.hpp"

namespace xlf {

std::string_view to_string(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::FileNotFound: return "FileNotFound";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::MalformedRecord: return "MalformedRecord";
    case ErrorKind::InvalidDocument: return "InvalidDocument";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::EmptyText: return "EmptyText";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::InvalidVector: return "InvalidVector";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::RemoteUnavailable: return "RemoteUnavailable";
    case ErrorKind::EmptyData: return "EmptyData";
    case ErrorKind::SingleClassData: return "SingleClassData";
    case ErrorKind::ScoreOutOfRange: return "ScoreOutOfRange";
    case ErrorKind::EmptyScores: return "EmptyScores";
    case ErrorKind::PercentileOutOfRange: return "PercentileOutOfRange";
    case ErrorKind::MissingScore: return "MissingScore";
    case ErrorKind::TooFewPoints: return "TooFewPoints";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::EmptyHistogram: return "EmptyHistogram";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::MissingLanguageBudget: return "MissingLanguageBudget";
    case ErrorKind::ZeroAvailability: return "ZeroAvailability";
    case ErrorKind::Overflow: return "Overflow";
    }
    return "Unknown";
}

}  // namespace xlf

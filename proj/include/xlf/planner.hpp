#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace xlf::planner {

inline constexpr double chinchilla_tokens_per_param = 20.0;
inline constexpr double repetition_warn_epochs = 10.0;
inline constexpr double repetition_advisory_epochs = 4.0;

enum class ParamsBasis { non_embedding, total };

std::string to_string(ParamsBasis basis);
ParamsBasis parse_params_basis(std::string_view s);

struct ModelPreset {
    const char* name;
    double params;  // non-embedding
};

inline constexpr ModelPreset model_presets[] = {
    {"350M", 350e6},
    {"1.3B", 1.3e9},
    {"2.7B", 2.7e9},
};

/// Throws ConfigError for an unknown preset name.
double preset_params(std::string_view name);

struct LanguageWeight {
    std::string lang;
    double weight = 0.0;
};

struct TrainingPlan {
    std::uint64_t steps = 0;
    std::uint64_t batch_size = 0;
    std::uint64_t context_len = 0;
    std::vector<LanguageWeight> languages;
    double model_params = 0.0;
    ParamsBasis params_basis = ParamsBasis::non_embedding;
};

void validate(const TrainingPlan& plan);

struct BudgetEntry {
    std::string dataset;
    std::string lang;
    double available_tokens = 0.0;  // billions
};

struct DatasetBudget {
    std::string dataset;
    std::string lang;
    double available_tokens = 0.0;  // billions
    double required_tokens = 0.0;   // billions
    double epochs = 0.0;
    bool warn = false;      // epochs > repetition_warn_epochs
    bool advisory = false;  // epochs > repetition_advisory_epochs
};

/// Exact product; throws Overflow when it does not fit in 64 bits.
std::uint64_t tokens_for_steps(std::uint64_t steps, std::uint64_t batch_size, std::uint64_t context_len);

double chinchilla_multiple(double tokens, double model_params);

/// Each plan language needs tokens_for_steps * weight tokens, split across its
/// datasets in proportion to availability. Budget rows for languages outside
/// the plan are reported with zero requirement.
std::vector<DatasetBudget> plan_mix(const TrainingPlan& plan, std::span<const BudgetEntry> budgets);

nlohmann::ordered_json to_json(const DatasetBudget& row);
nlohmann::ordered_json to_json(const TrainingPlan& plan);

/// Pipe table in the layout of a per-dataset token table.
std::string format_table(std::span<const DatasetBudget> rows);

}  // namespace xlf::planner

#include "xlf/planner.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "xlf/error.hpp"

namespace xlf::planner {

std::string to_string(ParamsBasis basis)
{
    return basis == ParamsBasis::total ? "total" : "non_embedding";
}

ParamsBasis parse_params_basis(std::string_view s)
{
    if (s == "non_embedding")
        return ParamsBasis::non_embedding;
    if (s == "total")
        return ParamsBasis::total;
    throw Error(ErrorKind::ConfigError, "unknown params_basis '" + std::string(s) + "'");
}

double preset_params(std::string_view name)
{
    for (const auto& p : model_presets)
        if (name == p.name)
            return p.params;
    throw Error(ErrorKind::ConfigError, "unknown model preset '" + std::string(name) + "'");
}

void validate(const TrainingPlan& plan)
{
    if (plan.steps == 0 || plan.batch_size == 0 || plan.context_len == 0)
        throw Error(ErrorKind::ConfigError, "steps, batch_size and context_len must be positive");
    if (!(plan.model_params > 0.0))
        throw Error(ErrorKind::ConfigError, "model_params must be positive");
    if (plan.languages.empty())
        throw Error(ErrorKind::ConfigError, "plan has no languages");
    double sum = 0.0;
    for (const auto& l : plan.languages) {
        if (!(l.weight > 0.0))
            throw Error(ErrorKind::ConfigError, "language '" + l.lang + "' has non-positive weight");
        sum += l.weight;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw Error(ErrorKind::ConfigError, "language weights sum to " + std::to_string(sum) + ", not 1");
}

std::uint64_t tokens_for_steps(std::uint64_t steps, std::uint64_t batch_size, std::uint64_t context_len)
{
    if (steps == 0 || batch_size == 0 || context_len == 0)
        throw Error(ErrorKind::ConfigError, "steps, batch_size and context_len must be positive");
    const unsigned __int128 product = static_cast<unsigned __int128>(steps) * batch_size * context_len;
    if (product > std::numeric_limits<std::uint64_t>::max())
        throw Error(ErrorKind::Overflow, "token count exceeds 64 bits");
    return static_cast<std::uint64_t>(product);
}

double chinchilla_multiple(double tokens, double model_params)
{
    if (!(tokens > 0.0) || !(model_params > 0.0))
        throw Error(ErrorKind::ConfigError, "tokens and model_params must be positive");
    return tokens / (chinchilla_tokens_per_param * model_params);
}

std::vector<DatasetBudget> plan_mix(const TrainingPlan& plan, std::span<const BudgetEntry> budgets)
{
    validate(plan);
    const double total_b = static_cast<double>(tokens_for_steps(plan.steps, plan.batch_size, plan.context_len)) / 1e9;

    std::map<std::string, double> weight;
    for (const auto& l : plan.languages)
        weight[l.lang] += l.weight;

    std::map<std::string, double> available_by_lang;
    for (const auto& b : budgets) {
        if (!(b.available_tokens >= 0.0) || !std::isfinite(b.available_tokens))
            throw Error(ErrorKind::ConfigError, "dataset '" + b.dataset + "' has invalid available_tokens");
        available_by_lang[b.lang] += b.available_tokens;
    }
    for (const auto& [lang, w] : weight) {
        auto it = available_by_lang.find(lang);
        if (it == available_by_lang.end())
            throw Error(ErrorKind::MissingLanguageBudget, "no budget entry for language '" + lang + "'");
        if (it->second <= 0.0)
            throw Error(ErrorKind::ZeroAvailability, "language '" + lang + "' has zero available tokens");
    }

    std::vector<DatasetBudget> rows;
    rows.reserve(budgets.size());
    for (const auto& b : budgets) {
        DatasetBudget row{b.dataset, b.lang, b.available_tokens, 0.0, 0.0, false, false};
        if (auto it = weight.find(b.lang); it != weight.end()) {
            const double lang_required = total_b * it->second;
            row.required_tokens = lang_required * (b.available_tokens / available_by_lang[b.lang]);
            if (b.available_tokens > 0.0)
                row.epochs = row.required_tokens / b.available_tokens;
        }
        row.warn = row.epochs > repetition_warn_epochs;
        row.advisory = row.epochs > repetition_advisory_epochs;
        rows.push_back(std::move(row));
    }
    return rows;
}

nlohmann::ordered_json to_json(const DatasetBudget& row)
{
    nlohmann::ordered_json j;
    j["dataset"] = row.dataset;
    j["lang"] = row.lang;
    j["available_tokens_b"] = row.available_tokens;
    j["required_tokens_b"] = row.required_tokens;
    j["epochs"] = row.epochs;
    j["warn"] = row.warn;
    j["advisory"] = row.advisory;
    return j;
}

nlohmann::ordered_json to_json(const TrainingPlan& plan)
{
    nlohmann::ordered_json j;
    j["steps"] = plan.steps;
    j["batch_size"] = plan.batch_size;
    j["context_len"] = plan.context_len;
    nlohmann::ordered_json langs = nlohmann::ordered_json::array();
    for (const auto& l : plan.languages)
        langs.push_back({{"lang", l.lang}, {"weight", l.weight}});
    j["languages"] = std::move(langs);
    j["model_params"] = plan.model_params;
    j["params_basis"] = to_string(plan.params_basis);
    const auto tokens = tokens_for_steps(plan.steps, plan.batch_size, plan.context_len);
    j["tokens"] = tokens;
    j["chinchilla_multiple"] = chinchilla_multiple(static_cast<double>(tokens), plan.model_params);
    return j;
}

std::string format_table(std::span<const DatasetBudget> rows)
{
    std::ostringstream os;
    os << "| Dataset | Lang | Available (B) | Required (B) | Epochs | Note |\n";
    os << "|---|---|---|---|---|---|\n";
    char buf[256];
    for (const auto& r : rows) {
        const char* note = r.warn ? "exceeds 10 epochs" : (r.advisory ? "over 4 epochs" : "");
        std::snprintf(buf, sizeof buf, "| %s | %s | %.3f | %.4f | %.3f | %s |\n", r.dataset.c_str(), r.lang.c_str(),
                      r.available_tokens, r.required_tokens, r.epochs, note);
        os << buf;
    }
    return os.str();
}

}  // namespace xlf::planner

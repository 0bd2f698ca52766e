#pragma once

#include "emorf2/bench.hpp"
#include "emorf2/errors.hpp"
#include "emorf2/filter.hpp"
#include "emorf2/simulator.hpp"

#include <json.hpp>

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace emorf2 {

/// Thrown for malformed configuration: unknown keys, wrong types, bad
/// filter names.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Everything the command line tool can be configured with. All fields
/// have defaults matching the TDOA tracking benchmark.
struct CliConfig {
    ScenarioConfig scenario;
    FilterConfig filter;
    /// Filter used by single runs.
    std::string filter_name = "emorf2";

    SweepVariable sweep_variable = SweepVariable::lambda;
    std::vector<double> sweep_values{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    int mc_runs = 100;
    std::vector<std::string> sweep_filters{"emorf2", "frozen_b", "plain_ukf", "ideal_ukf"};
};

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& allowed, const std::string& where)
{
    if (!obj.is_object())
    {
        throw ConfigError("config: '" + where + "' must be an object");
    }
    for (const auto& item : obj.items())
    {
        if (allowed.count(item.key()) == 0)
        {
            throw ConfigError("config: unknown key '" + where + "." + item.key() + "'");
        }
    }
}

template <typename T>
void read_field(const nlohmann::json& obj, const char* key, T& out, const std::string& where)
{
    if (!obj.contains(key))
    {
        return;
    }
    try
    {
        out = obj.at(key).get<T>();
    }
    catch (const nlohmann::json::exception&)
    {
        throw ConfigError("config: wrong type for '" + where + "." + key + "'");
    }
}

inline FilterKind require_filter(const std::string& name)
{
    const auto kind = parse_filter_name(name);
    if (!kind)
    {
        throw ConfigError("config: unregistered filter '" + name + "'");
    }
    return *kind;
}

} // namespace detail

inline CliConfig parse_config(const nlohmann::json& root)
{
    CliConfig cfg;
    detail::reject_unknown(root, {"scenario", "filter", "sweep"}, "root");

    if (root.contains("scenario"))
    {
        const auto& s = root.at("scenario");
        detail::reject_unknown(s,
                               {"num_sensors", "lambda", "gamma", "horizon", "sigma_sq", "sampling_period", "eta1",
                                "eta2", "x0", "seed"},
                               "scenario");
        auto& sc = cfg.scenario;
        detail::read_field(s, "num_sensors", sc.num_sensors, "scenario");
        detail::read_field(s, "lambda", sc.lambda, "scenario");
        detail::read_field(s, "gamma", sc.gamma, "scenario");
        detail::read_field(s, "horizon", sc.horizon, "scenario");
        detail::read_field(s, "sigma_sq", sc.sigma_sq, "scenario");
        detail::read_field(s, "sampling_period", sc.ct_params.sampling_period, "scenario");
        detail::read_field(s, "eta1", sc.ct_params.eta1, "scenario");
        detail::read_field(s, "eta2", sc.ct_params.eta2, "scenario");
        detail::read_field(s, "seed", sc.rng_seed, "scenario");
        if (s.contains("x0"))
        {
            std::vector<double> x0;
            detail::read_field(s, "x0", x0, "scenario");
            if (x0.size() != 5)
            {
                throw ConfigError("config: 'scenario.x0' must have 5 entries");
            }
            sc.x0 = Eigen::Map<const Vector>(x0.data(), 5);
        }
    }

    if (root.contains("filter"))
    {
        const auto& f = root.at("filter");
        detail::reject_unknown(f,
                               {"name", "theta", "A", "B", "a", "b_hat0", "threshold", "max_em_iterations",
                                "ukf_alpha", "ukf_beta", "ukf_kappa"},
                               "filter");
        auto& fc = cfg.filter;
        detail::read_field(f, "name", cfg.filter_name, "filter");
        if (f.contains("theta"))
        {
            double theta = 0.5;
            detail::read_field(f, "theta", theta, "filter");
            fc.outlier.theta = Vector::Constant(1, theta);
        }
        detail::read_field(f, "A", fc.outlier.A, "filter");
        detail::read_field(f, "B", fc.outlier.B, "filter");
        detail::read_field(f, "a", fc.outlier.a, "filter");
        detail::read_field(f, "b_hat0", fc.outlier.b_hat, "filter");
        detail::read_field(f, "threshold", fc.convergence_threshold, "filter");
        detail::read_field(f, "max_em_iterations", fc.max_em_iterations, "filter");
        detail::read_field(f, "ukf_alpha", fc.ukf.alpha, "filter");
        detail::read_field(f, "ukf_beta", fc.ukf.beta, "filter");
        detail::read_field(f, "ukf_kappa", fc.ukf.kappa, "filter");
    }

    if (root.contains("sweep"))
    {
        const auto& w = root.at("sweep");
        detail::reject_unknown(w, {"variable", "values", "mc_runs", "filters"}, "sweep");
        if (w.contains("variable"))
        {
            std::string var;
            detail::read_field(w, "variable", var, "sweep");
            if (var == "lambda")
            {
                cfg.sweep_variable = SweepVariable::lambda;
            }
            else if (var == "m")
            {
                cfg.sweep_variable = SweepVariable::m;
            }
            else
            {
                throw ConfigError("config: 'sweep.variable' must be 'lambda' or 'm'");
            }
        }
        detail::read_field(w, "values", cfg.sweep_values, "sweep");
        detail::read_field(w, "mc_runs", cfg.mc_runs, "sweep");
        detail::read_field(w, "filters", cfg.sweep_filters, "sweep");
    }

    detail::require_filter(cfg.filter_name);
    for (const auto& name : cfg.sweep_filters)
    {
        detail::require_filter(name);
    }
    try
    {
        cfg.scenario.validate();
        cfg.filter.validate();
    }
    catch (const DomainError& e)
    {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (cfg.mc_runs < 1 || cfg.sweep_values.empty())
    {
        throw ConfigError("config: sweep needs mc_runs >= 1 and at least one value");
    }
    return cfg;
}

inline CliConfig parse_config_text(const std::string& text)
{
    nlohmann::json root;
    try
    {
        root = nlohmann::json::parse(text);
    }
    catch (const nlohmann::json::parse_error& e)
    {
        throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    return parse_config(root);
}

inline nlohmann::json config_to_json(const CliConfig& cfg)
{
    const auto& sc = cfg.scenario;
    const auto& fc = cfg.filter;
    return nlohmann::json{
        {"scenario",
         {{"num_sensors", sc.num_sensors},
          {"lambda", sc.lambda},
          {"gamma", sc.gamma},
          {"horizon", sc.horizon},
          {"sigma_sq", sc.sigma_sq},
          {"sampling_period", sc.ct_params.sampling_period},
          {"eta1", sc.ct_params.eta1},
          {"eta2", sc.ct_params.eta2},
          {"x0", std::vector<double>(sc.x0.data(), sc.x0.data() + sc.x0.size())},
          {"seed", sc.rng_seed}}},
        {"filter",
         {{"name", cfg.filter_name},
          {"theta", fc.outlier.theta[0]},
          {"A", fc.outlier.A},
          {"B", fc.outlier.B},
          {"a", fc.outlier.a},
          {"b_hat0", fc.outlier.b_hat},
          {"threshold", fc.convergence_threshold},
          {"max_em_iterations", fc.max_em_iterations},
          {"ukf_alpha", fc.ukf.alpha},
          {"ukf_beta", fc.ukf.beta},
          {"ukf_kappa", fc.ukf.kappa}}},
        {"sweep",
         {{"variable", sweep_variable_name(cfg.sweep_variable)},
          {"values", cfg.sweep_values},
          {"mc_runs", cfg.mc_runs},
          {"filters", cfg.sweep_filters}}}};
}

/// Preset sweeps reproducing the three benchmark figures.
enum class FigurePreset { fig1, fig2, fig3, custom };

inline SweepSpec make_sweep(const CliConfig& cfg, FigurePreset preset)
{
    SweepSpec spec;
    spec.scenario = cfg.scenario;
    spec.filter = cfg.filter;
    spec.mc_runs = cfg.mc_runs;
    spec.master_seed = cfg.scenario.rng_seed;
    spec.filters.clear();
    for (const auto& name : cfg.sweep_filters)
    {
        spec.filters.push_back(detail::require_filter(name));
    }

    switch (preset)
    {
    case FigurePreset::fig1:
        spec.variable = SweepVariable::lambda;
        spec.values = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
        spec.scenario.num_sensors = 5;
        spec.scenario.gamma = 1000.0;
        break;
    case FigurePreset::fig2:
    case FigurePreset::fig3:
        spec.variable = SweepVariable::m;
        spec.values = {5.0, 10.0, 15.0, 20.0};
        spec.scenario.lambda = 0.4;
        spec.scenario.gamma = 1000.0;
        break;
    case FigurePreset::custom:
        spec.variable = cfg.sweep_variable;
        spec.values = cfg.sweep_values;
        break;
    }
    return spec;
}

} // namespace emorf2

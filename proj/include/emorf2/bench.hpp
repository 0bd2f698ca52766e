#pragma once

#include "emorf2/errors.hpp"
#include "emorf2/filter.hpp"
#include "emorf2/simulator.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <iomanip>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace emorf2 {

enum class SweepVariable { lambda, m };

inline std::string_view sweep_variable_name(SweepVariable v)
{
    return v == SweepVariable::lambda ? "lambda" : "m";
}

struct RunResult {
    std::string filter_name;
    double value = 0.0;
    int run_index = 0;
    std::uint64_t seed = 0;
    std::uint64_t data_hash = 0;
    bool ok = true;
    std::string error;
    double rmse = 0.0;
    double wall_time = 0.0;
    long em_iterations_total = 0;
    int nonconverged_steps = 0;
    int steps = 0;

    [[nodiscard]] double step_time() const { return steps > 0 ? wall_time / steps : 0.0; }
};

struct SweepSpec {
    SweepVariable variable = SweepVariable::lambda;
    std::vector<double> values;
    ScenarioConfig scenario;
    FilterConfig filter;
    int mc_runs = 100;
    std::vector<FilterKind> filters{kAllFilters.begin(), kAllFilters.end()};
    std::uint64_t master_seed = 1;
    /// Worker threads; 0 picks the hardware concurrency. Use 1 for timing.
    unsigned jobs = 0;

    void validate() const
    {
        if (values.empty() || mc_runs < 1 || filters.empty())
        {
            throw DomainError("sweep: need at least one value, one run and one filter");
        }
        filter.validate();
    }

    [[nodiscard]] ScenarioConfig scenario_for(double value) const
    {
        ScenarioConfig cfg = scenario;
        if (variable == SweepVariable::lambda)
        {
            cfg.lambda = value;
        }
        else
        {
            cfg.num_sensors = static_cast<int>(std::lround(value));
        }
        cfg.validate();
        return cfg;
    }
};

/// Root mean squared position error over the trajectory.
inline double compute_rmse(const std::vector<Vector>& truth, const std::vector<Vector>& estimates)
{
    if (truth.size() != estimates.size())
    {
        throw DomainError("compute_rmse: trajectory lengths differ");
    }
    if (truth.empty())
    {
        return 0.0;
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < truth.size(); ++k)
    {
        const double dx = estimates[k][0] - truth[k][0];
        const double dy = estimates[k][2] - truth[k][2];
        sum += dx * dx + dy * dy;
    }
    return std::sqrt(sum / static_cast<double>(truth.size()));
}

struct TrajectoryResult {
    std::vector<Vector> estimates;
    long em_iterations_total = 0;
    int nonconverged_steps = 0;
};

/// Runs one filter over a simulated record starting from N(initial_mean, Q).
inline TrajectoryResult run_trajectory(const GroundTruthRecord& rec, const ScenarioConfig& scenario, FilterKind kind,
                                       const FilterConfig& cfg)
{
    const ProcessModel process = coordinated_turn_model(scenario.ct_params);
    const MeasurementModel meas = tdoa_model(rec.num_sensors, scenario.sigma_sq);

    TrajectoryResult out;
    out.estimates.reserve(rec.steps());
    GaussianBelief belief{rec.initial_mean, process.process_noise_cov};
    for (std::size_t k = 0; k < rec.steps(); ++k)
    {
        try
        {
            const Vector& y = rec.measurements[k];
            switch (kind)
            {
            case FilterKind::emorf2:
            case FilterKind::frozen_b: {
                auto step = kind == FilterKind::emorf2 ? emorf2_step(belief, y, process, meas, cfg)
                                                       : frozen_b_step(belief, y, process, meas, cfg);
                belief = std::move(step.belief);
                out.em_iterations_total += step.diagnostics.em_iterations;
                out.nonconverged_steps += step.diagnostics.converged ? 0 : 1;
                break;
            }
            case FilterKind::plain_ukf: belief = plain_ukf_step(belief, y, process, meas, cfg); break;
            case FilterKind::ideal_ukf:
                belief = ideal_ukf_step(belief, y, process, meas, rec.outlier_flags[k], cfg);
                break;
            }
        }
        catch (const NumericalError& e)
        {
            throw NumericalError("step " + std::to_string(k + 1) + ": " + e.what());
        }
        out.estimates.push_back(belief.mean);
    }
    return out;
}

/// Filters a record and scores it. Only the filtering is timed. Numerical
/// failures are captured in the result rather than thrown.
inline RunResult run_on_record(const GroundTruthRecord& rec, const ScenarioConfig& scenario, FilterKind kind,
                               const FilterConfig& cfg)
{
    RunResult r;
    r.filter_name = std::string(filter_name(kind));
    r.seed = scenario.rng_seed;
    r.data_hash = record_hash(rec);
    r.steps = static_cast<int>(rec.steps());

    const auto start = std::chrono::steady_clock::now();
    try
    {
        const auto traj = run_trajectory(rec, scenario, kind, cfg);
        r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        r.rmse = compute_rmse(rec.states, traj.estimates);
        r.em_iterations_total = traj.em_iterations_total;
        r.nonconverged_steps = traj.nonconverged_steps;
        if (!std::isfinite(r.rmse))
        {
            r.ok = false;
            r.error = "non-finite rmse";
        }
    }
    catch (const NumericalError& e)
    {
        r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        r.ok = false;
        r.error = e.what();
        r.rmse = std::numeric_limits<double>::quiet_NaN();
    }
    r.wall_time = std::max(r.wall_time, std::numeric_limits<double>::min());
    return r;
}

inline RunResult run_once(const ScenarioConfig& config, FilterKind kind, const FilterConfig& cfg,
                          std::uint64_t seed)
{
    ScenarioConfig scenario = config;
    scenario.rng_seed = seed;
    return run_on_record(simulate(scenario), scenario, kind, cfg);
}

struct SweepTable {
    SweepVariable variable = SweepVariable::lambda;
    std::vector<double> values;
    std::vector<std::string> filters;
    int mc_runs = 0;
    /// Sorted by (value index, run, filter order).
    std::vector<RunResult> rows;

    [[nodiscard]] std::size_t failed() const
    {
        return static_cast<std::size_t>(
            std::count_if(rows.begin(), rows.end(), [](const RunResult& r) { return !r.ok; }));
    }
    [[nodiscard]] std::size_t succeeded() const { return rows.size() - failed(); }
};

/// Seeds are keyed by the swept value itself, so a given (value, run)
/// sees the same data in every sweep that contains it.
inline std::uint64_t value_key(double value)
{
    std::uint64_t bits = 0;
    const double normalized = value == 0.0 ? 0.0 : value;
    std::memcpy(&bits, &normalized, sizeof bits);
    return bits;
}

/// Every (value, run) cell simulates one record that all filters consume,
/// so comparisons between filters are paired. Cells run on a worker pool.
inline SweepTable run_sweep(const SweepSpec& spec)
{
    spec.validate();

    SweepTable table;
    table.variable = spec.variable;
    table.values = spec.values;
    table.mc_runs = spec.mc_runs;
    for (auto kind : spec.filters)
    {
        table.filters.emplace_back(filter_name(kind));
    }

    const std::size_t n_filters = spec.filters.size();
    const std::size_t n_cells = spec.values.size() * static_cast<std::size_t>(spec.mc_runs);
    table.rows.resize(n_cells * n_filters);

    // One discarded run per (filter, value) before anything is timed.
    for (std::size_t v = 0; v < spec.values.size(); ++v)
    {
        ScenarioConfig scenario = spec.scenario_for(spec.values[v]);
        scenario.rng_seed = derive_seed(spec.master_seed, value_key(spec.values[v]), std::numeric_limits<std::uint64_t>::max());
        const auto rec = simulate(scenario);
        for (auto kind : spec.filters)
        {
            (void)run_on_record(rec, scenario, kind, spec.filter);
        }
    }

    std::atomic<std::size_t> next{0};
    const auto worker = [&]() {
        for (std::size_t cell = next++; cell < n_cells; cell = next++)
        {
            const std::size_t v = cell / static_cast<std::size_t>(spec.mc_runs);
            const int run = static_cast<int>(cell % static_cast<std::size_t>(spec.mc_runs));
            ScenarioConfig scenario = spec.scenario_for(spec.values[v]);
            scenario.rng_seed = derive_seed(spec.master_seed, value_key(spec.values[v]), static_cast<std::uint64_t>(run));
            const auto rec = simulate(scenario);
            for (std::size_t f = 0; f < n_filters; ++f)
            {
                RunResult r = run_on_record(rec, scenario, spec.filters[f], spec.filter);
                r.value = spec.values[v];
                r.run_index = run;
                table.rows[cell * n_filters + f] = std::move(r);
            }
        }
    };

    unsigned jobs = spec.jobs == 0 ? std::max(1u, std::thread::hardware_concurrency()) : spec.jobs;
    jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, n_cells));
    if (jobs <= 1)
    {
        worker();
    }
    else
    {
        std::vector<std::thread> pool;
        pool.reserve(jobs);
        for (unsigned j = 0; j < jobs; ++j)
        {
            pool.emplace_back(worker);
        }
        for (auto& t : pool)
        {
            t.join();
        }
    }
    return table;
}

/// Box-plot statistics. Quartiles interpolate linearly between order
/// statistics; whiskers reach the most extreme data within 1.5 IQR.
struct FiveNumberSummary {
    std::size_t count = 0;
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
    double whisker_low = 0.0;
    double whisker_high = 0.0;
    double mean = 0.0;
};

inline double quantile_sorted(const std::vector<double>& sorted, double p)
{
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline FiveNumberSummary five_number_summary(std::vector<double> data)
{
    if (data.empty())
    {
        throw DomainError("five_number_summary: empty data");
    }
    std::sort(data.begin(), data.end());
    FiveNumberSummary s;
    s.count = data.size();
    s.min = data.front();
    s.max = data.back();
    s.q1 = quantile_sorted(data, 0.25);
    s.median = quantile_sorted(data, 0.5);
    s.q3 = quantile_sorted(data, 0.75);
    const double iqr = s.q3 - s.q1;
    s.whisker_low = *std::lower_bound(data.begin(), data.end(), s.q1 - 1.5 * iqr);
    s.whisker_high = *(std::upper_bound(data.begin(), data.end(), s.q3 + 1.5 * iqr) - 1);
    double sum = 0.0;
    for (double d : data)
    {
        sum += d;
    }
    s.mean = sum / static_cast<double>(data.size());
    return s;
}

struct CellSummary {
    double value = 0.0;
    std::string filter;
    std::size_t failed = 0;
    /// False when every run in the cell failed; the statistics are then unset.
    bool valid = false;
    FiveNumberSummary rmse;
    FiveNumberSummary step_time;
};

inline std::vector<CellSummary> summarize(const SweepTable& table)
{
    std::vector<CellSummary> out;
    for (double value : table.values)
    {
        for (const auto& filter : table.filters)
        {
            CellSummary cell;
            cell.value = value;
            cell.filter = filter;
            std::vector<double> rmse;
            std::vector<double> step_time;
            for (const auto& r : table.rows)
            {
                if (r.value != value || r.filter_name != filter)
                {
                    continue;
                }
                if (!r.ok)
                {
                    ++cell.failed;
                    continue;
                }
                rmse.push_back(r.rmse);
                step_time.push_back(r.step_time());
            }
            if (!rmse.empty())
            {
                cell.valid = true;
                cell.rmse = five_number_summary(rmse);
                cell.step_time = five_number_summary(step_time);
            }
            out.push_back(std::move(cell));
        }
    }
    return out;
}

/// Median RMSE of one (value, filter) cell; NaN when the cell is empty.
inline double median_rmse(const std::vector<CellSummary>& summary, double value, std::string_view filter)
{
    for (const auto& c : summary)
    {
        if (c.value == value && c.filter == filter && c.valid)
        {
            return c.rmse.median;
        }
    }
    return std::numeric_limits<double>::quiet_NaN();
}

namespace detail {

inline std::string format_double(double v)
{
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::string cell_label(SweepVariable var, double value, const std::string& filter)
{
    std::ostringstream os;
    os << filter << '@' << sweep_variable_name(var) << '=' << value;
    return os.str();
}

} // namespace detail

/// CSV, one row per run. wall_time_s is the last column so that the
/// deterministic part of a row is its prefix.
inline void write_csv(std::ostream& os, const SweepTable& table)
{
    os << "filter,variable,value,run,seed,data_hash,ok,rmse,em_iterations,nonconverged_steps,steps,wall_time_s\n";
    for (const auto& r : table.rows)
    {
        os << r.filter_name << ',' << sweep_variable_name(table.variable) << ',' << detail::format_double(r.value)
           << ',' << r.run_index << ',' << r.seed << ',' << r.data_hash << ',' << (r.ok ? 1 : 0) << ','
           << detail::format_double(r.rmse) << ',' << r.em_iterations_total << ',' << r.nonconverged_steps << ','
           << r.steps << ',' << detail::format_double(r.wall_time) << '\n';
    }
}

inline nlohmann::json summary_json(const SweepTable& table, const std::vector<CellSummary>& summary)
{
    const auto stats = [](const FiveNumberSummary& s) {
        return nlohmann::json{{"count", s.count},         {"min", s.min},
                              {"q1", s.q1},               {"median", s.median},
                              {"q3", s.q3},               {"max", s.max},
                              {"whisker_low", s.whisker_low}, {"whisker_high", s.whisker_high},
                              {"mean", s.mean}};
    };
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : summary)
    {
        nlohmann::json j{{"value", c.value}, {"filter", c.filter}, {"failed", c.failed}, {"valid", c.valid}};
        if (c.valid)
        {
            j["rmse"] = stats(c.rmse);
            j["step_time_s"] = stats(c.step_time);
        }
        cells.push_back(std::move(j));
    }
    return nlohmann::json{{"variable", sweep_variable_name(table.variable)},
                          {"values", table.values},
                          {"filters", table.filters},
                          {"mc_runs", table.mc_runs},
                          {"rows_succeeded", table.succeeded()},
                          {"rows_failed", table.failed()},
                          {"cells", std::move(cells)}};
}

enum class BoxMetric { rmse, step_time };

/// Tab-separated box-plot data: one column per (filter, value) cell, one
/// row per Monte Carlo run. Failed runs are written as nan.
inline void write_boxplot(std::ostream& os, const SweepTable& table, BoxMetric metric)
{
    const std::size_t n_filters = table.filters.size();
    bool first = true;
    for (double value : table.values)
    {
        for (const auto& f : table.filters)
        {
            os << (first ? "" : "\t") << detail::cell_label(table.variable, value, f);
            first = false;
        }
    }
    os << '\n';
    const auto runs = static_cast<std::size_t>(table.mc_runs);
    for (std::size_t run = 0; run < runs; ++run)
    {
        first = true;
        for (std::size_t v = 0; v < table.values.size(); ++v)
        {
            for (std::size_t f = 0; f < n_filters; ++f)
            {
                const auto& r = table.rows[(v * runs + run) * n_filters + f];
                const double x = metric == BoxMetric::rmse ? r.rmse : r.step_time();
                os << (first ? "" : "\t") << (r.ok ? detail::format_double(x) : std::string("nan"));
                first = false;
            }
        }
        os << '\n';
    }
}

} // namespace emorf2

// Command line front end: simulate scenarios, run single filters and
// reproduce the benchmark sweeps.

#include "emorf2/bench.hpp"
#include "emorf2/config.hpp"
#include "emorf2/simulator.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRunFailed = 1;
constexpr int kExitUsage = 2;

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string filters;
};

std::vector<std::string> split_csv(const std::string& text)
{
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
    {
        if (!item.empty())
        {
            out.push_back(item);
        }
    }
    return out;
}

emorf2::CliConfig load_config(const CommonOptions& opts)
{
    nlohmann::json root = nlohmann::json::object();
    if (!opts.config_path.empty())
    {
        std::ifstream in(opts.config_path);
        if (!in)
        {
            throw emorf2::ConfigError("cannot read config file '" + opts.config_path + "'");
        }
        std::stringstream buffer;
        buffer << in.rdbuf();
        try
        {
            root = nlohmann::json::parse(buffer.str());
        }
        catch (const nlohmann::json::parse_error& e)
        {
            throw emorf2::ConfigError(std::string("config: parse error: ") + e.what());
        }
    }
    if (opts.seed)
    {
        root["scenario"]["seed"] = *opts.seed;
    }
    if (!opts.filters.empty())
    {
        const auto names = split_csv(opts.filters);
        root["sweep"]["filters"] = names;
        if (!names.empty())
        {
            root["filter"]["name"] = names.front();
        }
    }
    return emorf2::parse_config(root);
}

int cmd_simulate(const CommonOptions& opts, const std::string& out_path)
{
    const auto cfg = load_config(opts);
    const auto rec = emorf2::simulate(cfg.scenario);
    std::ofstream out(out_path);
    if (!out)
    {
        std::cerr << "error: cannot write '" << out_path << "'\n";
        return kExitUsage;
    }
    emorf2::write_record(out, rec);
    std::cerr << "wrote " << rec.steps() << " steps to " << out_path << '\n';
    std::cout << nlohmann::json{{"output", out_path}, {"steps", rec.steps()}, {"data_hash", emorf2::record_hash(rec)}}
              << '\n';
    return kExitOk;
}

int cmd_run(const CommonOptions& opts)
{
    const auto cfg = load_config(opts);
    const auto kind = *emorf2::parse_filter_name(cfg.filter_name);
    const auto r = emorf2::run_once(cfg.scenario, kind, cfg.filter, cfg.scenario.rng_seed);
    nlohmann::json j{{"filter", r.filter_name},
                     {"seed", r.seed},
                     {"ok", r.ok},
                     {"steps", r.steps},
                     {"em_iterations", r.em_iterations_total},
                     {"nonconverged_steps", r.nonconverged_steps},
                     {"wall_time_s", r.wall_time}};
    if (r.ok)
    {
        j["rmse"] = r.rmse;
    }
    else
    {
        j["rmse"] = nullptr;
        j["error"] = r.error;
    }
    std::cout << j.dump() << '\n';
    return r.ok ? kExitOk : kExitRunFailed;
}

int cmd_sweep(const CommonOptions& opts, const std::string& figure, const std::string& outdir,
              std::optional<unsigned> jobs)
{
    const auto cfg = load_config(opts);
    emorf2::FigurePreset preset = emorf2::FigurePreset::custom;
    if (figure == "fig1")
    {
        preset = emorf2::FigurePreset::fig1;
    }
    else if (figure == "fig2")
    {
        preset = emorf2::FigurePreset::fig2;
    }
    else if (figure == "fig3")
    {
        preset = emorf2::FigurePreset::fig3;
    }

    auto spec = emorf2::make_sweep(cfg, preset);
    // Timing figure defaults to a single worker.
    spec.jobs = jobs.value_or(preset == emorf2::FigurePreset::fig3 ? 1u : 0u);

    std::filesystem::create_directories(outdir);
    const std::filesystem::path dir(outdir);

    std::cerr << "sweep " << figure << ": " << spec.values.size() << " values x " << spec.mc_runs << " runs x "
              << spec.filters.size() << " filters\n";
    const auto table = emorf2::run_sweep(spec);
    const auto summary = emorf2::summarize(table);

    {
        std::ofstream csv(dir / (figure + "_runs.csv"));
        emorf2::write_csv(csv, table);
    }
    const auto json = emorf2::summary_json(table, summary);
    {
        std::ofstream js(dir / (figure + "_summary.json"));
        js << json.dump(2) << '\n';
    }
    {
        const auto metric = preset == emorf2::FigurePreset::fig3 ? emorf2::BoxMetric::step_time
                                                                 : emorf2::BoxMetric::rmse;
        std::ofstream box(dir / (figure + "_boxplot.tsv"));
        emorf2::write_boxplot(box, table, metric);
    }

    for (const auto& c : summary)
    {
        if (c.valid)
        {
            std::cerr << "  " << emorf2::sweep_variable_name(table.variable) << '=' << c.value << ' ' << c.filter
                      << ": median rmse " << c.rmse.median << ", median step time " << c.step_time.median << " s";
        }
        else
        {
            std::cerr << "  " << c.filter << ": all runs failed";
        }
        std::cerr << (c.failed ? " (" + std::to_string(c.failed) + " failed)" : std::string()) << '\n';
    }
    std::cout << nlohmann::json{{"figure", figure},
                                {"outdir", outdir},
                                {"rows_succeeded", table.succeeded()},
                                {"rows_failed", table.failed()}}
                     .dump()
              << '\n';
    return table.failed() == 0 ? kExitOk : kExitRunFailed;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"EM outlier-robust filtering: TDOA tracking simulation and benchmarks"};
    app.require_subcommand(1);

    CommonOptions opts;
    const auto add_common = [&opts](CLI::App* sub) {
        sub->add_option("--config", opts.config_path, "JSON configuration file")->check(CLI::ExistingFile);
        sub->add_option("--seed", opts.seed, "Override scenario.seed (master seed for sweeps)");
        sub->add_option("--filters", opts.filters, "Comma separated filter names");
    };

    std::string out_path;
    auto* simulate = app.add_subcommand("simulate", "Simulate one scenario and write the ground truth record");
    add_common(simulate);
    simulate->add_option("--out", out_path, "Output file")->required();

    auto* run = app.add_subcommand("run", "Run one filter on one trajectory, print JSON");
    add_common(run);

    std::string figure = "custom";
    std::string outdir = "results";
    std::optional<unsigned> jobs;
    auto* sweep = app.add_subcommand("sweep", "Monte Carlo sweep; writes CSV, JSON summary and box-plot data");
    add_common(sweep);
    sweep->add_option("--figure", figure, "Preset")->check(CLI::IsMember({"fig1", "fig2", "fig3", "custom"}));
    sweep->add_option("--out", outdir, "Output directory");
    sweep->add_option("--jobs", jobs, "Worker threads (0 = all cores, 1 for timing)");

    auto* defaults = app.add_subcommand("print-defaults", "Print the full default configuration");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try
    {
        if (*defaults)
        {
            std::cout << emorf2::config_to_json(emorf2::CliConfig{}).dump(2) << '\n';
            return kExitOk;
        }
        if (*simulate)
        {
            return cmd_simulate(opts, out_path);
        }
        if (*run)
        {
            return cmd_run(opts);
        }
        return cmd_sweep(opts, figure, outdir, jobs);
    }
    catch (const emorf2::ConfigError& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRunFailed;
    }
}

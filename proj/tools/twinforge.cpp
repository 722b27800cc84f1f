// twinforge command line: run or validate an experiment config.
#include "twinforge/experiments.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Core>
#include <boost/version.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

namespace fs = std::filesystem;
using twinforge::ConfigError;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string utc_now()
{
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

nlohmann::ordered_json config_json(const twinforge::Config& cfg)
{
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    for (const auto& s : cfg.sections()) {
        if (s.entries.empty() && s.name.empty())
            continue;
        auto& node = s.name.empty() ? out : out[s.name];
        for (const auto& [k, v] : s.entries)
            node[k] = v;
    }
    return out;
}

int run(const std::string& path, std::optional<std::uint64_t> seed, std::string out_dir, int jobs)
{
    twinforge::ExperimentConfig cfg = twinforge::ExperimentConfig::load(path);
    if (seed) {
        cfg.seed = *seed;
        cfg.raw.set("", "seed", std::to_string(*seed));
    }
    if (out_dir.empty()) {
        const char* env = std::getenv("TWINFORGE_OUT");
        out_dir = env && *env ? env : "twinforge-out";
    }
    const auto t0 = std::chrono::steady_clock::now();
    const std::string started = utc_now();
    const twinforge::ResultTable table = twinforge::run_experiment(cfg, jobs);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    fs::create_directories(out_dir);
    {
        std::ofstream csv(fs::path(out_dir) / "results.csv", std::ios::binary);
        table.write_csv(csv);
        if (!csv)
            throw std::runtime_error("cannot write results.csv in " + out_dir);
    }
    nlohmann::ordered_json meta;
    meta["experiment"] = twinforge::experiment_name(cfg.kind);
    meta["seed"] = cfg.seed;
    meta["config_path"] = path;
    meta["config"] = config_json(cfg.raw);
    meta["config_text"] = cfg.raw.serialize();
    meta["versions"] = {
        {"twinforge", kVersion},
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION)},
        {"boost", std::to_string(BOOST_VERSION / 100000) + "." + std::to_string(BOOST_VERSION / 100 % 1000) + "." +
                      std::to_string(BOOST_VERSION % 100)},
        {"compiler", __VERSION__},
        {"cxx_standard", __cplusplus},
    };
    meta["jobs"] = jobs;
    meta["rows"] = table.rows.size();
    meta["started_utc"] = started;
    meta["wall_clock_seconds"] = seconds;
    std::ofstream(fs::path(out_dir) / "meta.json") << meta.dump(2) << "\n";
    std::cout << "wrote " << table.rows.size() << " rows to " << (fs::path(out_dir) / "results.csv").string()
              << " in " << seconds << " s\n";
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Digital-twin calibration and twin-aided learning experiments"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::string run_path, validate_path, out_dir;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    auto* run_cmd = app.add_subcommand("run", "Run an experiment and write results.csv and meta.json");
    run_cmd->add_option("config", run_path, "Config file")->required();
    run_cmd->add_option("--seed", seed, "Override the config seed");
    run_cmd->add_option("--out", out_dir, "Output directory (default $TWINFORGE_OUT, else ./twinforge-out)");
    run_cmd->add_option("--jobs", jobs, "Worker threads")->check(CLI::Range(1, 1024));
    auto* validate_cmd = app.add_subcommand("validate", "Check a config without running it");
    validate_cmd->add_option("config", validate_path, "Config file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run_cmd)
            return run(run_path, seed, out_dir, jobs);
        const auto cfg = twinforge::ExperimentConfig::load(validate_path);
        std::cout << "ok: " << twinforge::experiment_name(cfg.kind) << " seed " << cfg.seed << "\n";
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "twinforge: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "twinforge: error: " << e.what() << "\n";
        return 1;
    }
}

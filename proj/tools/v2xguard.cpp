// Command-line front end: train, detect and sweep.
#include "v2xguard/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

enum ExitCode { kOk = 0, kInputError = 2, kInsufficientData = 3, kModelMismatch = 4 };

v2xguard::ExperimentConfig effective_config(const std::string& path, std::optional<std::uint64_t> seed)
{
    auto config = path.empty() ? v2xguard::config_from_json(v2xguard::Json::object()) : v2xguard::load_config(path);
    if (seed) config.baseSeed = *seed;
    return config;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Joint jamming and GPS-spoofing detection experiments for V2I links"};
    app.require_subcommand(1);

    std::string configPath;
    std::string outDir = "out";
    std::string modelDir;
    std::optional<std::uint64_t> seed;
    std::string scenario = "normal";
    int threads = 1;

    auto addCommon = [&](CLI::App* cmd) {
        cmd->add_option("--config", configPath, "Experiment config (JSON); defaults apply when omitted");
        cmd->add_option("--out", outDir, "Output directory")->capture_default_str();
        cmd->add_option("--seed", seed, "Base seed, overrides the config");
        cmd->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    };
    auto* train = app.add_subcommand("train", "Learn coupled models on simulated normal runs and calibrate thresholds");
    addCommon(train);
    auto* detect = app.add_subcommand("detect", "Run one scenario against trained models");
    addCommon(detect);
    detect->add_option("--scenario", scenario, "normal, jam or spoof")
        ->check(CLI::IsMember({"normal", "jam", "spoof"}))
        ->capture_default_str();
    detect->add_option("--models", modelDir, "Directory holding model_M<M>.json (defaults to --out)");
    auto* sweep = app.add_subcommand("sweep", "Scenario x power x cluster-count x run Monte-Carlo sweep");
    addCommon(sweep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInputError;
    }

    try {
        const auto config = effective_config(configPath, seed);
        std::cout << "config_hash=" << v2xguard::config_hash(config) << " base_seed=" << config.baseSeed << "\n";
        if (*train) {
            v2xguard::cmd_train(config, outDir, std::cout, threads);
        } else if (*detect) {
            v2xguard::cmd_detect(config, modelDir.empty() ? outDir : modelDir, outDir, v2xguard::parse_scenario(scenario),
                                 std::cout, threads);
        } else if (*sweep) {
            v2xguard::cmd_sweep(config, outDir, std::cout, threads);
        }
    } catch (const v2xguard::InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kInputError;
    } catch (const v2xguard::InsufficientDataError& e) {
        std::cerr << "insufficient data: " << e.what() << "\n";
        return kInsufficientData;
    } catch (const v2xguard::ModelMismatchError& e) {
        std::cerr << "model mismatch: " << e.what() << "\n";
        return kModelMismatch;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kInputError;
    }
    return kOk;
}

// fedme_cli: run experiments, learning-rate grid searches, sweeps and
// partition reports from a flat key = value config file.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedme/experiment.hpp"
#include "fedme/io.hpp"

namespace {

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) {
            out.push_back(item.substr(b, e - b + 1));
        }
    }
    return out;
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> grid;
    for (const auto& item : split_list(text)) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size() || !(v > 0.0)) {
            throw fedme::ConfigError("--grid: '" + item + "' is not a positive learning rate");
        }
        grid.push_back(v);
    }
    return grid;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Personalized federated learning by model exchange"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::string grid_text;
    std::string axis_name;
    std::string values_text;
    bool report = false;

    auto* run = app.add_subcommand("run", "Run every configured algorithm for all repeats");
    run->add_option("--config", config_path, "Config file")->required();
    run->add_option("--out", out_dir, "Output directory for logs, checkpoints and summary");
    run->add_option("--seed", seed, "Override the master seed");
    run->add_option("--threads", threads, "Client-phase worker threads");

    auto* grid = app.add_subcommand("grid-search", "Pick the learning rate by validation accuracy");
    grid->add_option("--config", config_path, "Config file")->required();
    grid->add_option("--grid", grid_text, "Comma-separated learning rates (default 10^-3 .. 10^0.5)");
    grid->add_option("--threads", threads, "Client-phase worker threads");

    auto* sw = app.add_subcommand("sweep", "Repeat the experiment over one axis");
    sw->add_option("--config", config_path, "Config file")->required();
    sw->add_option("--axis", axis_name, "alpha_label, ablation or architecture")->required();
    sw->add_option("--values", values_text, "Comma-separated axis values");
    sw->add_option("--out", out_dir, "Output directory");
    sw->add_option("--threads", threads, "Client-phase worker threads");

    auto* part = app.add_subcommand("partition", "Print per-client split sizes and label histograms");
    part->add_option("--config", config_path, "Config file")->required();
    part->add_flag("--report", report, "Emit the CSV report (default)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        fedme::ExperimentConfig config = fedme::load_config(config_path);
        if (seed) {
            config.seed = *seed;
        }
        if (threads) {
            config.threads = *threads;
        }
        config.validate();
        const std::optional<std::filesystem::path> out =
            out_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(out_dir);

        if (*run) {
            const auto summary = fedme::run_experiment(config, out);
            std::cout << fedme::format_summary(summary);
        } else if (*grid) {
            const auto g = grid_text.empty() ? fedme::default_lr_grid() : parse_grid(grid_text);
            const auto result = fedme::grid_search_lr(config, g);
            std::cout << fedme::format_grid_search(result);
        } else if (*sw) {
            const auto axis = fedme::parse_sweep_axis(axis_name);
            const auto result = fedme::sweep(config, axis, split_list(values_text), out);
            std::cout << fedme::format_sweep(result);
        } else if (*part) {
            std::cout << fedme::partition_report(config);
        }
    } catch (const fedme::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

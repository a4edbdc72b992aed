#pragma once

// Experiment orchestration: data preparation, architecture initialization,
// repeated runs with mean/std reporting, learning-rate grid search and
// parameter sweeps.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedme/baselines.hpp"
#include "fedme/config.hpp"
#include "fedme/fedme.hpp"

namespace fedme {

struct PreparedData {
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    Dataset pool_source;  // remainder after the unlabeled pool was removed
    UnlabeledPool pool;
    std::vector<std::vector<std::size_t>> parts;  // rows of pool_source per client
    std::vector<ClientShard> shards;
};

/// Generates or loads the dataset, removes the unlabeled pool, partitions
/// the rest over the clients and splits every shard.
PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t run_seed);

/// Each client trains every menu candidate for `probe_epochs` epochs on its
/// train split and keeps the one with the best validation accuracy (ties:
/// fewer parameters, then lower menu index). Returns menu indices.
std::vector<std::size_t> best_local_init(const std::vector<ClientShard>& shards,
                                         const std::vector<ArchitectureSpec>& menu,
                                         std::size_t probe_epochs, const TrainOptions& train,
                                         std::uint64_t seed);

/// Initial architecture per client under the configured policy.
std::vector<ArchitectureSpec> initial_architectures(const ExperimentConfig& config,
                                                    const PreparedData& data, std::uint64_t run_seed);

struct AlgorithmRun {
    Algorithm algorithm = Algorithm::fedme;
    std::vector<Model> final_models;
    std::vector<Model> fine_tuned;  // empty when fine_tune_epochs = 0
    std::vector<RoundLogRow> log;
    std::vector<double> test_acc;      // per client, before fine-tuning
    std::vector<double> test_acc_ft;   // per client, after fine-tuning
    std::vector<double> val_acc;       // per client, before fine-tuning
    double mean_test_acc = 0.0;
    double mean_test_acc_ft = 0.0;
    double mean_val_acc = 0.0;
    double runtime_ms = 0.0;
};

AlgorithmRun run_algorithm(Algorithm algorithm, const ExperimentConfig& config,
                           const PreparedData& data, const std::vector<ArchitectureSpec>& initial,
                           std::uint64_t run_seed, const FedMeHooks& hooks = {});

struct AlgorithmSummary {
    Algorithm algorithm = Algorithm::fedme;
    std::vector<std::uint64_t> seeds;
    std::vector<double> test_acc;
    std::vector<double> test_acc_ft;
    std::vector<double> val_acc;
    std::vector<double> runtime_ms;
    double mean = 0.0;
    double std = 0.0;
    double mean_ft = 0.0;
    double std_ft = 0.0;
};

struct SummaryReport {
    std::vector<AlgorithmSummary> algorithms;
    bool sample_std = false;
    bool timing = false;

    const AlgorithmSummary& at(Algorithm a) const;
};

double mean_of(std::span<const double> xs);
/// Population std by default; `sample` divides by n - 1 (0 when n = 1).
double std_of(std::span<const double> xs, bool sample = false);

/// Runs `repeats` independent repetitions (seed = master + repeat index).
/// With an output directory, writes per run a RoundLog CSV, the final
/// checkpoints and a validation curve, plus one summary.csv.
SummaryReport run_experiment(const ExperimentConfig& config,
                             const std::optional<std::filesystem::path>& out_dir = std::nullopt);

std::string summary_csv(const SummaryReport& report);
std::string format_summary(const SummaryReport& report);

/// 10^-3, 10^-2.5, ..., 10^0.5.
std::vector<double> default_lr_grid();

struct GridSearchResult {
    std::vector<double> grid;
    std::vector<Algorithm> algorithms;
    std::vector<std::vector<double>> val_acc;  // [grid point][algorithm], NaN if training diverged
    std::vector<double> best_lr;               // per algorithm
};

/// One run per grid point (repeat 0 of the master seed, no fine-tuning);
/// best by mean final validation accuracy, ties to the smaller rate.
GridSearchResult grid_search_lr(const ExperimentConfig& config, const std::vector<double>& grid);
std::string format_grid_search(const GridSearchResult& result);

enum class SweepAxis { alpha_label, ablation, architecture };
SweepAxis parse_sweep_axis(const std::string& name);

/// Applies one axis value to a config (e.g. "iid", "MT+DML", "model2").
void apply_sweep_value(ExperimentConfig& config, SweepAxis axis, const std::string& value);

/// The eight model-tuning / mutual-learning / clustering combinations.
std::vector<std::string> ablation_values();

struct SweepReport {
    SweepAxis axis = SweepAxis::alpha_label;
    std::vector<std::string> values;
    std::vector<SummaryReport> reports;
};

SweepReport sweep(const ExperimentConfig& config, SweepAxis axis,
                  const std::vector<std::string>& values,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Rows = axis values, columns = algorithms without / with fine-tuning,
/// cells = mean±std.
std::string format_sweep(const SweepReport& report);
std::string sweep_csv(const SweepReport& report);

/// Per-client split sizes and label histograms for repeat 0.
std::string partition_report(const ExperimentConfig& config);

}  // namespace fedme

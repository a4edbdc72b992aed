#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedme/clustering.hpp"
#include "fedme/data.hpp"
#include "fedme/nn.hpp"

namespace fedme {

/// Raised for malformed or invalid configuration (CLI exit code 1).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Algorithm { fedme, local_only, centralized, fedavg, hypcluster };
enum class InitPolicy { best_local, fixed_index, round_robin };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& name);
std::string to_string(InitPolicy p);

struct ExperimentConfig {
    std::vector<Algorithm> algorithms;

    std::size_t num_clients = 20;
    std::size_t rounds = 50;        // T
    std::size_t local_epochs = 2;   // E
    std::size_t batch_size = 20;
    double lr = 0.05;
    std::map<Algorithm, double> lr_by_algorithm;  // `lr.<algorithm>` overrides
    std::optional<double> fine_tune_lr;  // defaults to lr
    double momentum = 0.9;
    double weight_decay = 1e-4;

    // Data: "synthetic" or a dataset CSV path.
    std::string data = "synthetic";
    SyntheticSpec synthetic;
    std::optional<double> alpha_label = 0.5;  // nullopt: IID
    double alpha_size = 10.0;
    SplitRatios split;
    std::size_t unlabeled = 200;

    // Model menu ("model 1..4"): hidden widths per candidate.
    std::vector<std::vector<std::size_t>> model_menu{{32}, {32, 32}, {32, 32, 32}, {32, 32, 32, 32}};
    Activation activation = Activation::relu;
    InitPolicy init_policy = InitPolicy::best_local;
    /// Menu index for fixed_index and for the single-architecture
    /// algorithms (centralized, fedavg, hypcluster).
    std::size_t init_index = 1;
    std::size_t probe_epochs = 10;

    ClusterSchedule schedule{{25, 37, 46}, 4};
    std::size_t kmeans_restarts = 8;
    bool tuning = true;
    bool dml = true;
    bool clustering = true;
    bool exchange = true;

    std::size_t fine_tune_epochs = 5;
    std::size_t hypcluster_q = 2;
    bool hypcluster_by_accuracy = false;
    bool fedavg_weight_by_samples = true;

    std::size_t repeats = 5;
    std::uint64_t seed = 1;
    bool sample_std = false;
    std::size_t threads = 1;
    bool record_timing = false;

    double lr_for(Algorithm a) const;
    double fine_tune_lr_for(Algorithm a) const { return fine_tune_lr.value_or(lr_for(a)); }
    ArchitectureSpec architecture(std::size_t menu_index, std::size_t input_dim,
                                  std::size_t num_classes) const;
    void validate() const;
};

/// Flat `key = value` lines, `#` comments. Absent keys keep their defaults;
/// unknown keys, bad values and a missing `algorithm` raise ConfigError.
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies one `key = value` assignment (used by the parser and by sweeps).
void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value);

/// Renders every key; parse_config(to_config_text(c)) reproduces c.
std::string to_config_text(const ExperimentConfig& config);

}  // namespace fedme

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "fedme/matrix.hpp"

namespace fedme {

struct Dataset {
    Matrix features;
    std::vector<int> labels;
    std::size_t num_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.cols(); }
    Dataset subset(std::span<const std::size_t> rows) const;
    std::vector<std::size_t> label_counts() const;
    void validate() const;
};

/// Concatenates datasets in order; all must share dim and num_classes.
Dataset concatenate(std::span<const Dataset* const> parts);

struct ClientShard {
    std::size_t client_id = 0;
    Dataset train;
    Dataset validation;
    Dataset test;

    std::size_t total_size() const { return train.size() + validation.size() + test.size(); }
};

struct UnlabeledPool {
    Matrix features;
    std::size_t size() const { return features.rows(); }
};

struct PartitionSpec {
    std::size_t num_clients = 20;
    /// Absent means IID: uniform shuffle into equal shards.
    std::optional<double> alpha_label = 0.5;
    double alpha_size = 10.0;
    std::uint64_t seed = 0;

    bool iid() const { return !alpha_label.has_value(); }
};

struct SyntheticSpec {
    std::size_t num_classes = 4;
    std::size_t dim = 16;
    std::size_t per_class = 300;
    double separation = 2.0;
    double noise = 1.0;
};

/// Gaussian class blobs. Class means sit at distance `separation` from the
/// origin along seeded random directions; rows are grouped by class.
Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Two-stage Dirichlet split. Client quotas come from Dirichlet(alpha_size)
/// weights with largest-remainder rounding (every quota at least M); each
/// class is then spread by Dirichlet(alpha_label) proportions and the result
/// repaired against the quotas. Returns one sorted index set per client.
std::vector<std::vector<std::size_t>> dirichlet_partition(const Dataset& data,
                                                          const PartitionSpec& spec);

/// Integer shares of `total` proportional to `weights` (largest remainder,
/// ties to the lower index). Shares sum to `total` exactly.
std::vector<std::size_t> largest_remainder(std::size_t total, std::span<const double> weights);

/// Mean over clients of the total-variation distance between the client's
/// label distribution and the global one.
double mean_label_skew(const Dataset& data, std::span<const std::vector<std::size_t>> parts);

struct SplitRatios {
    double train = 0.6;
    double validation = 0.2;
    double test = 0.2;
};

/// Seeded shuffle then contiguous cut. Every resulting partition must be
/// nonempty.
ClientShard split_shard(const Dataset& data, std::span<const std::size_t> indices,
                        const SplitRatios& ratios, std::uint64_t seed, std::size_t client_id = 0);

struct UnlabeledSplit {
    UnlabeledPool pool;
    Dataset remainder;
    std::vector<std::size_t> pool_rows;  // rows of the input that went to the pool
};

UnlabeledSplit extract_unlabeled(const Dataset& data, std::size_t count, std::uint64_t seed);

/// Header `# M=<int> d=<int>`, then `f1,...,fd,label` per line.
Dataset load_csv(const std::filesystem::path& path);
std::string to_csv(const Dataset& data);
void save_csv(const Dataset& data, const std::filesystem::path& path);

}  // namespace fedme

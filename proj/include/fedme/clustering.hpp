#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedme/data.hpp"
#include "fedme/matrix.hpp"
#include "fedme/nn.hpp"

namespace fedme {

struct KMeansResult {
    std::vector<std::size_t> assignments;
    double inertia = 0.0;
};

/// Lloyd's algorithm with k-means++ seeding; best of `restarts` runs by
/// within-cluster sum of squared distances. Empty clusters take the point
/// farthest from its centroid. Stops after 100 iterations or when no
/// centroid moves more than 1e-9. Cluster ids are numbered by first
/// appearance in row order.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    std::size_t restarts = 8);

/// Sum of squared distances of each row to the mean of its cluster.
double partition_inertia(const Matrix& points, std::span<const std::size_t> assignments,
                         std::size_t k);

/// Row i is the row-major flattening of forward(models[i], pool).
Matrix model_outputs_on_unlabeled(std::span<const Model* const> models, const UnlabeledPool& pool);

struct ClusterSchedule {
    std::vector<std::size_t> thresholds;  // ascending round indices
    std::size_t k_max = 4;
};

/// 1 + number of thresholds <= t, capped at k_max and at the client count.
std::size_t cluster_count(std::size_t round, const ClusterSchedule& schedule,
                          std::size_t num_clients);

struct ExchangePlan {
    std::size_t round = 0;
    std::vector<std::size_t> donor;       // donor[i] = client whose model i receives
    std::vector<std::size_t> cluster_of;  // cluster id per client
    std::size_t k = 1;

    std::size_t num_clients() const { return donor.size(); }
    /// Number of clients that received client i's model (s_i).
    std::size_t receivers_of(std::size_t i) const;
    void validate() const;
};

/// Each receiver draws its donor uniformly from its own cluster minus
/// itself; a client alone in its cluster draws from all other clients.
/// Draws are independent per receiver, so donors may repeat.
ExchangePlan assign_exchanges(std::span<const std::size_t> cluster_of, std::size_t round,
                              std::uint64_t seed);

}  // namespace fedme

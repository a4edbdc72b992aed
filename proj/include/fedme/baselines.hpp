#pragma once

// Reference algorithms: Local-Only, Centralized, FedAvg and HypCluster.
// They share batching seeds, evaluation and logging with the FedMe engine.

#include <cstdint>
#include <vector>

#include "fedme/data.hpp"
#include "fedme/nn.hpp"
#include "fedme/round_log.hpp"
#include "fedme/training.hpp"

namespace fedme {

enum class BaselineKind { local_only, centralized, fedavg, hypcluster };

struct BaselineOptions {
    std::size_t rounds = 50;
    std::size_t local_epochs = 2;
    TrainOptions train;
    std::size_t threads = 1;
    bool record_timing = false;
    std::uint64_t seed = 0;
    /// FedAvg: weight clients by train-split size (false: plain mean).
    bool weight_by_samples = true;
    /// HypCluster: pick the global model by validation accuracy instead of
    /// validation loss.
    bool hypcluster_by_accuracy = false;
};

struct BaselineResult {
    /// Final model per client (Centralized and FedAvg hand every client a
    /// copy of the single global model).
    std::vector<Model> models;
    std::vector<RoundLogRow> log;
    /// HypCluster: final global model index chosen by each client.
    std::vector<std::size_t> choice;
    /// HypCluster: the global models after the last round.
    std::vector<Model> globals;
};

/// Each client trains its own model for rounds * local_epochs epochs.
BaselineResult run_local_only(const std::vector<ClientShard>& shards, std::vector<Model> initial,
                              const BaselineOptions& opts);

/// One model trained on the pooled train splits (client order). Its batch
/// stream is the one client 0 would use.
BaselineResult run_centralized(const std::vector<ClientShard>& shards, Model initial,
                               const BaselineOptions& opts);

/// Size-weighted average of one shared model, trained by every client each
/// round.
BaselineResult run_fedavg(const std::vector<ClientShard>& shards, Model initial,
                          const BaselineOptions& opts);

/// Several global models; each client trains only the one that fits its
/// validation split best (ties to the lowest index). Models without
/// adherents carry over unchanged.
BaselineResult run_hypcluster(const std::vector<ClientShard>& shards, std::vector<Model> globals,
                              const BaselineOptions& opts);

/// Index of the global model a client picks.
std::size_t hypcluster_choice(std::span<const Model> globals, const Dataset& validation,
                              bool by_accuracy);

}  // namespace fedme

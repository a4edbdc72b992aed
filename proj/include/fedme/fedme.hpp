#pragma once

// The FedMe round engine. Each round: cluster the personalized models by
// their outputs on the server's unlabeled pool, hand every client a model
// from its cluster, train both models by mutual learning, let each client
// pick the better of the two on validation loss, average each lineage's
// copies, and send each client the lineage it picked.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "fedme/clustering.hpp"
#include "fedme/data.hpp"
#include "fedme/nn.hpp"
#include "fedme/round_log.hpp"
#include "fedme/training.hpp"

namespace fedme {

struct ClientState {
    std::size_t id = 0;
    ClientShard shard;
    Model personalized;
    std::optional<Model> exchanged;
    std::optional<std::size_t> exchange_origin;
    std::size_t selection = 0;

    void validate() const;
};

struct FedMeOptions {
    std::size_t rounds = 50;
    std::size_t local_epochs = 2;
    TrainOptions train;
    ClusterSchedule schedule{{25, 37, 46}, 4};
    std::size_t kmeans_restarts = 8;
    bool tuning = true;
    bool dml = true;
    bool clustering = true;
    /// Off: no models are exchanged at all and every client trains alone.
    bool exchange = true;
    std::size_t threads = 1;
    bool record_timing = false;
    std::uint64_t seed = 0;
};

/// One contribution to a lineage average: client `holder`'s personalized
/// model, or the exchanged copy `holder` trained.
struct Contribution {
    std::size_t holder = 0;
    bool exchanged_copy = false;
    friend bool operator==(const Contribution&, const Contribution&) = default;
};

struct AggregationResult {
    std::vector<Model> lineage;                       // aggregated model per lineage
    std::vector<std::vector<Contribution>> sources;   // contributing copies per lineage
};

struct RoundTrace {
    std::size_t round = 0;
    ExchangePlan plan;
    std::vector<std::size_t> selection;
    const AggregationResult* aggregation = nullptr;
    const std::vector<ClientState>* clients = nullptr;  // after redistribution
};

/// Test seams. When set, they replace the drawn exchange plan or the tuning
/// decision; `on_round` observes each completed round.
struct FedMeHooks {
    std::function<ExchangePlan(std::size_t round, const ExchangePlan& drawn)> plan_exchange;
    std::function<std::size_t(std::size_t round, const ClientState& client, std::size_t rule)> tune;
    std::function<void(const RoundTrace&)> on_round;
};

struct FedMeResult {
    std::vector<ClientState> clients;
    std::vector<RoundLogRow> log;
};

/// Trains the personalized and exchanged model of `client` for `epochs`
/// epochs on identical batches. With `mutual` off each model is trained on
/// cross-entropy alone. Epoch e uses batch_seed(seed, client.id, first_epoch + e).
void dml_train(ClientState& client, std::size_t epochs, const TrainOptions& opts,
               std::uint64_t seed, std::size_t first_epoch = 0, bool mutual = true);

/// Keep-own rule: i when own validation loss <= exchanged validation loss,
/// otherwise the exchanged model's origin.
std::size_t tuning_rule(std::size_t self, std::size_t origin, double loss_own, double loss_exchanged);

/// Applies tuning_rule with validation cross-entropy of both models.
std::size_t model_tuning(const ClientState& client);

/// Per-lineage parameter averaging. Lineage i averages client i's trained
/// personalized model with every exchanged copy whose donor was i. A lineage
/// nobody received is passed through unchanged.
AggregationResult aggregate(const std::vector<ClientState>& clients, const ExchangePlan& plan);

/// Client i adopts the aggregated model of lineage selection[i]; exchanged
/// models are dropped.
void redistribute(std::vector<ClientState>& clients, const AggregationResult& aggregated,
                  const std::vector<std::size_t>& selection);

FedMeResult run_fedme(std::vector<ClientState> clients, const UnlabeledPool& pool,
                      const FedMeOptions& options, const FedMeHooks& hooks = {});

}  // namespace fedme

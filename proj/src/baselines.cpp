#include "fedme/baselines.hpp"

#include <chrono>
#include <stdexcept>
#include <string>

namespace fedme {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

void train_round(Model& model, const Dataset& data, const BaselineOptions& opts,
                 std::size_t stream_client, std::size_t round) {
    const std::size_t first = (round - 1) * opts.local_epochs;
    for (std::size_t e = 0; e < opts.local_epochs; ++e) {
        train_epoch_ce(model, data, opts.train, batch_seed(opts.seed, stream_client, first + e));
    }
}

// Train/validation loss of `trained`, accuracies of `served`.
RoundLogRow make_row(std::size_t round, std::size_t client, const ClientShard& shard,
                     const Model& trained, const Model& served) {
    RoundLogRow row;
    row.round = round;
    row.client = client;
    row.loss_p_train = evaluate(trained, shard.train.features, shard.train.labels).loss;
    row.loss_p_val = evaluate(trained, shard.validation.features, shard.validation.labels).loss;
    row.val_acc = evaluate(served, shard.validation.features, shard.validation.labels).accuracy;
    row.test_acc = evaluate(served, shard.test.features, shard.test.labels).accuracy;
    return row;
}

void check_shards(const std::vector<ClientShard>& shards) {
    if (shards.empty()) {
        throw std::invalid_argument("baseline: no clients");
    }
}

}  // namespace

BaselineResult run_local_only(const std::vector<ClientShard>& shards, std::vector<Model> initial,
                              const BaselineOptions& opts) {
    check_shards(shards);
    const std::size_t n = shards.size();
    if (initial.size() != n) {
        throw std::invalid_argument("local-only: need one initial model per client");
    }
    BaselineResult result;
    std::vector<RoundLogRow> rows(n);
    for (std::size_t t = 1; t <= opts.rounds; ++t) {
        parallel_for(n, opts.threads, [&](std::size_t i) {
            const auto start = Clock::now();
            train_round(initial[i], shards[i].train, opts, i, t);
            rows[i] = make_row(t, i, shards[i], initial[i], initial[i]);
            if (opts.record_timing) {
                rows[i].client_ms = elapsed_ms(start);
            }
        });
        result.log.insert(result.log.end(), rows.begin(), rows.end());
    }
    result.models = std::move(initial);
    return result;
}

BaselineResult run_centralized(const std::vector<ClientShard>& shards, Model initial,
                               const BaselineOptions& opts) {
    check_shards(shards);
    const std::size_t n = shards.size();
    std::vector<const Dataset*> parts;
    for (const auto& s : shards) {
        parts.push_back(&s.train);
    }
    const Dataset pooled = concatenate(parts);
    BaselineResult result;
    std::vector<RoundLogRow> rows(n);
    for (std::size_t t = 1; t <= opts.rounds; ++t) {
        const auto start = Clock::now();
        train_round(initial, pooled, opts, 0, t);
        const double ms = elapsed_ms(start);
        parallel_for(n, opts.threads, [&](std::size_t i) {
            rows[i] = make_row(t, i, shards[i], initial, initial);
            if (opts.record_timing) {
                rows[i].server_ms = ms;
            }
        });
        result.log.insert(result.log.end(), rows.begin(), rows.end());
    }
    result.models.assign(n, initial);
    return result;
}

BaselineResult run_fedavg(const std::vector<ClientShard>& shards, Model initial,
                          const BaselineOptions& opts) {
    check_shards(shards);
    const std::size_t n = shards.size();
    Model global = std::move(initial);
    std::vector<Model> local(n, global);
    std::vector<double> weights(n, 1.0);
    if (opts.weight_by_samples) {
        for (std::size_t i = 0; i < n; ++i) {
            weights[i] = static_cast<double>(shards[i].train.size());
        }
    }
    std::vector<const Model*> ptrs;
    for (const auto& m : local) {
        ptrs.push_back(&m);
    }
    BaselineResult result;
    std::vector<RoundLogRow> rows(n);
    std::vector<double> client_ms(n, 0.0);
    for (std::size_t t = 1; t <= opts.rounds; ++t) {
        parallel_for(n, opts.threads, [&](std::size_t i) {
            const auto start = Clock::now();
            adopt(local[i], global);
            train_round(local[i], shards[i].train, opts, i, t);
            client_ms[i] = elapsed_ms(start);
        });
        const auto server_start = Clock::now();
        global = weighted_average_params(ptrs, weights);
        const double server_ms = elapsed_ms(server_start);
        parallel_for(n, opts.threads, [&](std::size_t i) {
            rows[i] = make_row(t, i, shards[i], local[i], global);
            if (opts.record_timing) {
                rows[i].client_ms = client_ms[i];
                rows[i].server_ms = server_ms;
            }
        });
        result.log.insert(result.log.end(), rows.begin(), rows.end());
    }
    result.models.assign(n, global);
    return result;
}

std::size_t hypcluster_choice(std::span<const Model> globals, const Dataset& validation,
                              bool by_accuracy) {
    std::size_t best = 0;
    Evaluation best_eval = evaluate(globals[0], validation.features, validation.labels);
    for (std::size_t k = 1; k < globals.size(); ++k) {
        const Evaluation e = evaluate(globals[k], validation.features, validation.labels);
        const bool better = by_accuracy ? e.accuracy > best_eval.accuracy : e.loss < best_eval.loss;
        if (better) {
            best = k;
            best_eval = e;
        }
    }
    return best;
}

BaselineResult run_hypcluster(const std::vector<ClientShard>& shards, std::vector<Model> globals,
                              const BaselineOptions& opts) {
    check_shards(shards);
    if (globals.size() < 2) {
        throw std::invalid_argument("hypcluster: need at least two global models");
    }
    for (const auto& g : globals) {
        if (!(g.arch == globals.front().arch)) {
            throw std::invalid_argument("hypcluster: global models must share one architecture");
        }
    }
    const std::size_t n = shards.size();
    std::vector<Model> local(n, globals.front());
    std::vector<std::size_t> choice(n, 0);
    BaselineResult result;
    std::vector<RoundLogRow> rows(n);
    std::vector<double> client_ms(n, 0.0);
    for (std::size_t t = 1; t <= opts.rounds; ++t) {
        parallel_for(n, opts.threads, [&](std::size_t i) {
            const auto start = Clock::now();
            choice[i] = hypcluster_choice(globals, shards[i].validation, opts.hypcluster_by_accuracy);
            adopt(local[i], globals[choice[i]]);
            train_round(local[i], shards[i].train, opts, i, t);
            client_ms[i] = elapsed_ms(start);
        });
        const auto server_start = Clock::now();
        for (std::size_t k = 0; k < globals.size(); ++k) {
            std::vector<const Model*> members;
            std::vector<double> weights;
            for (std::size_t i = 0; i < n; ++i) {
                if (choice[i] == k) {
                    members.push_back(&local[i]);
                    weights.push_back(static_cast<double>(shards[i].train.size()));
                }
            }
            if (!members.empty()) {
                globals[k] = weighted_average_params(members, weights);
            }
        }
        const double server_ms = elapsed_ms(server_start);
        parallel_for(n, opts.threads, [&](std::size_t i) {
            rows[i] = make_row(t, i, shards[i], local[i], globals[choice[i]]);
            if (opts.record_timing) {
                rows[i].client_ms = client_ms[i];
                rows[i].server_ms = server_ms;
            }
        });
        result.log.insert(result.log.end(), rows.begin(), rows.end());
    }
    for (std::size_t i = 0; i < n; ++i) {
        result.models.push_back(globals[choice[i]]);
    }
    result.choice = std::move(choice);
    result.globals = std::move(globals);
    return result;
}

}  // namespace fedme

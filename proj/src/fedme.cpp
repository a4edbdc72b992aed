#include "fedme/fedme.hpp"

#include <chrono>
#include <stdexcept>
#include <string>

#include "fedme/random.hpp"

namespace fedme {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::vector<int> gather_labels(const Dataset& data, const std::vector<std::size_t>& rows) {
    std::vector<int> y;
    y.reserve(rows.size());
    for (std::size_t r : rows) {
        y.push_back(data.labels[r]);
    }
    return y;
}

struct ClientRoundStats {
    double loss_p_train = 0.0;
    double loss_ex_train = 0.0;
    double loss_p_val = 0.0;
    double loss_ex_val = 0.0;
    double val_acc = 0.0;
    double test_acc = 0.0;
    double client_ms = 0.0;
};

}  // namespace

void ClientState::validate() const {
    if (exchanged.has_value() != exchange_origin.has_value()) {
        throw std::logic_error("client " + std::to_string(id) +
                               ": exchanged model and its origin must be set together");
    }
    if (exchange_origin && *exchange_origin == id) {
        throw std::logic_error("client " + std::to_string(id) + " received its own model");
    }
    if (personalized.params.size() != personalized.arch.parameter_count()) {
        throw std::logic_error("client " + std::to_string(id) + ": malformed personalized model");
    }
}

void dml_train(ClientState& client, std::size_t epochs, const TrainOptions& opts,
               std::uint64_t seed, std::size_t first_epoch, bool mutual) {
    if (epochs == 0) {
        return;
    }
    if (!client.exchanged) {
        throw std::invalid_argument("dml_train: client " + std::to_string(client.id) +
                                    " has no exchanged model");
    }
    const Dataset& train = client.shard.train;
    Model& own = client.personalized;
    Model& peer = *client.exchanged;
    for (std::size_t e = 0; e < epochs; ++e) {
        const auto batches =
            make_batches(train.size(), opts.batch_size, batch_seed(seed, client.id, first_epoch + e));
        for (const auto& batch : batches) {
            const Matrix x = train.features.select_rows(batch);
            const auto y = gather_labels(train, batch);
            if (mutual) {
                const auto r = dml_losses_and_grads(own, peer, x, y);
                sgd_step(own, r.grad_p, opts.sgd);
                sgd_step(peer, r.grad_ex, opts.sgd);
            } else {
                const auto gp = ce_loss_and_grad(own, x, y);
                const auto ge = ce_loss_and_grad(peer, x, y);
                sgd_step(own, gp.grad, opts.sgd);
                sgd_step(peer, ge.grad, opts.sgd);
            }
        }
    }
}

std::size_t tuning_rule(std::size_t self, std::size_t origin, double loss_own,
                        double loss_exchanged) {
    return loss_own <= loss_exchanged ? self : origin;
}

std::size_t model_tuning(const ClientState& client) {
    if (!client.exchanged) {
        return client.id;
    }
    const auto& val = client.shard.validation;
    const double own = evaluate(client.personalized, val.features, val.labels).loss;
    const double other = evaluate(*client.exchanged, val.features, val.labels).loss;
    return tuning_rule(client.id, *client.exchange_origin, own, other);
}

AggregationResult aggregate(const std::vector<ClientState>& clients, const ExchangePlan& plan) {
    const std::size_t n = clients.size();
    const bool exchanged = !plan.donor.empty();
    if (exchanged && plan.donor.size() != n) {
        throw std::invalid_argument("aggregate: plan does not cover every client");
    }
    AggregationResult out;
    out.lineage.reserve(n);
    out.sources.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<const Model*> copies{&clients[i].personalized};
        out.sources[i].push_back({i, false});
        if (exchanged) {
            for (std::size_t j = 0; j < n; ++j) {
                if (plan.donor[j] == i) {
                    if (!clients[j].exchanged) {
                        throw std::invalid_argument("aggregate: client " + std::to_string(j) +
                                                    " holds no exchanged model");
                    }
                    copies.push_back(&*clients[j].exchanged);
                    out.sources[i].push_back({j, true});
                }
            }
        }
        if (copies.size() == 1) {
            out.lineage.push_back(clients[i].personalized);
        } else {
            out.lineage.push_back(average_params(copies));
        }
    }
    return out;
}

void redistribute(std::vector<ClientState>& clients, const AggregationResult& aggregated,
                  const std::vector<std::size_t>& selection) {
    if (selection.size() != clients.size() || aggregated.lineage.size() != clients.size()) {
        throw std::invalid_argument("redistribute: size mismatch");
    }
    for (std::size_t i = 0; i < clients.size(); ++i) {
        adopt(clients[i].personalized, aggregated.lineage.at(selection[i]));
        clients[i].exchanged.reset();
        clients[i].exchange_origin.reset();
        clients[i].selection = selection[i];
    }
}

FedMeResult run_fedme(std::vector<ClientState> clients, const UnlabeledPool& pool,
                      const FedMeOptions& options, const FedMeHooks& hooks) {
    const std::size_t n = clients.size();
    if (n == 0) {
        throw std::invalid_argument("run_fedme: no clients");
    }
    if (options.exchange && n < 2) {
        throw std::invalid_argument("run_fedme: model exchange needs at least two clients");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (clients[i].id != i) {
            throw std::invalid_argument("run_fedme: client ids must be 0..n-1 in order");
        }
        clients[i].validate();
        for (std::size_t j = 0; j < i; ++j) {
            if (!clients[i].personalized.arch.exchange_compatible(clients[j].personalized.arch)) {
                throw std::invalid_argument("run_fedme: clients disagree on input or class count");
            }
        }
        clients[i].selection = i;
    }

    FedMeResult result;
    result.log.reserve(options.rounds * n);
    const std::size_t epochs = options.local_epochs;
    for (std::size_t t = 1; t <= options.rounds; ++t) {
        const auto server_start = Clock::now();
        std::vector<std::size_t> cluster_of(n, 0);
        std::size_t k = 1;
        ExchangePlan plan;
        plan.round = t;
        if (options.exchange) {
            k = options.clustering ? cluster_count(t, options.schedule, n) : 1;
            if (k > 1) {
                std::vector<const Model*> models;
                for (const auto& c : clients) {
                    models.push_back(&c.personalized);
                }
                const Matrix outputs = model_outputs_on_unlabeled(models, pool);
                cluster_of = kmeans(outputs, k, derive_seed(options.seed, Stream::kmeans, {t}),
                                    options.kmeans_restarts)
                                 .assignments;
            }
            plan = assign_exchanges(cluster_of, t, options.seed);
            if (hooks.plan_exchange) {
                plan = hooks.plan_exchange(t, plan);
            }
            plan.validate();
            if (plan.num_clients() != n) {
                throw std::invalid_argument("run_fedme: exchange plan has the wrong client count");
            }
            k = plan.k;
            for (std::size_t i = 0; i < n; ++i) {
                Model copy = clients[plan.donor[i]].personalized;
                copy.reset_momentum();
                clients[i].exchanged = std::move(copy);
                clients[i].exchange_origin = plan.donor[i];
            }
        } else {
            plan.cluster_of = cluster_of;
        }
        double server_ms = elapsed_ms(server_start);

        std::vector<ClientRoundStats> stats(n);
        std::vector<std::size_t> selection(n);
        parallel_for(n, options.threads, [&](std::size_t i) {
            const auto start = Clock::now();
            ClientState& c = clients[i];
            const std::size_t first_epoch = (t - 1) * epochs;
            if (c.exchanged) {
                dml_train(c, epochs, options.train, options.seed, first_epoch, options.dml);
            } else {
                for (std::size_t e = 0; e < epochs; ++e) {
                    train_epoch_ce(c.personalized, c.shard.train, options.train,
                                   batch_seed(options.seed, c.id, first_epoch + e));
                }
            }
            const auto& tr = c.shard.train;
            const auto& val = c.shard.validation;
            auto& s = stats[i];
            s.loss_p_train = evaluate(c.personalized, tr.features, tr.labels).loss;
            s.loss_p_val = evaluate(c.personalized, val.features, val.labels).loss;
            std::size_t a = i;
            if (c.exchanged) {
                s.loss_ex_train = evaluate(*c.exchanged, tr.features, tr.labels).loss;
                s.loss_ex_val = evaluate(*c.exchanged, val.features, val.labels).loss;
                const std::size_t rule = tuning_rule(i, *c.exchange_origin, s.loss_p_val, s.loss_ex_val);
                a = options.tuning ? rule : i;
                if (hooks.tune) {
                    a = hooks.tune(t, c, a);
                    if (a != i && a != *c.exchange_origin) {
                        throw std::invalid_argument("tuning hook chose a lineage the client never held");
                    }
                }
            }
            selection[i] = a;
            s.client_ms = elapsed_ms(start);
        });

        const auto aggregate_start = Clock::now();
        const AggregationResult aggregated = aggregate(clients, plan);
        redistribute(clients, aggregated, selection);
        server_ms += elapsed_ms(aggregate_start);

        parallel_for(n, options.threads, [&](std::size_t i) {
            const auto& c = clients[i];
            stats[i].val_acc =
                evaluate(c.personalized, c.shard.validation.features, c.shard.validation.labels).accuracy;
            stats[i].test_acc = evaluate(c.personalized, c.shard.test.features, c.shard.test.labels).accuracy;
        });

        for (std::size_t i = 0; i < n; ++i) {
            RoundLogRow row;
            row.round = t;
            row.client = i;
            row.loss_p_train = stats[i].loss_p_train;
            row.loss_p_val = stats[i].loss_p_val;
            row.selection = selection[i];
            if (options.exchange) {
                row.k = k;
                row.cluster = plan.cluster_of[i];
                row.donor = plan.donor[i];
                row.loss_ex_train = stats[i].loss_ex_train;
                row.loss_ex_val = stats[i].loss_ex_val;
            }
            row.val_acc = stats[i].val_acc;
            row.test_acc = stats[i].test_acc;
            if (options.record_timing) {
                row.client_ms = stats[i].client_ms;
                row.server_ms = server_ms;
            }
            result.log.push_back(row);
        }

        if (hooks.on_round) {
            RoundTrace trace;
            trace.round = t;
            trace.plan = plan;
            trace.selection = selection;
            trace.aggregation = &aggregated;
            trace.clients = &clients;
            hooks.on_round(trace);
        }
    }
    result.clients = std::move(clients);
    return result;
}

}  // namespace fedme

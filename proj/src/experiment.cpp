#include "fedme/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "fedme/io.hpp"
#include "fedme/random.hpp"

namespace fedme {

namespace {

using Clock = std::chrono::steady_clock;

TrainOptions train_options(const ExperimentConfig& c, double lr) {
    TrainOptions t;
    t.batch_size = c.batch_size;
    t.sgd = {lr, c.momentum, c.weight_decay};
    return t;
}

bool needs_client_archs(const ExperimentConfig& c) {
    return std::any_of(c.algorithms.begin(), c.algorithms.end(), [](Algorithm a) {
        return a == Algorithm::fedme || a == Algorithm::local_only;
    });
}

BaselineOptions baseline_options(const ExperimentConfig& c, Algorithm algorithm,
                                 std::uint64_t run_seed) {
    BaselineOptions o;
    o.rounds = c.rounds;
    o.local_epochs = c.local_epochs;
    o.train = train_options(c, c.lr_for(algorithm));
    o.threads = c.threads;
    o.record_timing = c.record_timing;
    o.seed = run_seed;
    o.weight_by_samples = c.fedavg_weight_by_samples;
    o.hypcluster_by_accuracy = c.hypcluster_by_accuracy;
    return o;
}

// Mean validation accuracy per round: uniform over clients and weighted by
// client data size.
std::string validation_curve_csv(const std::vector<RoundLogRow>& log,
                                 const std::vector<ClientShard>& shards) {
    std::string out = "round,val_acc_uniform,val_acc_weighted\n";
    const std::size_t n = shards.size();
    double total_size = 0.0;
    for (const auto& s : shards) {
        total_size += static_cast<double>(s.total_size());
    }
    for (std::size_t start = 0; start + n <= log.size(); start += n) {
        double uniform = 0.0;
        double weighted = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& row = log[start + i];
            uniform += row.val_acc;
            weighted += row.val_acc * static_cast<double>(shards[row.client].total_size());
        }
        out += std::to_string(log[start].round) + "," + format_g(uniform / static_cast<double>(n), 6) +
               "," + format_g(weighted / total_size, 6) + "\n";
    }
    return out;
}

void write_run_artifacts(const std::filesystem::path& dir, std::size_t repeat, const AlgorithmRun& run,
                         const std::vector<ClientShard>& shards) {
    const std::string tag = "r" + std::to_string(repeat);
    write_file_atomic(dir / ("roundlog_" + tag + ".csv"), round_log_csv(run.log));
    write_file_atomic(dir / ("curve_" + tag + ".csv"), validation_curve_csv(run.log, shards));
    const auto model_dir = dir / ("models_" + tag);
    for (std::size_t i = 0; i < run.final_models.size(); ++i) {
        save_model(run.final_models[i], model_dir / ("client_" + std::to_string(i) + ".fedm"));
    }
    for (std::size_t i = 0; i < run.fine_tuned.size(); ++i) {
        save_model(run.fine_tuned[i], model_dir / ("client_" + std::to_string(i) + "_ft.fedm"));
    }
}

std::string percent_cell(double mean, double std) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100.0 * mean << "±" << 100.0 * std;
    return s.str();
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t run_seed) {
    Dataset full = config.data == "synthetic" ? generate_synthetic(config.synthetic, run_seed)
                                              : load_csv(config.data);
    PreparedData out;
    out.input_dim = full.dim();
    out.num_classes = full.num_classes;
    if (config.unlabeled > 0) {
        auto split = extract_unlabeled(full, config.unlabeled, run_seed);
        out.pool = std::move(split.pool);
        out.pool_source = std::move(split.remainder);
    } else {
        out.pool_source = std::move(full);
    }
    PartitionSpec spec;
    spec.num_clients = config.num_clients;
    spec.alpha_label = config.alpha_label;
    spec.alpha_size = config.alpha_size;
    spec.seed = run_seed;
    out.parts = dirichlet_partition(out.pool_source, spec);
    for (std::size_t i = 0; i < out.parts.size(); ++i) {
        out.shards.push_back(split_shard(out.pool_source, out.parts[i], config.split,
                                         derive_seed(run_seed, Stream::split, {i}), i));
    }
    return out;
}

std::vector<std::size_t> best_local_init(const std::vector<ClientShard>& shards,
                                         const std::vector<ArchitectureSpec>& menu,
                                         std::size_t probe_epochs, const TrainOptions& train,
                                         std::uint64_t seed) {
    if (menu.empty()) {
        throw std::invalid_argument("best_local_init: empty model menu");
    }
    std::vector<std::size_t> choice(shards.size(), 0);
    for (std::size_t i = 0; i < shards.size(); ++i) {
        const auto& shard = shards[i];
        double best_acc = -1.0;
        for (std::size_t k = 0; k < menu.size(); ++k) {
            Model m = init_model(menu[k], derive_seed(seed, Stream::probe, {i, k}));
            for (std::size_t e = 0; e < probe_epochs; ++e) {
                train_epoch_ce(m, shard.train, train, derive_seed(seed, Stream::probe_batch, {i, k, e}));
            }
            const double acc =
                evaluate(m, shard.validation.features, shard.validation.labels).accuracy;
            const bool better =
                acc > best_acc ||
                (acc == best_acc && menu[k].parameter_count() < menu[choice[i]].parameter_count());
            if (better) {
                best_acc = acc;
                choice[i] = k;
            }
        }
    }
    return choice;
}

std::vector<ArchitectureSpec> initial_architectures(const ExperimentConfig& config,
                                                    const PreparedData& data, std::uint64_t run_seed) {
    std::vector<ArchitectureSpec> menu;
    for (std::size_t k = 0; k < config.model_menu.size(); ++k) {
        menu.push_back(config.architecture(k, data.input_dim, data.num_classes));
    }
    const std::size_t n = data.shards.size();
    std::vector<ArchitectureSpec> out;
    switch (config.init_policy) {
        case InitPolicy::fixed_index:
            out.assign(n, menu.at(config.init_index));
            break;
        case InitPolicy::round_robin:
            for (std::size_t i = 0; i < n; ++i) {
                out.push_back(menu[i % menu.size()]);
            }
            break;
        case InitPolicy::best_local: {
            const auto choice = best_local_init(data.shards, menu, config.probe_epochs,
                                                train_options(config, config.lr), run_seed);
            for (std::size_t k : choice) {
                out.push_back(menu[k]);
            }
            break;
        }
    }
    return out;
}

AlgorithmRun run_algorithm(Algorithm algorithm, const ExperimentConfig& config,
                           const PreparedData& data, const std::vector<ArchitectureSpec>& initial,
                           std::uint64_t run_seed, const FedMeHooks& hooks) {
    const auto start = Clock::now();
    const std::size_t n = data.shards.size();
    AlgorithmRun run;
    run.algorithm = algorithm;

    const auto client_models = [&] {
        if (initial.size() != n) {
            throw std::invalid_argument("run_algorithm: need one initial architecture per client");
        }
        std::vector<Model> models;
        for (std::size_t i = 0; i < n; ++i) {
            models.push_back(init_model(initial[i], derive_seed(run_seed, Stream::init, {i})));
        }
        return models;
    };
    const ArchitectureSpec shared_arch =
        config.architecture(config.init_index, data.input_dim, data.num_classes);
    const BaselineOptions bopts = baseline_options(config, algorithm, run_seed);

    switch (algorithm) {
        case Algorithm::fedme: {
            auto models = client_models();
            std::vector<ClientState> clients(n);
            for (std::size_t i = 0; i < n; ++i) {
                clients[i].id = i;
                clients[i].shard = data.shards[i];
                clients[i].personalized = std::move(models[i]);
            }
            FedMeOptions o;
            o.rounds = config.rounds;
            o.local_epochs = config.local_epochs;
            o.train = train_options(config, config.lr_for(algorithm));
            o.schedule = config.schedule;
            o.kmeans_restarts = config.kmeans_restarts;
            o.tuning = config.tuning;
            o.dml = config.dml;
            o.clustering = config.clustering;
            o.exchange = config.exchange;
            o.threads = config.threads;
            o.record_timing = config.record_timing;
            o.seed = run_seed;
            auto result = run_fedme(std::move(clients), data.pool, o, hooks);
            for (auto& c : result.clients) {
                run.final_models.push_back(std::move(c.personalized));
            }
            run.log = std::move(result.log);
            break;
        }
        case Algorithm::local_only: {
            auto result = run_local_only(data.shards, client_models(), bopts);
            run.final_models = std::move(result.models);
            run.log = std::move(result.log);
            break;
        }
        case Algorithm::centralized: {
            auto result = run_centralized(
                data.shards, init_model(shared_arch, derive_seed(run_seed, Stream::global_model, {0})),
                bopts);
            run.final_models = std::move(result.models);
            run.log = std::move(result.log);
            break;
        }
        case Algorithm::fedavg: {
            auto result = run_fedavg(
                data.shards, init_model(shared_arch, derive_seed(run_seed, Stream::global_model, {0})),
                bopts);
            run.final_models = std::move(result.models);
            run.log = std::move(result.log);
            break;
        }
        case Algorithm::hypcluster: {
            std::vector<Model> globals;
            for (std::size_t k = 0; k < config.hypcluster_q; ++k) {
                globals.push_back(init_model(shared_arch, derive_seed(run_seed, Stream::hypcluster, {k})));
            }
            auto result = run_hypcluster(data.shards, std::move(globals), bopts);
            run.final_models = std::move(result.models);
            run.log = std::move(result.log);
            break;
        }
    }

    run.test_acc.assign(n, 0.0);
    run.test_acc_ft.assign(n, 0.0);
    run.val_acc.assign(n, 0.0);
    if (config.fine_tune_epochs > 0) {
        run.fine_tuned.resize(n);
    }
    const TrainOptions ft = train_options(config, config.fine_tune_lr_for(algorithm));
    parallel_for(n, config.threads, [&](std::size_t i) {
        const auto& shard = data.shards[i];
        const Model& m = run.final_models[i];
        run.test_acc[i] = evaluate(m, shard.test.features, shard.test.labels).accuracy;
        run.val_acc[i] = evaluate(m, shard.validation.features, shard.validation.labels).accuracy;
        if (config.fine_tune_epochs > 0) {
            run.fine_tuned[i] = fine_tune(m, shard.train, config.fine_tune_epochs, ft,
                                          derive_seed(run_seed, Stream::finetune, {i}));
            run.test_acc_ft[i] =
                evaluate(run.fine_tuned[i], shard.test.features, shard.test.labels).accuracy;
        } else {
            run.test_acc_ft[i] = run.test_acc[i];
        }
    });
    run.mean_test_acc = mean_of(run.test_acc);
    run.mean_test_acc_ft = mean_of(run.test_acc_ft);
    run.mean_val_acc = mean_of(run.val_acc);
    run.runtime_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    return run;
}

double mean_of(std::span<const double> xs) {
    if (xs.empty()) {
        return 0.0;
    }
    double s = 0.0;
    for (double x : xs) {
        s += x;
    }
    return s / static_cast<double>(xs.size());
}

double std_of(std::span<const double> xs, bool sample) {
    if (xs.size() < 2) {
        return 0.0;
    }
    const double m = mean_of(xs);
    double s = 0.0;
    for (double x : xs) {
        s += (x - m) * (x - m);
    }
    const double denom = static_cast<double>(sample ? xs.size() - 1 : xs.size());
    return std::sqrt(s / denom);
}

const AlgorithmSummary& SummaryReport::at(Algorithm a) const {
    for (const auto& s : algorithms) {
        if (s.algorithm == a) {
            return s;
        }
    }
    throw std::out_of_range("summary has no entry for " + to_string(a));
}

SummaryReport run_experiment(const ExperimentConfig& config,
                             const std::optional<std::filesystem::path>& out_dir) {
    config.validate();
    SummaryReport report;
    report.sample_std = config.sample_std;
    report.timing = config.record_timing;
    for (Algorithm a : config.algorithms) {
        report.algorithms.push_back({});
        report.algorithms.back().algorithm = a;
    }
    for (std::size_t r = 0; r < config.repeats; ++r) {
        const std::uint64_t run_seed = config.seed + r;
        const PreparedData data = prepare_data(config, run_seed);
        std::vector<ArchitectureSpec> archs;
        if (needs_client_archs(config)) {
            archs = initial_architectures(config, data, run_seed);
        }
        for (std::size_t a = 0; a < config.algorithms.size(); ++a) {
            const AlgorithmRun run = run_algorithm(config.algorithms[a], config, data, archs, run_seed);
            auto& s = report.algorithms[a];
            s.seeds.push_back(run_seed);
            s.test_acc.push_back(run.mean_test_acc);
            s.test_acc_ft.push_back(run.mean_test_acc_ft);
            s.val_acc.push_back(run.mean_val_acc);
            s.runtime_ms.push_back(run.runtime_ms);
            if (out_dir) {
                write_run_artifacts(*out_dir / to_string(run.algorithm), r, run, data.shards);
            }
        }
    }
    for (auto& s : report.algorithms) {
        s.mean = mean_of(s.test_acc);
        s.std = std_of(s.test_acc, config.sample_std);
        s.mean_ft = mean_of(s.test_acc_ft);
        s.std_ft = std_of(s.test_acc_ft, config.sample_std);
    }
    if (out_dir) {
        write_file_atomic(*out_dir / "summary.csv", summary_csv(report));
    }
    return report;
}

std::string summary_csv(const SummaryReport& report) {
    std::string out = "algorithm,repeat,seed,test_acc,test_acc_ft,val_acc";
    out += report.timing ? ",runtime_ms\n" : "\n";
    for (const auto& s : report.algorithms) {
        const std::string name = to_string(s.algorithm);
        for (std::size_t r = 0; r < s.test_acc.size(); ++r) {
            out += name + "," + std::to_string(r) + "," + std::to_string(s.seeds[r]) + "," +
                   format_g(s.test_acc[r], 17) + "," + format_g(s.test_acc_ft[r], 17) + "," +
                   format_g(s.val_acc[r], 17);
            out += report.timing ? "," + format_g(s.runtime_ms[r], 6) + "\n" : "\n";
        }
        out += name + ",mean,," + format_g(s.mean, 17) + "," + format_g(s.mean_ft, 17) + "," +
               format_g(mean_of(s.val_acc), 17);
        out += report.timing ? "," + format_g(mean_of(s.runtime_ms), 6) + "\n" : "\n";
        out += name + ",std,," + format_g(s.std, 17) + "," + format_g(s.std_ft, 17) + "," +
               format_g(std_of(s.val_acc, report.sample_std), 17);
        out += report.timing ? ",\n" : "\n";
    }
    return out;
}

std::string format_summary(const SummaryReport& report) {
    std::ostringstream s;
    s << "test accuracy (mean±std over " << (report.algorithms.empty() ? 0 : report.algorithms[0].test_acc.size())
      << " repeats, " << (report.sample_std ? "sample" : "population") << " std)\n";
    for (const auto& a : report.algorithms) {
        s << "  " << std::left << std::setw(12) << to_string(a.algorithm) << " w/o FT "
          << percent_cell(a.mean, a.std) << "   w/ FT " << percent_cell(a.mean_ft, a.std_ft);
        if (report.timing) {
            double total = 0.0;
            for (double ms : a.runtime_ms) {
                total += ms;
            }
            s << "   runtime " << std::fixed << std::setprecision(1) << total / 1000.0 << " s";
        }
        s << "\n";
    }
    return s.str();
}

std::vector<double> default_lr_grid() {
    std::vector<double> grid;
    for (int k = -6; k <= 1; ++k) {
        grid.push_back(std::pow(10.0, 0.5 * k));
    }
    return grid;
}

GridSearchResult grid_search_lr(const ExperimentConfig& config, const std::vector<double>& grid) {
    if (grid.empty()) {
        throw ConfigError("grid search: the learning-rate grid is empty");
    }
    GridSearchResult result;
    result.grid = grid;
    result.algorithms = config.algorithms;
    for (double lr : grid) {
        std::vector<double> row;
        for (Algorithm a : config.algorithms) {
            ExperimentConfig c = config;
            c.algorithms = {a};
            c.lr = lr;
            c.lr_by_algorithm.clear();
            c.repeats = 1;
            c.fine_tune_epochs = 0;
            c.validate();
            try {
                row.push_back(run_experiment(c).algorithms.front().val_acc.front());
            } catch (const DivergenceError&) {
                row.push_back(std::nan(""));
            }
        }
        result.val_acc.push_back(std::move(row));
    }
    for (std::size_t a = 0; a < result.algorithms.size(); ++a) {
        std::size_t best = 0;
        for (std::size_t g = 1; g < grid.size(); ++g) {
            const double acc = result.val_acc[g][a];
            const double best_acc = result.val_acc[best][a];
            const bool better = std::isnan(best_acc) ? !std::isnan(acc)
                                                     : acc > best_acc || (acc == best_acc && grid[g] < grid[best]);
            if (better) {
                best = g;
            }
        }
        result.best_lr.push_back(grid[best]);
    }
    return result;
}

std::string format_grid_search(const GridSearchResult& result) {
    std::string out = "lr";
    for (Algorithm a : result.algorithms) {
        out += "," + to_string(a);
    }
    out += "\n";
    for (std::size_t g = 0; g < result.grid.size(); ++g) {
        out += format_g(result.grid[g], 6);
        for (double v : result.val_acc[g]) {
            out += std::isnan(v) ? std::string(",diverged") : "," + format_g(v, 6);
        }
        out += "\n";
    }
    out += "best";
    for (double lr : result.best_lr) {
        out += "," + format_g(lr, 6);
    }
    out += "\n";
    return out;
}

SweepAxis parse_sweep_axis(const std::string& name) {
    if (name == "alpha_label") {
        return SweepAxis::alpha_label;
    }
    if (name == "ablation") {
        return SweepAxis::ablation;
    }
    if (name == "architecture") {
        return SweepAxis::architecture;
    }
    throw ConfigError("unknown sweep axis '" + name + "' (expected alpha_label, ablation or architecture)");
}

std::vector<std::string> ablation_values() {
    return {"none", "MT", "DML", "MC", "DML+MC", "MT+DML", "MT+MC", "MT+DML+MC"};
}

void apply_sweep_value(ExperimentConfig& config, SweepAxis axis, const std::string& value) {
    switch (axis) {
        case SweepAxis::alpha_label:
            apply_setting(config, "alpha_label", value);
            break;
        case SweepAxis::ablation: {
            config.tuning = config.dml = config.clustering = false;
            if (value == "none") {
                break;
            }
            if (value == "all") {
                config.tuning = config.dml = config.clustering = true;
                break;
            }
            std::string token;
            std::istringstream in(value);
            while (std::getline(in, token, '+')) {
                if (token == "MT") {
                    config.tuning = true;
                } else if (token == "DML") {
                    config.dml = true;
                } else if (token == "MC") {
                    config.clustering = true;
                } else {
                    throw ConfigError("ablation value '" + value + "': unknown technique '" + token +
                                      "' (use MT, DML, MC joined by '+', or none/all)");
                }
            }
            break;
        }
        case SweepAxis::architecture: {
            if (value == "auto") {
                config.init_policy = InitPolicy::best_local;
                break;
            }
            std::string digits = value.rfind("model", 0) == 0 ? value.substr(5) : value;
            std::size_t idx = 0;
            try {
                idx = std::stoul(digits);
            } catch (const std::exception&) {
                throw ConfigError("architecture value '" + value + "': expected auto or modelN");
            }
            if (idx == 0 || idx > config.model_menu.size()) {
                throw ConfigError("architecture value '" + value + "' is outside the model menu");
            }
            config.init_policy = InitPolicy::fixed_index;
            config.init_index = idx - 1;
            break;
        }
    }
}

SweepReport sweep(const ExperimentConfig& config, SweepAxis axis,
                  const std::vector<std::string>& values,
                  const std::optional<std::filesystem::path>& out_dir) {
    SweepReport report;
    report.axis = axis;
    report.values = values;
    if (report.values.empty() && axis == SweepAxis::ablation) {
        report.values = ablation_values();
    }
    if (report.values.empty()) {
        throw ConfigError("sweep: no axis values given");
    }
    for (const auto& v : report.values) {
        ExperimentConfig c = config;
        apply_sweep_value(c, axis, v);
        c.validate();
        std::optional<std::filesystem::path> dir;
        if (out_dir) {
            dir = *out_dir / ("value_" + v);
        }
        report.reports.push_back(run_experiment(c, dir));
    }
    if (out_dir) {
        write_file_atomic(*out_dir / "sweep.csv", sweep_csv(report));
    }
    return report;
}

std::string format_sweep(const SweepReport& report) {
    std::ostringstream s;
    if (report.reports.empty()) {
        return {};
    }
    s << std::left << std::setw(12) << "value";
    for (const auto& a : report.reports.front().algorithms) {
        s << std::setw(19) << to_string(a.algorithm) << std::setw(19) << (to_string(a.algorithm) + "+FT");
    }
    s << "\n";
    for (std::size_t v = 0; v < report.values.size(); ++v) {
        s << std::setw(12) << report.values[v];
        for (const auto& a : report.reports[v].algorithms) {
            s << std::setw(20) << percent_cell(a.mean, a.std) << std::setw(20)
              << percent_cell(a.mean_ft, a.std_ft);
        }
        s << "\n";
    }
    return s.str();
}

std::string sweep_csv(const SweepReport& report) {
    std::string out = "value,algorithm,mean,std,mean_ft,std_ft\n";
    for (std::size_t v = 0; v < report.values.size(); ++v) {
        for (const auto& a : report.reports[v].algorithms) {
            out += report.values[v] + "," + to_string(a.algorithm) + "," + format_g(a.mean, 17) + "," +
                   format_g(a.std, 17) + "," + format_g(a.mean_ft, 17) + "," + format_g(a.std_ft, 17) +
                   "\n";
        }
    }
    return out;
}

std::string partition_report(const ExperimentConfig& config) {
    const PreparedData data = prepare_data(config, config.seed);
    std::string out = "client,n,train,validation,test";
    for (std::size_t m = 0; m < data.num_classes; ++m) {
        out += ",label_" + std::to_string(m);
    }
    out += "\n";
    for (const auto& shard : data.shards) {
        std::vector<std::size_t> counts(data.num_classes, 0);
        for (const Dataset* part : {&shard.train, &shard.validation, &shard.test}) {
            const auto c = part->label_counts();
            for (std::size_t m = 0; m < counts.size(); ++m) {
                counts[m] += c[m];
            }
        }
        out += std::to_string(shard.client_id) + "," + std::to_string(shard.total_size()) + "," +
               std::to_string(shard.train.size()) + "," + std::to_string(shard.validation.size()) +
               "," + std::to_string(shard.test.size());
        for (std::size_t c : counts) {
            out += "," + std::to_string(c);
        }
        out += "\n";
    }
    return out;
}

}  // namespace fedme

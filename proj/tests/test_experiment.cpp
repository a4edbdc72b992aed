#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "fedme/experiment.hpp"

using namespace fedme;
namespace fs = std::filesystem;

namespace {

const char* kSmallConfig =
    "algorithm = fedme,local_only,centralized,fedavg,hypcluster\n"
    "num_clients = 4\nT = 3\nE = 1\nbatch_size = 10\nlr = 0.05\n"
    "classes = 3\nfeatures = 4\nper_class = 40\nunlabeled = 20\n"
    "models = 6;6,6\nprobe_epochs = 1\ncluster_thresholds = 2\nk_max = 2\n"
    "fine_tune_epochs = 1\nrepeats = 2\nseed = 11\n";

ExperimentConfig small_config(const std::string& extra = "") {
    return parse_config(std::string(kSmallConfig) + extra);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("fedme_test_experiment_" + name);
    fs::remove_all(dir);
    return dir;
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) {
            files[fs::relative(e.path(), root).string()] = slurp(e.path());
        }
    }
    return files;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, sep)) {
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == sep) {
        out.emplace_back();
    }
    return out;
}

}  // namespace

TEST(Experiment, OneRepeatHasZeroStd) {
    auto c = small_config("repeats = 1\nalgorithm = local_only,fedavg\n");
    const auto r = run_experiment(c);
    for (const auto& s : r.algorithms) {
        EXPECT_EQ(s.std, 0.0);
        EXPECT_EQ(s.std_ft, 0.0);
        EXPECT_EQ(s.test_acc.size(), 1u);
    }
}

TEST(Experiment, StdConventions) {
    const std::vector<double> xs{1, 2, 3, 4};
    EXPECT_NEAR(std_of(xs), std::sqrt(1.25), 1e-15);
    EXPECT_NEAR(std_of(xs, true), std::sqrt(5.0 / 3.0), 1e-15);
    EXPECT_EQ(std_of(std::vector<double>{7.0}, true), 0.0);
}

TEST(Experiment, ArtifactsAreByteIdenticalAcrossThreadCounts) {
    const auto a = fresh_dir("threads1");
    const auto b = fresh_dir("threads4");
    run_experiment(small_config("threads = 1\n"), a);
    run_experiment(small_config("threads = 4\n"), b);
    const auto ta = tree(a);
    const auto tb = tree(b);
    EXPECT_EQ(ta, tb);
    // 5 algorithms x 2 repeats x (roundlog + curve), plus the summary.
    std::size_t csv = 0;
    for (const auto& [name, _] : ta) {
        csv += name.size() > 4 && name.substr(name.size() - 4) == ".csv";
    }
    EXPECT_EQ(csv, 21u);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Experiment, SummaryFileMatchesRecomputedStatistics) {
    const auto dir = fresh_dir("summary");
    const auto report = run_experiment(small_config("algorithm = fedme,fedavg\nrepeats = 3\n"), dir);
    std::istringstream in(slurp(dir / "summary.csv"));
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "algorithm,repeat,seed,test_acc,test_acc_ft,val_acc");
    std::map<std::string, std::vector<double>> per_repeat;
    std::map<std::string, double> mean, stdev;
    while (std::getline(in, line)) {
        const auto cells = split(line, ',');
        ASSERT_EQ(cells.size(), 6u) << line;
        if (cells[1] == "mean") {
            mean[cells[0]] = std::stod(cells[3]);
        } else if (cells[1] == "std") {
            stdev[cells[0]] = std::stod(cells[3]);
        } else {
            per_repeat[cells[0]].push_back(std::stod(cells[3]));
        }
    }
    ASSERT_EQ(per_repeat.size(), 2u);
    for (const auto& [name, xs] : per_repeat) {
        EXPECT_EQ(xs.size(), 3u);
        EXPECT_NEAR(mean_of(xs), mean[name], 1e-9);
        EXPECT_NEAR(std_of(xs), stdev[name], 1e-9);
    }
    EXPECT_NEAR(report.at(Algorithm::fedme).mean, mean["fedme"], 1e-12);
    fs::remove_all(dir);
}

TEST(Experiment, RoundLogParsesBackAndCheckpointsLoad) {
    const auto dir = fresh_dir("roundlog");
    run_experiment(small_config("algorithm = fedme\nrepeats = 1\n"), dir);
    const std::string text = slurp(dir / "fedme" / "roundlog_r0.csv");
    const auto rows = parse_round_log_csv(text);
    EXPECT_EQ(rows.size(), 12u);
    EXPECT_EQ(round_log_csv(rows), text);
    for (const auto& row : rows) {
        EXPECT_EQ(*row.selection, tuning_rule(row.client, *row.donor, *row.loss_p_val, *row.loss_ex_val));
    }
    for (std::size_t i = 0; i < 4; ++i) {
        const auto stem = dir / "fedme" / "models_r0" / ("client_" + std::to_string(i));
        const Model m = load_model(stem.string() + ".fedm");
        EXPECT_EQ(m.params.size(), m.arch.parameter_count());
        EXPECT_NO_THROW(load_model(stem.string() + "_ft.fedm"));
    }
    const std::string curve = slurp(dir / "fedme" / "curve_r0.csv");
    EXPECT_EQ(curve.substr(0, curve.find('\n')), "round,val_acc_uniform,val_acc_weighted");
    EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), 4);
    fs::remove_all(dir);
}

TEST(Experiment, PerClientAccuraciesMatchTheSavedModels) {
    const auto c = small_config("algorithm = fedavg\nrepeats = 1\n");
    const auto data = prepare_data(c, c.seed);
    const auto run = run_algorithm(Algorithm::fedavg, c, data, {}, c.seed);
    ASSERT_EQ(run.test_acc.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& t = data.shards[i].test;
        EXPECT_EQ(run.test_acc[i], evaluate(run.final_models[i], t.features, t.labels).accuracy);
        EXPECT_EQ(run.test_acc_ft[i], evaluate(run.fine_tuned[i], t.features, t.labels).accuracy);
    }
    EXPECT_EQ(run.log.size(), 12u);
}

TEST(GridSearch, DefaultGrid) {
    const auto g = default_lr_grid();
    ASSERT_EQ(g.size(), 8u);
    EXPECT_NEAR(g.front(), 1e-3, 1e-15);
    EXPECT_NEAR(g.back(), std::pow(10.0, 0.5), 1e-12);
    for (std::size_t k = 1; k < g.size(); ++k) {
        EXPECT_NEAR(g[k] / g[k - 1], std::sqrt(10.0), 1e-12);
    }
}

TEST(GridSearch, SingletonGridReturnsItsRate) {
    const auto r = grid_search_lr(small_config("algorithm = local_only\n"), {0.02});
    EXPECT_EQ(r.best_lr, std::vector<double>{0.02});
    EXPECT_THROW(grid_search_lr(small_config(), {}), ConfigError);
}

TEST(GridSearch, AbsurdRateIsNoBetterThanTheBest) {
    auto c = load_config(FEDME_DESK_CONFIG);
    c.algorithms = {Algorithm::fedavg, Algorithm::local_only};
    const auto r = grid_search_lr(c, {0.01, 0.0316227766016838, std::pow(10.0, 0.5)});
    ASSERT_EQ(r.val_acc.size(), 3u);
    for (std::size_t a = 0; a < 2; ++a) {
        double best = -1.0;
        for (std::size_t g = 0; g < 3; ++g) {
            if (r.grid[g] == r.best_lr[a]) {
                best = r.val_acc[g][a];
            }
        }
        const double absurd = r.val_acc[2][a];
        EXPECT_TRUE(std::isnan(absurd) || absurd < best) << absurd << " vs " << best;
        EXPECT_NE(r.best_lr[a], r.grid[2]);
    }
    EXPECT_FALSE(format_grid_search(r).empty());
}

TEST(Sweep, AblationHasEightCombinations) {
    const auto v = ablation_values();
    EXPECT_EQ(v.size(), 8u);
    EXPECT_EQ(std::set<std::string>(v.begin(), v.end()).size(), 8u);
    auto c = small_config();
    apply_sweep_value(c, SweepAxis::ablation, "MT+MC");
    EXPECT_TRUE(c.tuning);
    EXPECT_FALSE(c.dml);
    EXPECT_TRUE(c.clustering);
    apply_sweep_value(c, SweepAxis::ablation, "none");
    EXPECT_FALSE(c.tuning || c.dml || c.clustering);
    EXPECT_THROW(apply_sweep_value(c, SweepAxis::ablation, "MT+XX"), ConfigError);
}

TEST(Sweep, AlphaAndArchitectureValues) {
    auto c = small_config();
    apply_sweep_value(c, SweepAxis::alpha_label, "iid");
    EXPECT_FALSE(c.alpha_label.has_value());
    apply_sweep_value(c, SweepAxis::alpha_label, "0.1");
    EXPECT_DOUBLE_EQ(*c.alpha_label, 0.1);
    apply_sweep_value(c, SweepAxis::architecture, "model2");
    EXPECT_EQ(c.init_policy, InitPolicy::fixed_index);
    EXPECT_EQ(c.init_index, 1u);
    apply_sweep_value(c, SweepAxis::architecture, "auto");
    EXPECT_EQ(c.init_policy, InitPolicy::best_local);
    EXPECT_THROW(parse_sweep_axis("depth"), ConfigError);
}

TEST(Sweep, ReportHasOneRowPerValue) {
    const auto r = sweep(small_config("algorithm = fedme,fedavg\nrepeats = 1\nT = 2\n"), SweepAxis::alpha_label,
                         {"iid", "0.1"});
    EXPECT_EQ(r.reports.size(), 2u);
    const std::string csv = sweep_csv(r);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "value,algorithm,mean,std,mean_ft,std_ft");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);  // header + 2 values x 2 algorithms
    const std::string table = format_sweep(r);
    EXPECT_NE(table.find("iid"), std::string::npos);
    EXPECT_NE(table.find("0.1"), std::string::npos);
}

TEST(Init, MenuOfOneAndDeterminism) {
    const auto c = small_config();
    const auto data = prepare_data(c, 3);
    const std::vector<ArchitectureSpec> one{c.architecture(0, data.input_dim, data.num_classes)};
    TrainOptions train;
    EXPECT_EQ(best_local_init(data.shards, one, 2, train, 1), std::vector<std::size_t>(4, 0));
    std::vector<ArchitectureSpec> menu;
    for (std::size_t k = 0; k < c.model_menu.size(); ++k) {
        menu.push_back(c.architecture(k, data.input_dim, data.num_classes));
    }
    EXPECT_EQ(best_local_init(data.shards, menu, 2, train, 1), best_local_init(data.shards, menu, 2, train, 1));
    EXPECT_THROW(best_local_init(data.shards, {}, 2, train, 1), std::invalid_argument);
}

TEST(Init, PoliciesAssignArchitectures) {
    auto c = small_config("init_policy = round_robin\n");
    const auto data = prepare_data(c, c.seed);
    const auto rr = initial_architectures(c, data, c.seed);
    ASSERT_EQ(rr.size(), 4u);
    EXPECT_EQ(rr[0].hidden_widths.size(), 1u);
    EXPECT_EQ(rr[1].hidden_widths.size(), 2u);
    EXPECT_EQ(rr[2].hidden_widths.size(), 1u);
    c.init_policy = InitPolicy::fixed_index;
    c.init_index = 1;
    for (const auto& a : initial_architectures(c, data, c.seed)) {
        EXPECT_EQ(a.hidden_widths.size(), 2u);
    }
}

TEST(Partition, ReportListsEveryClient) {
    const auto c = small_config();
    const std::string report = partition_report(c);
    std::istringstream in(report);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "client,n,train,validation,test,label_0,label_1,label_2");
    std::size_t rows = 0, total = 0;
    while (std::getline(in, line)) {
        const auto cells = split(line, ',');
        ASSERT_EQ(cells.size(), 8u);
        const std::size_t n = std::stoul(cells[1]);
        EXPECT_EQ(n, std::stoul(cells[2]) + std::stoul(cells[3]) + std::stoul(cells[4]));
        EXPECT_EQ(n, std::stoul(cells[5]) + std::stoul(cells[6]) + std::stoul(cells[7]));
        total += n;
        ++rows;
    }
    EXPECT_EQ(rows, 4u);
    EXPECT_EQ(total, 120u - 20u);
}

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fedme/config.hpp"

using namespace fedme;

namespace {

std::string error_of(const std::string& text) {
    try {
        parse_config(text, "t.cfg");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

bool mentions(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

}  // namespace

TEST(Config, EmptyFileNeedsAlgorithm) {
    EXPECT_TRUE(mentions(error_of(""), "algorithm"));
    EXPECT_TRUE(mentions(error_of("# only a comment\n\n"), "algorithm"));
}

TEST(Config, DefaultsApply) {
    const auto c = parse_config("algorithm = fedme\n");
    EXPECT_EQ(c.algorithms, std::vector<Algorithm>{Algorithm::fedme});
    EXPECT_EQ(c.num_clients, 20u);
    EXPECT_EQ(c.local_epochs, 2u);
    EXPECT_EQ(c.batch_size, 20u);
    EXPECT_DOUBLE_EQ(c.momentum, 0.9);
    EXPECT_DOUBLE_EQ(c.weight_decay, 1e-4);
    EXPECT_EQ(c.repeats, 5u);
    EXPECT_EQ(c.hypcluster_q, 2u);
    EXPECT_EQ(c.probe_epochs, 10u);
    EXPECT_FALSE(c.sample_std);
}

TEST(Config, LocalEpochsRoundTrip) {
    const auto c = parse_config("algorithm = fedme\nE = 2\n");
    EXPECT_EQ(c.local_epochs, 2u);
    EXPECT_EQ(parse_config(to_config_text(c)).local_epochs, 2u);
}

TEST(Config, RejectsBadValues) {
    EXPECT_TRUE(mentions(error_of("algorithm = fedme\nlr = -1\n"), "lr"));
    EXPECT_TRUE(mentions(error_of("algorithm = fedme\nlr = abc\n"), "lr"));
    EXPECT_TRUE(mentions(error_of("algorithm = fedme\nE = 2.5\n"), "E"));
    EXPECT_TRUE(mentions(error_of("algorithm = fedme\nrepeats = 0\n"), "repeats"));
    EXPECT_TRUE(mentions(error_of("algorithm = fedme\nnum_clients = 1\n"), "num_clients"));
    EXPECT_TRUE(mentions(error_of("algorithm = fedme\nmomentum = 1\n"), "momentum"));
    EXPECT_TRUE(mentions(error_of("algorithm = gossip\n"), "gossip"));
    EXPECT_TRUE(mentions(error_of("algorithm = fedme\nlr.fedavg = 0\n"), "lr.fedavg"));
    EXPECT_TRUE(mentions(error_of("algorithm = fedme\nlr.gossip = 0.1\n"), "gossip"));
}

TEST(Config, UnknownKeyNamedWithLine) {
    const auto e = error_of("algorithm = fedme\n\nlearning_rate = 0.1\n");
    EXPECT_TRUE(mentions(e, "learning_rate"));
    EXPECT_TRUE(mentions(e, "t.cfg:3"));
    EXPECT_TRUE(mentions(error_of("algorithm = fedme\njust words\n"), "t.cfg:2"));
}

TEST(Config, PerAlgorithmRates) {
    const auto c = parse_config("algorithm = fedme,fedavg\nlr = 0.05\nlr.fedavg = 0.01\n");
    EXPECT_DOUBLE_EQ(c.lr_for(Algorithm::fedme), 0.05);
    EXPECT_DOUBLE_EQ(c.lr_for(Algorithm::fedavg), 0.01);
    EXPECT_DOUBLE_EQ(c.fine_tune_lr_for(Algorithm::fedavg), 0.01);
    const auto d = parse_config("algorithm = fedavg\nlr.fedavg = 0.01\nfine_tune_lr = 0.2\n");
    EXPECT_DOUBLE_EQ(d.fine_tune_lr_for(Algorithm::fedavg), 0.2);
}

TEST(Config, IidAndListsParse) {
    const auto c = parse_config(
        "algorithm = fedme, local_only\nalpha_label = iid\nmodels = 8;8,8\ncluster_thresholds = 3,5\n"
        "split = 0.5,0.25,0.25\n");
    EXPECT_FALSE(c.alpha_label.has_value());
    EXPECT_EQ(c.model_menu, (std::vector<std::vector<std::size_t>>{{8}, {8, 8}}));
    EXPECT_EQ(c.schedule.thresholds, (std::vector<std::size_t>{3, 5}));
    EXPECT_DOUBLE_EQ(c.split.train, 0.5);
    EXPECT_EQ(c.algorithms.size(), 2u);
}

TEST(Config, TextRoundTripReproducesEverything) {
    auto c = parse_config(
        "algorithm = fedme,hypcluster\nlr = 0.0316227766016838\nlr.hypcluster = 0.003\n"
        "alpha_label = 0.1\nmodels = 16;16,16\ninit_policy = round_robin\ninit_index = 0\n"
        "tuning = off\nstd = sample\nseed = 77\nthreads = 3\nfine_tune_lr = 0.01\n");
    const auto back = parse_config(to_config_text(c));
    EXPECT_EQ(to_config_text(back), to_config_text(c));
    EXPECT_EQ(back.lr, c.lr);
    EXPECT_EQ(back.lr_by_algorithm, c.lr_by_algorithm);
    EXPECT_EQ(back.alpha_label, c.alpha_label);
    EXPECT_EQ(back.init_policy, InitPolicy::round_robin);
    EXPECT_FALSE(back.tuning);
    EXPECT_TRUE(back.sample_std);
    EXPECT_EQ(back.seed, 77u);
}

TEST(Config, LoadFromFile) {
    const auto path = std::filesystem::temp_directory_path() / "fedme_test_config.cfg";
    std::ofstream(path) << "algorithm = local_only\nT = 3\n";
    EXPECT_EQ(load_config(path).rounds, 3u);
    std::filesystem::remove(path);
    try {
        load_config(path);
        FAIL() << "missing file should not load";
    } catch (const ConfigError& e) {
        EXPECT_TRUE(mentions(e.what(), path.string()));
    }
}

TEST(Config, ArchitectureFromMenu) {
    const auto c = parse_config("algorithm = fedme\nmodels = 8;8,8\nactivation = tanh\n");
    const auto a = c.architecture(1, 16, 4);
    EXPECT_EQ(a.hidden_widths, (std::vector<std::size_t>{8, 8}));
    EXPECT_EQ(a.activation, Activation::tanh);
    EXPECT_EQ(a.input_dim, 16u);
    EXPECT_EQ(a.num_classes, 4u);
}

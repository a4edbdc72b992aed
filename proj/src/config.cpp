#include "fedme/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fedme/io.hpp"

namespace fedme {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

[[noreturn]] void bad(const std::string& key, const std::string& what) {
    throw ConfigError("config key '" + key + "': " + what);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
        bad(key, "expected a nonnegative integer, got '" + v + "'");
    }
    return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
    return static_cast<std::size_t>(to_u64(key, v));
}

double to_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    std::string_view text(v);
    if (!text.empty() && text.front() == '+') {
        text.remove_prefix(1);
    }
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    if (text.empty() || ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(out)) {
        bad(key, "expected a real number, got '" + v + "'");
    }
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no" || v == "off") {
        return false;
    }
    bad(key, "expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_size_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    if (v.empty()) {
        return out;
    }
    for (const auto& item : split(v, ',')) {
        out.push_back(to_size(key, item));
    }
    return out;
}

std::string join(const std::vector<std::size_t>& xs, char sep) {
    std::string out;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        if (k) {
            out += sep;
        }
        out += std::to_string(xs[k]);
    }
    return out;
}

std::string real(double v) { return format_g(v, 17); }

}  // namespace

std::string to_string(Algorithm a) {
    switch (a) {
        case Algorithm::fedme: return "fedme";
        case Algorithm::local_only: return "local_only";
        case Algorithm::centralized: return "centralized";
        case Algorithm::fedavg: return "fedavg";
        case Algorithm::hypcluster: return "hypcluster";
    }
    return "?";
}

Algorithm parse_algorithm(const std::string& name) {
    for (Algorithm a : {Algorithm::fedme, Algorithm::local_only, Algorithm::centralized,
                        Algorithm::fedavg, Algorithm::hypcluster}) {
        if (to_string(a) == name) {
            return a;
        }
    }
    throw ConfigError("config key 'algorithm': unknown algorithm '" + name + "'");
}

std::string to_string(InitPolicy p) {
    switch (p) {
        case InitPolicy::best_local: return "best_local";
        case InitPolicy::fixed_index: return "fixed_index";
        case InitPolicy::round_robin: return "round_robin";
    }
    return "?";
}

double ExperimentConfig::lr_for(Algorithm a) const {
    const auto it = lr_by_algorithm.find(a);
    return it == lr_by_algorithm.end() ? lr : it->second;
}

ArchitectureSpec ExperimentConfig::architecture(std::size_t menu_index, std::size_t input_dim,
                                                std::size_t num_classes) const {
    ArchitectureSpec arch;
    arch.input_dim = input_dim;
    arch.hidden_widths = model_menu.at(menu_index);
    arch.num_classes = num_classes;
    arch.activation = activation;
    return arch;
}

void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& value) {
    const std::string& v = value;
    if (key == "algorithm") {
        c.algorithms.clear();
        for (const auto& name : split(v, ',')) {
            const Algorithm a = parse_algorithm(name);
            if (std::find(c.algorithms.begin(), c.algorithms.end(), a) != c.algorithms.end()) {
                bad(key, "algorithm '" + name + "' listed twice");
            }
            c.algorithms.push_back(a);
        }
    } else if (key == "num_clients") {
        c.num_clients = to_size(key, v);
    } else if (key == "T" || key == "rounds") {
        c.rounds = to_size(key, v);
    } else if (key == "E" || key == "local_epochs") {
        c.local_epochs = to_size(key, v);
    } else if (key == "batch_size") {
        c.batch_size = to_size(key, v);
    } else if (key == "lr") {
        c.lr = to_real(key, v);
    } else if (key.rfind("lr.", 0) == 0) {
        c.lr_by_algorithm[parse_algorithm(key.substr(3))] = to_real(key, v);
    } else if (key == "fine_tune_lr") {
        c.fine_tune_lr = to_real(key, v);
    } else if (key == "momentum") {
        c.momentum = to_real(key, v);
    } else if (key == "weight_decay") {
        c.weight_decay = to_real(key, v);
    } else if (key == "data") {
        if (v.empty()) {
            bad(key, "empty value");
        }
        c.data = v;
    } else if (key == "classes") {
        c.synthetic.num_classes = to_size(key, v);
    } else if (key == "features") {
        c.synthetic.dim = to_size(key, v);
    } else if (key == "per_class") {
        c.synthetic.per_class = to_size(key, v);
    } else if (key == "separation") {
        c.synthetic.separation = to_real(key, v);
    } else if (key == "noise") {
        c.synthetic.noise = to_real(key, v);
    } else if (key == "alpha_label") {
        if (v == "iid" || v == "IID") {
            c.alpha_label.reset();
        } else {
            c.alpha_label = to_real(key, v);
        }
    } else if (key == "alpha_size") {
        c.alpha_size = to_real(key, v);
    } else if (key == "split") {
        const auto parts = split(v, ',');
        if (parts.size() != 3) {
            bad(key, "expected three ratios train,validation,test");
        }
        c.split = {to_real(key, parts[0]), to_real(key, parts[1]), to_real(key, parts[2])};
    } else if (key == "unlabeled") {
        c.unlabeled = to_size(key, v);
    } else if (key == "models") {
        c.model_menu.clear();
        for (const auto& item : split(v, ';')) {
            c.model_menu.push_back(to_size_list(key, item));
        }
    } else if (key == "activation") {
        try {
            c.activation = parse_activation(v);
        } catch (const std::invalid_argument&) {
            bad(key, "expected relu or tanh, got '" + v + "'");
        }
    } else if (key == "init_policy") {
        if (v == "best_local") {
            c.init_policy = InitPolicy::best_local;
        } else if (v == "fixed_index") {
            c.init_policy = InitPolicy::fixed_index;
        } else if (v == "round_robin") {
            c.init_policy = InitPolicy::round_robin;
        } else {
            bad(key, "expected best_local, fixed_index or round_robin, got '" + v + "'");
        }
    } else if (key == "init_index") {
        c.init_index = to_size(key, v);
    } else if (key == "probe_epochs") {
        c.probe_epochs = to_size(key, v);
    } else if (key == "cluster_thresholds") {
        c.schedule.thresholds = to_size_list(key, v);
        if (!std::is_sorted(c.schedule.thresholds.begin(), c.schedule.thresholds.end())) {
            bad(key, "thresholds must be ascending");
        }
    } else if (key == "k_max") {
        c.schedule.k_max = to_size(key, v);
    } else if (key == "kmeans_restarts") {
        c.kmeans_restarts = to_size(key, v);
    } else if (key == "tuning") {
        c.tuning = to_bool(key, v);
    } else if (key == "dml") {
        c.dml = to_bool(key, v);
    } else if (key == "clustering") {
        c.clustering = to_bool(key, v);
    } else if (key == "exchange") {
        c.exchange = to_bool(key, v);
    } else if (key == "fine_tune_epochs") {
        c.fine_tune_epochs = to_size(key, v);
    } else if (key == "hypcluster_q") {
        c.hypcluster_q = to_size(key, v);
    } else if (key == "hypcluster_metric") {
        if (v != "loss" && v != "accuracy") {
            bad(key, "expected loss or accuracy, got '" + v + "'");
        }
        c.hypcluster_by_accuracy = v == "accuracy";
    } else if (key == "fedavg_weighting") {
        if (v != "samples" && v != "uniform") {
            bad(key, "expected samples or uniform, got '" + v + "'");
        }
        c.fedavg_weight_by_samples = v == "samples";
    } else if (key == "repeats") {
        c.repeats = to_size(key, v);
    } else if (key == "seed") {
        c.seed = to_u64(key, v);
    } else if (key == "std") {
        if (v != "population" && v != "sample") {
            bad(key, "expected population or sample, got '" + v + "'");
        }
        c.sample_std = v == "sample";
    } else if (key == "threads") {
        c.threads = to_size(key, v);
    } else if (key == "record_timing") {
        c.record_timing = to_bool(key, v);
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

void ExperimentConfig::validate() const {
    const auto positive = [](const char* key, double v) {
        if (!(v > 0.0)) {
            bad(key, "must be positive");
        }
    };
    if (algorithms.empty()) {
        throw ConfigError("missing required config key 'algorithm'");
    }
    if (num_clients == 0) {
        bad("num_clients", "must be positive");
    }
    const bool has_fedme =
        std::find(algorithms.begin(), algorithms.end(), Algorithm::fedme) != algorithms.end();
    if (has_fedme && exchange && num_clients < 2) {
        bad("num_clients", "fedme exchanges models and needs at least 2 clients");
    }
    if (batch_size == 0) {
        bad("batch_size", "must be positive");
    }
    positive("lr", lr);
    for (const auto& [a, rate] : lr_by_algorithm) {
        if (!(rate > 0.0)) {
            bad("lr." + to_string(a), "must be positive");
        }
    }
    if (fine_tune_lr) {
        positive("fine_tune_lr", *fine_tune_lr);
    }
    if (momentum < 0.0 || momentum >= 1.0) {
        bad("momentum", "must lie in [0, 1)");
    }
    if (weight_decay < 0.0) {
        bad("weight_decay", "must be nonnegative");
    }
    if (alpha_label) {
        positive("alpha_label", *alpha_label);
    }
    positive("alpha_size", alpha_size);
    if (split.train <= 0.0 || split.validation <= 0.0 || split.test <= 0.0) {
        bad("split", "all three ratios must be positive");
    }
    if (data == "synthetic") {
        if (synthetic.num_classes < 2) {
            bad("classes", "must be at least 2");
        }
        if (synthetic.dim < 2) {
            bad("features", "must be at least 2");
        }
        if (synthetic.per_class == 0) {
            bad("per_class", "must be positive");
        }
        if (synthetic.noise < 0.0) {
            bad("noise", "must be nonnegative");
        }
    }
    if (model_menu.empty()) {
        bad("models", "menu must not be empty");
    }
    for (const auto& m : model_menu) {
        for (std::size_t w : m) {
            if (w == 0) {
                bad("models", "hidden widths must be positive");
            }
        }
    }
    if (init_index >= model_menu.size()) {
        bad("init_index", "outside the model menu");
    }
    if (schedule.k_max == 0) {
        bad("k_max", "must be positive");
    }
    if (kmeans_restarts == 0) {
        bad("kmeans_restarts", "must be positive");
    }
    if (has_fedme && exchange && clustering && unlabeled < schedule.k_max) {
        bad("unlabeled", "the pool must hold at least k_max rows");
    }
    if (has_fedme && unlabeled == 0) {
        bad("unlabeled", "fedme needs a nonempty unlabeled pool");
    }
    if (hypcluster_q < 2) {
        bad("hypcluster_q", "must be at least 2");
    }
    if (repeats == 0) {
        bad("repeats", "must be at least 1");
    }
    if (threads == 0) {
        bad("threads", "must be at least 1");
    }
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
    ExperimentConfig config;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        const std::string body = trim(std::string_view(line).substr(0, hash));
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(std::string_view(body).substr(0, eq));
        const std::string value = trim(std::string_view(body).substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(source + ":" + std::to_string(line_no) + ": missing key");
        }
        try {
            apply_setting(config, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    config.validate();
    return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path.string());
}

std::string to_config_text(const ExperimentConfig& c) {
    std::ostringstream s;
    s << "algorithm = ";
    for (std::size_t k = 0; k < c.algorithms.size(); ++k) {
        s << (k ? "," : "") << to_string(c.algorithms[k]);
    }
    s << "\nnum_clients = " << c.num_clients << "\nT = " << c.rounds << "\nE = " << c.local_epochs
      << "\nbatch_size = " << c.batch_size << "\nlr = " << real(c.lr);
    for (const auto& [a, rate] : c.lr_by_algorithm) {
        s << "\nlr." << to_string(a) << " = " << real(rate);
    }
    if (c.fine_tune_lr) {
        s << "\nfine_tune_lr = " << real(*c.fine_tune_lr);
    }
    s << "\nmomentum = " << real(c.momentum) << "\nweight_decay = " << real(c.weight_decay)
      << "\ndata = " << c.data << "\nclasses = " << c.synthetic.num_classes
      << "\nfeatures = " << c.synthetic.dim << "\nper_class = " << c.synthetic.per_class
      << "\nseparation = " << real(c.synthetic.separation) << "\nnoise = " << real(c.synthetic.noise)
      << "\nalpha_label = " << (c.alpha_label ? real(*c.alpha_label) : "iid")
      << "\nalpha_size = " << real(c.alpha_size) << "\nsplit = " << real(c.split.train) << ","
      << real(c.split.validation) << "," << real(c.split.test) << "\nunlabeled = " << c.unlabeled
      << "\nmodels = ";
    for (std::size_t k = 0; k < c.model_menu.size(); ++k) {
        s << (k ? ";" : "") << join(c.model_menu[k], ',');
    }
    s << "\nactivation = " << to_string(c.activation) << "\ninit_policy = " << to_string(c.init_policy)
      << "\ninit_index = " << c.init_index << "\nprobe_epochs = " << c.probe_epochs
      << "\ncluster_thresholds = " << join(c.schedule.thresholds, ',') << "\nk_max = " << c.schedule.k_max
      << "\nkmeans_restarts = " << c.kmeans_restarts << "\ntuning = " << (c.tuning ? "true" : "false")
      << "\ndml = " << (c.dml ? "true" : "false") << "\nclustering = " << (c.clustering ? "true" : "false")
      << "\nexchange = " << (c.exchange ? "true" : "false") << "\nfine_tune_epochs = " << c.fine_tune_epochs
      << "\nhypcluster_q = " << c.hypcluster_q
      << "\nhypcluster_metric = " << (c.hypcluster_by_accuracy ? "accuracy" : "loss")
      << "\nfedavg_weighting = " << (c.fedavg_weight_by_samples ? "samples" : "uniform")
      << "\nrepeats = " << c.repeats << "\nseed = " << c.seed
      << "\nstd = " << (c.sample_std ? "sample" : "population") << "\nthreads = " << c.threads
      << "\nrecord_timing = " << (c.record_timing ? "true" : "false") << "\n";
    return s.str();
}

}  // namespace fedme

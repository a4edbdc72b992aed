#include "fedme/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

#include "fedme/io.hpp"
#include "fedme/random.hpp"

namespace fedme {

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
    Dataset out;
    out.num_classes = num_classes;
    out.features = features.select_rows(rows);
    out.labels.reserve(rows.size());
    for (std::size_t r : rows) {
        out.labels.push_back(labels[r]);
    }
    return out;
}

std::vector<std::size_t> Dataset::label_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (int y : labels) {
        ++counts[static_cast<std::size_t>(y)];
    }
    return counts;
}

void Dataset::validate() const {
    if (features.rows() != labels.size()) {
        throw std::invalid_argument("dataset: feature rows and labels differ in count");
    }
    if (num_classes < 2) {
        throw std::invalid_argument("dataset: need at least 2 classes");
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw std::invalid_argument("dataset: label out of range");
        }
    }
}

Dataset concatenate(std::span<const Dataset* const> parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concatenate: nothing to concatenate");
    }
    Dataset out;
    out.num_classes = parts.front()->num_classes;
    const std::size_t dim = parts.front()->dim();
    std::vector<double> values;
    for (const Dataset* p : parts) {
        if (p->dim() != dim || p->num_classes != out.num_classes) {
            throw std::invalid_argument("concatenate: datasets disagree on shape");
        }
        values.insert(values.end(), p->features.data().begin(), p->features.data().end());
        out.labels.insert(out.labels.end(), p->labels.begin(), p->labels.end());
    }
    out.features = Matrix(out.labels.size(), dim, std::move(values));
    return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.num_classes < 2 || spec.dim < 2) {
        throw std::invalid_argument("generate_synthetic: need M >= 2 and d >= 2");
    }
    Rng rng(derive_seed(seed, Stream::data));
    std::vector<std::vector<double>> means(spec.num_classes, std::vector<double>(spec.dim));
    for (auto& mean : means) {
        double norm = 0.0;
        do {
            norm = 0.0;
            for (double& v : mean) {
                v = rng.normal();
                norm += v * v;
            }
            norm = std::sqrt(norm);
        } while (norm < 1e-12);
        for (double& v : mean) {
            v *= spec.separation / norm;
        }
    }
    Dataset out;
    out.num_classes = spec.num_classes;
    out.features = Matrix(spec.num_classes * spec.per_class, spec.dim);
    out.labels.reserve(spec.num_classes * spec.per_class);
    std::size_t r = 0;
    for (std::size_t m = 0; m < spec.num_classes; ++m) {
        for (std::size_t k = 0; k < spec.per_class; ++k, ++r) {
            auto row = out.features.row(r);
            for (std::size_t c = 0; c < spec.dim; ++c) {
                row[c] = means[m][c] + spec.noise * rng.normal();
            }
            out.labels.push_back(static_cast<int>(m));
        }
    }
    return out;
}

std::vector<std::size_t> largest_remainder(std::size_t total, std::span<const double> weights) {
    if (weights.empty()) {
        throw std::invalid_argument("largest_remainder: no weights");
    }
    const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(sum > 0.0)) {
        throw std::invalid_argument("largest_remainder: weights must have a positive sum");
    }
    std::vector<std::size_t> shares(weights.size());
    std::vector<double> remainders(weights.size());
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const double exact = static_cast<double>(total) * weights[k] / sum;
        shares[k] = static_cast<std::size_t>(std::floor(exact));
        remainders[k] = exact - static_cast<double>(shares[k]);
        assigned += shares[k];
    }
    // Floating error can push the floor sum past the total; trim from the end.
    for (std::size_t k = weights.size(); assigned > total && k-- > 0;) {
        while (shares[k] > 0 && assigned > total) {
            --shares[k];
            --assigned;
        }
    }
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
    for (std::size_t k = 0; assigned < total; k = (k + 1) % order.size()) {
        ++shares[order[k]];
        ++assigned;
    }
    return shares;
}

std::vector<std::vector<std::size_t>> dirichlet_partition(const Dataset& data,
                                                          const PartitionSpec& spec) {
    const std::size_t n = data.size();
    const std::size_t clients = spec.num_clients;
    const std::size_t classes = data.num_classes;
    if (clients == 0) {
        throw std::invalid_argument("dirichlet_partition: num_clients must be positive");
    }
    if (n < clients * classes) {
        throw std::invalid_argument("dirichlet_partition: infeasible, " + std::to_string(n) +
                                    " rows cannot give " + std::to_string(clients) +
                                    " clients at least " + std::to_string(classes) + " rows each");
    }
    Rng rng(derive_seed(spec.seed, Stream::partition));
    std::vector<std::vector<std::size_t>> parts(clients);

    if (spec.iid()) {
        std::vector<std::size_t> rows(n);
        std::iota(rows.begin(), rows.end(), 0);
        rng.shuffle(rows);
        std::size_t pos = 0;
        for (std::size_t i = 0; i < clients; ++i) {
            const std::size_t take = n / clients + (i < n % clients ? 1 : 0);
            parts[i].assign(rows.begin() + static_cast<std::ptrdiff_t>(pos),
                            rows.begin() + static_cast<std::ptrdiff_t>(pos + take));
            pos += take;
            std::sort(parts[i].begin(), parts[i].end());
        }
        return parts;
    }

    const double alpha_label = *spec.alpha_label;
    if (!(alpha_label > 0.0) || !(spec.alpha_size > 0.0)) {
        throw std::invalid_argument("dirichlet_partition: alphas must be positive");
    }

    // Stage 1: per-client size quotas, each at least `classes`.
    const auto size_weights = rng.dirichlet(spec.alpha_size, clients);
    auto quota = largest_remainder(n, size_weights);
    for (;;) {
        const auto low = std::min_element(quota.begin(), quota.end());
        if (*low >= classes) {
            break;
        }
        const auto high = std::max_element(quota.begin(), quota.end());
        --*high;
        ++*low;
    }

    // Stage 2: spread each class over the clients by Dirichlet proportions.
    std::vector<std::vector<std::size_t>> rows_of_class(classes);
    for (std::size_t r = 0; r < n; ++r) {
        rows_of_class[static_cast<std::size_t>(data.labels[r])].push_back(r);
    }
    // held[client][class] = rows
    std::vector<std::vector<std::vector<std::size_t>>> held(
        clients, std::vector<std::vector<std::size_t>>(classes));
    for (std::size_t c = 0; c < classes; ++c) {
        auto& rows = rows_of_class[c];
        rng.shuffle(rows);
        const auto props = rng.dirichlet(alpha_label, clients);
        const auto counts = largest_remainder(rows.size(), props);
        std::size_t pos = 0;
        for (std::size_t i = 0; i < clients; ++i) {
            held[i][c].assign(rows.begin() + static_cast<std::ptrdiff_t>(pos),
                              rows.begin() + static_cast<std::ptrdiff_t>(pos + counts[i]));
            pos += counts[i];
        }
    }

    // Stage 3: repair against the quotas, one row at a time. The most
    // over-full client donates a row of its most represented class to the
    // most under-full client.
    std::vector<std::size_t> size(clients, 0);
    for (std::size_t i = 0; i < clients; ++i) {
        for (const auto& rows : held[i]) {
            size[i] += rows.size();
        }
    }
    for (;;) {
        std::size_t donor = clients;
        std::size_t excess = 0;
        std::size_t recipient = clients;
        std::size_t deficit = 0;
        for (std::size_t i = 0; i < clients; ++i) {
            if (size[i] > quota[i] && size[i] - quota[i] > excess) {
                excess = size[i] - quota[i];
                donor = i;
            }
            if (size[i] < quota[i] && quota[i] - size[i] > deficit) {
                deficit = quota[i] - size[i];
                recipient = i;
            }
        }
        if (donor == clients) {
            break;
        }
        std::size_t cls = 0;
        for (std::size_t c = 1; c < classes; ++c) {
            if (held[donor][c].size() > held[donor][cls].size()) {
                cls = c;
            }
        }
        held[recipient][cls].push_back(held[donor][cls].back());
        held[donor][cls].pop_back();
        --size[donor];
        ++size[recipient];
    }

    for (std::size_t i = 0; i < clients; ++i) {
        for (const auto& rows : held[i]) {
            parts[i].insert(parts[i].end(), rows.begin(), rows.end());
        }
        std::sort(parts[i].begin(), parts[i].end());
    }
    return parts;
}

double mean_label_skew(const Dataset& data, std::span<const std::vector<std::size_t>> parts) {
    const std::size_t classes = data.num_classes;
    std::vector<double> global(classes, 0.0);
    double total = 0.0;
    for (const auto& part : parts) {
        for (std::size_t r : part) {
            global[static_cast<std::size_t>(data.labels[r])] += 1.0;
            total += 1.0;
        }
    }
    if (parts.empty() || total == 0.0) {
        return 0.0;
    }
    for (double& g : global) {
        g /= total;
    }
    double skew = 0.0;
    for (const auto& part : parts) {
        std::vector<double> local(classes, 0.0);
        for (std::size_t r : part) {
            local[static_cast<std::size_t>(data.labels[r])] += 1.0;
        }
        double tv = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            const double share = part.empty() ? 0.0 : local[c] / static_cast<double>(part.size());
            tv += std::abs(share - global[c]);
        }
        skew += 0.5 * tv;
    }
    return skew / static_cast<double>(parts.size());
}

ClientShard split_shard(const Dataset& data, std::span<const std::size_t> indices,
                        const SplitRatios& ratios, std::uint64_t seed, std::size_t client_id) {
    if (ratios.train < 0.0 || ratios.validation < 0.0 || ratios.test < 0.0) {
        throw std::invalid_argument("split_shard: ratios must be nonnegative");
    }
    std::vector<std::size_t> rows(indices.begin(), indices.end());
    Rng rng(seed);
    rng.shuffle(rows);
    const std::array<double, 3> weights{ratios.train, ratios.validation, ratios.test};
    const auto sizes = largest_remainder(rows.size(), weights);
    if (sizes[0] == 0 || sizes[1] == 0 || sizes[2] == 0) {
        throw std::invalid_argument("split_shard: client " + std::to_string(client_id) + " with " +
                                    std::to_string(rows.size()) +
                                    " rows leaves an empty train/validation/test partition");
    }
    const auto at = [&](std::size_t k) { return rows.begin() + static_cast<std::ptrdiff_t>(k); };
    const std::vector<std::size_t> train(at(0), at(sizes[0]));
    const std::vector<std::size_t> val(at(sizes[0]), at(sizes[0] + sizes[1]));
    const std::vector<std::size_t> test(at(sizes[0] + sizes[1]), rows.end());
    ClientShard shard;
    shard.client_id = client_id;
    shard.train = data.subset(train);
    shard.validation = data.subset(val);
    shard.test = data.subset(test);
    return shard;
}

UnlabeledSplit extract_unlabeled(const Dataset& data, std::size_t count, std::uint64_t seed) {
    if (count >= data.size()) {
        throw std::invalid_argument("extract_unlabeled: count " + std::to_string(count) +
                                    " must be below the dataset size " +
                                    std::to_string(data.size()));
    }
    std::vector<std::size_t> rows(data.size());
    std::iota(rows.begin(), rows.end(), 0);
    Rng rng(derive_seed(seed, Stream::unlabeled));
    // Partial Fisher-Yates: the first `count` slots are the sample.
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t j = k + rng.index(rows.size() - k);
        std::swap(rows[k], rows[j]);
    }
    UnlabeledSplit out;
    out.pool_rows.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(out.pool_rows.begin(), out.pool_rows.end());
    std::vector<bool> taken(data.size(), false);
    for (std::size_t r : out.pool_rows) {
        taken[r] = true;
    }
    std::vector<std::size_t> rest;
    rest.reserve(data.size() - count);
    for (std::size_t r = 0; r < data.size(); ++r) {
        if (!taken[r]) {
            rest.push_back(r);
        }
    }
    out.pool.features = data.features.select_rows(out.pool_rows);
    out.remainder = data.subset(rest);
    return out;
}

namespace {

std::runtime_error csv_error(const std::filesystem::path& path, std::size_t line,
                             const std::string& what) {
    return std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + what);
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) {
        text.remove_prefix(1);
    }
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
        text.remove_suffix(1);
    }
    if (text.empty()) {
        return false;
    }
    if (text.front() == '+') {
        text.remove_prefix(1);
    }
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc() && ptr == text.data() + text.size();
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw csv_error(path, 1, "missing header '# M=<int> d=<int>'");
    }
    long long classes = -1;
    long long dim = -1;
    {
        std::istringstream header(line);
        std::string hash;
        std::string m_tok;
        std::string d_tok;
        header >> hash >> m_tok >> d_tok;
        if (hash != "#" || m_tok.rfind("M=", 0) != 0 || d_tok.rfind("d=", 0) != 0 ||
            !parse_number(std::string_view(m_tok).substr(2), classes) ||
            !parse_number(std::string_view(d_tok).substr(2), dim) || classes < 2 || dim < 1) {
            throw csv_error(path, 1, "malformed header, expected '# M=<int> d=<int>'");
        }
    }
    Dataset out;
    out.num_classes = static_cast<std::size_t>(classes);
    std::vector<double> values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        for (;;) {
            const auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) {
                break;
            }
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() != static_cast<std::size_t>(dim) + 1) {
            throw csv_error(path, line_no,
                            "expected " + std::to_string(dim + 1) + " fields, found " +
                                std::to_string(fields.size()));
        }
        for (long long c = 0; c < dim; ++c) {
            double v = 0.0;
            if (!parse_number(fields[static_cast<std::size_t>(c)], v)) {
                throw csv_error(path, line_no, "cannot parse feature " + std::to_string(c + 1));
            }
            values.push_back(v);
        }
        long long label = 0;
        if (!parse_number(fields.back(), label)) {
            throw csv_error(path, line_no, "cannot parse label");
        }
        if (label < 0 || label >= classes) {
            throw csv_error(path, line_no,
                            "label " + std::to_string(label) + " outside [0, " +
                                std::to_string(classes) + ")");
        }
        out.labels.push_back(static_cast<int>(label));
    }
    if (out.labels.empty()) {
        throw csv_error(path, line_no, "no data rows");
    }
    out.features = Matrix(out.labels.size(), static_cast<std::size_t>(dim), std::move(values));
    return out;
}

std::string to_csv(const Dataset& data) {
    std::string out = "# M=" + std::to_string(data.num_classes) + " d=" + std::to_string(data.dim()) + "\n";
    for (std::size_t r = 0; r < data.size(); ++r) {
        for (double v : data.features.row(r)) {
            out += format_g(v, 17);
            out += ',';
        }
        out += std::to_string(data.labels[r]);
        out += '\n';
    }
    return out;
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
    write_file_atomic(path, to_csv(data));
}

}  // namespace fedme

#include "fedme/clustering.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

#include "fedme/random.hpp"

namespace fedme {

namespace {

constexpr std::size_t kMaxIterations = 100;
constexpr double kShiftTolerance = 1e-9;

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

Matrix centroids_of(const Matrix& points, std::span<const std::size_t> assign, std::size_t k,
                    const Matrix& fallback) {
    Matrix c(k, points.cols());
    std::vector<std::size_t> count(k, 0);
    for (std::size_t r = 0; r < points.rows(); ++r) {
        auto dst = c.row(assign[r]);
        auto src = points.row(r);
        for (std::size_t j = 0; j < src.size(); ++j) {
            dst[j] += src[j];
        }
        ++count[assign[r]];
    }
    for (std::size_t q = 0; q < k; ++q) {
        auto dst = c.row(q);
        if (count[q] == 0) {
            auto src = fallback.row(q);
            std::copy(src.begin(), src.end(), dst.begin());
            continue;
        }
        for (double& v : dst) {
            v /= static_cast<double>(count[q]);
        }
    }
    return c;
}

void assign_nearest(const Matrix& points, const Matrix& centers, std::vector<std::size_t>& assign) {
    for (std::size_t r = 0; r < points.rows(); ++r) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t q = 0; q < centers.rows(); ++q) {
            const double d = sq_dist(points.row(r), centers.row(q));
            if (d < best_d) {
                best_d = d;
                best = q;
            }
        }
        assign[r] = best;
    }
}

// Gives every empty cluster the point farthest from its current centroid,
// drawn from clusters that can spare one.
void repair_empty(const Matrix& points, Matrix& centers, std::vector<std::size_t>& assign) {
    const std::size_t k = centers.rows();
    std::vector<std::size_t> count(k, 0);
    for (std::size_t a : assign) {
        ++count[a];
    }
    for (std::size_t q = 0; q < k; ++q) {
        if (count[q] != 0) {
            continue;
        }
        std::size_t far = points.rows();
        double far_d = -1.0;
        for (std::size_t r = 0; r < points.rows(); ++r) {
            if (count[assign[r]] < 2) {
                continue;
            }
            const double d = sq_dist(points.row(r), centers.row(assign[r]));
            if (d > far_d) {
                far_d = d;
                far = r;
            }
        }
        --count[assign[far]];
        assign[far] = q;
        ++count[q];
        auto src = points.row(far);
        std::copy(src.begin(), src.end(), centers.row(q).begin());
    }
}

Matrix plus_plus_seeds(const Matrix& points, std::size_t k, Rng& rng) {
    const std::size_t n = points.rows();
    Matrix centers(k, points.cols());
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t pick = rng.index(n);
    for (std::size_t q = 0; q < k; ++q) {
        if (q > 0) {
            double total = 0.0;
            for (double v : d2) {
                total += v;
            }
            if (total > 0.0) {
                double target = rng.uniform() * total;
                pick = n - 1;
                for (std::size_t r = 0; r < n; ++r) {
                    target -= d2[r];
                    if (target < 0.0) {
                        pick = r;
                        break;
                    }
                }
                // Guard against landing on a zero-weight row through rounding.
                while (d2[pick] == 0.0 && pick > 0) {
                    --pick;
                }
            } else {
                pick = rng.index(n);
            }
        }
        auto src = points.row(pick);
        std::copy(src.begin(), src.end(), centers.row(q).begin());
        for (std::size_t r = 0; r < n; ++r) {
            d2[r] = std::min(d2[r], sq_dist(points.row(r), centers.row(q)));
        }
    }
    return centers;
}

std::vector<std::size_t> relabel_by_appearance(std::span<const std::size_t> assign, std::size_t k) {
    std::vector<std::size_t> map(k, k);
    std::size_t next = 0;
    std::vector<std::size_t> out(assign.size());
    for (std::size_t r = 0; r < assign.size(); ++r) {
        if (map[assign[r]] == k) {
            map[assign[r]] = next++;
        }
        out[r] = map[assign[r]];
    }
    return out;
}

}  // namespace

double partition_inertia(const Matrix& points, std::span<const std::size_t> assignments,
                         std::size_t k) {
    const Matrix centers = centroids_of(points, assignments, k, Matrix(k, points.cols()));
    double total = 0.0;
    for (std::size_t r = 0; r < points.rows(); ++r) {
        total += sq_dist(points.row(r), centers.row(assignments[r]));
    }
    return total;
}

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t restarts) {
    const std::size_t n = points.rows();
    if (k == 0) {
        throw std::invalid_argument("kmeans: k must be positive");
    }
    if (k > n) {
        throw std::invalid_argument("kmeans: k = " + std::to_string(k) + " exceeds the " +
                                    std::to_string(n) + " points");
    }
    restarts = std::max<std::size_t>(restarts, 1);

    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (std::size_t run = 0; run < restarts; ++run) {
        Rng rng(derive_seed(seed, Stream::kmeans, {run}));
        Matrix centers = plus_plus_seeds(points, k, rng);
        std::vector<std::size_t> assign(n, 0);
        for (std::size_t it = 0; it < kMaxIterations; ++it) {
            assign_nearest(points, centers, assign);
            repair_empty(points, centers, assign);
            Matrix next = centroids_of(points, assign, k, centers);
            double shift = 0.0;
            for (std::size_t q = 0; q < k; ++q) {
                shift = std::max(shift, sq_dist(next.row(q), centers.row(q)));
            }
            centers = std::move(next);
            if (shift < kShiftTolerance * kShiftTolerance) {
                break;
            }
        }
        assign_nearest(points, centers, assign);
        repair_empty(points, centers, assign);
        const double inertia = partition_inertia(points, assign, k);
        if (inertia < best.inertia) {
            best.inertia = inertia;
            best.assignments = std::move(assign);
        }
    }
    best.assignments = relabel_by_appearance(best.assignments, k);
    return best;
}

Matrix model_outputs_on_unlabeled(std::span<const Model* const> models, const UnlabeledPool& pool) {
    if (pool.size() == 0) {
        throw std::invalid_argument("model outputs: unlabeled pool is empty");
    }
    if (models.empty()) {
        throw std::invalid_argument("model outputs: no models");
    }
    const std::size_t classes = models.front()->arch.num_classes;
    Matrix out(models.size(), pool.size() * classes);
    for (std::size_t i = 0; i < models.size(); ++i) {
        if (!models[i]->arch.exchange_compatible(models.front()->arch)) {
            throw std::invalid_argument("model outputs: models disagree on input or class count");
        }
        const Matrix probs = forward(*models[i], pool.features);
        std::copy(probs.data().begin(), probs.data().end(), out.row(i).begin());
    }
    return out;
}

std::size_t cluster_count(std::size_t round, const ClusterSchedule& schedule,
                          std::size_t num_clients) {
    std::size_t k = 1;
    for (std::size_t threshold : schedule.thresholds) {
        if (threshold <= round) {
            ++k;
        }
    }
    k = std::min(k, std::max<std::size_t>(schedule.k_max, 1));
    return std::max<std::size_t>(std::min(k, num_clients), 1);
}

std::size_t ExchangePlan::receivers_of(std::size_t i) const {
    return static_cast<std::size_t>(std::count(donor.begin(), donor.end(), i));
}

void ExchangePlan::validate() const {
    if (cluster_of.size() != donor.size()) {
        throw std::invalid_argument("exchange plan: donor and cluster maps differ in size");
    }
    for (std::size_t i = 0; i < donor.size(); ++i) {
        if (donor[i] == i || donor[i] >= donor.size()) {
            throw std::invalid_argument("exchange plan: invalid donor for client " +
                                        std::to_string(i));
        }
    }
}

ExchangePlan assign_exchanges(std::span<const std::size_t> cluster_of, std::size_t round,
                              std::uint64_t seed) {
    const std::size_t n = cluster_of.size();
    if (n < 2) {
        throw std::invalid_argument("assign_exchanges: need at least two clients");
    }
    ExchangePlan plan;
    plan.round = round;
    plan.cluster_of.assign(cluster_of.begin(), cluster_of.end());
    plan.k = *std::max_element(cluster_of.begin(), cluster_of.end()) + 1;
    plan.donor.resize(n);
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < n; ++i) {
        candidates.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i && cluster_of[j] == cluster_of[i]) {
                candidates.push_back(j);
            }
        }
        if (candidates.empty()) {
            for (std::size_t j = 0; j < n; ++j) {
                if (j != i) {
                    candidates.push_back(j);
                }
            }
        }
        Rng rng(derive_seed(seed, Stream::exchange, {round, i}));
        plan.donor[i] = candidates[rng.index(candidates.size())];
    }
    return plan;
}

}  // namespace fedme

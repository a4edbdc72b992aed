#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace fedme {

/// Named RNG streams. Every random draw in the simulator comes from a stream
/// derived from (master seed, stream, indices...), so results never depend on
/// the order in which clients are scheduled.
enum class Stream : std::uint64_t {
    init = 1,
    batch,
    kmeans,
    exchange,
    data,
    partition,
    split,
    unlabeled,
    finetune,
    probe,
    hypcluster,
    global_model,
    probe_batch,
};

std::uint64_t splitmix64(std::uint64_t x);

std::uint64_t derive_seed(std::uint64_t base, Stream stream,
                          std::initializer_list<std::uint64_t> indices = {});

/// Seeded generator with portable distributions. The standard library's
/// distribution objects are implementation-defined, so every sampler used
/// by the simulator is written out here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::size_t index(std::size_t n);

    double normal();

    double gamma(double shape);

    std::vector<double> dirichlet(double alpha, std::size_t k);

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(items[i - 1], items[j]);
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        shuffle(std::span<T>(items));
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace fedme

#include "fedme/training.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "fedme/random.hpp"

namespace fedme {

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::uint64_t seed) {
    if (batch_size == 0) {
        throw std::invalid_argument("make_batches: batch_size must be positive");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t pos = 0; pos < n; pos += batch_size) {
        const std::size_t end = std::min(n, pos + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

void train_epoch_ce(Model& model, const Dataset& data, const TrainOptions& opts,
                    std::uint64_t seed) {
    for (const auto& batch : make_batches(data.size(), opts.batch_size, seed)) {
        const Matrix x = data.features.select_rows(batch);
        std::vector<int> y;
        y.reserve(batch.size());
        for (std::size_t r : batch) {
            y.push_back(data.labels[r]);
        }
        const auto lg = ce_loss_and_grad(model, x, y);
        sgd_step(model, lg.grad, opts.sgd);
    }
}

Model fine_tune(Model model, const Dataset& train, std::size_t epochs, const TrainOptions& opts,
                std::uint64_t seed) {
    if (epochs == 0) {
        return model;
    }
    model.reset_momentum();
    for (std::size_t e = 0; e < epochs; ++e) {
        train_epoch_ce(model, train, opts, derive_seed(seed, Stream::finetune, {e}));
    }
    return model;
}

std::uint64_t batch_seed(std::uint64_t master, std::size_t client, std::size_t epoch) {
    return derive_seed(master, Stream::batch, {client, epoch});
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) {
                    error = std::current_exception();
                }
            }
        }
    };
    std::vector<std::jthread> pool;
    const std::size_t count = std::min(threads, n);
    pool.reserve(count);
    for (std::size_t t = 0; t < count; ++t) {
        pool.emplace_back(worker);
    }
    pool.clear();
    if (error) {
        std::rethrow_exception(error);
    }
}

}  // namespace fedme

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fedme/data.hpp"
#include "fedme/nn.hpp"

namespace fedme {

struct TrainOptions {
    std::size_t batch_size = 20;
    SgdOptions sgd;
};

/// Seeded shuffle of [0, n) cut into consecutive batches; the last batch
/// may be short.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::uint64_t seed);

/// One epoch of plain cross-entropy SGD.
void train_epoch_ce(Model& model, const Dataset& data, const TrainOptions& opts,
                    std::uint64_t seed);

/// Post-federation local retraining: CE only, fresh optimizer state, one
/// seeded epoch after another.
Model fine_tune(Model model, const Dataset& train, std::size_t epochs, const TrainOptions& opts,
                std::uint64_t seed);

/// Batch-order seed for epoch `epoch` of client `client`. Shared by every
/// algorithm so degenerate configurations line up batch for batch.
std::uint64_t batch_seed(std::uint64_t master, std::size_t client, std::size_t epoch);

/// Runs fn(0..n-1), spreading indices over up to `threads` workers. Each
/// index must touch only its own state.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace fedme

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedme {

/// One row per client per round. Columns that do not apply to an algorithm
/// are left empty in the CSV.
struct RoundLogRow {
    std::size_t round = 0;
    std::size_t client = 0;
    std::optional<std::size_t> k;
    std::optional<std::size_t> cluster;
    std::optional<std::size_t> donor;
    std::optional<std::size_t> selection;
    std::optional<double> loss_p_train;
    std::optional<double> loss_ex_train;
    std::optional<double> loss_p_val;
    std::optional<double> loss_ex_val;
    double val_acc = 0.0;
    double test_acc = 0.0;
    double client_ms = 0.0;
    double server_ms = 0.0;
};

inline constexpr const char* kRoundLogHeader =
    "round,client,K,cluster,donor,a,loss_p_train,loss_ex_train,loss_p_val,loss_ex_val,val_acc,"
    "test_acc,client_ms,server_ms";

/// Header plus one line per row; reals as %.6g.
std::string round_log_csv(std::span<const RoundLogRow> rows);

/// Parses a RoundLog CSV (used by tests and the Python bindings).
std::vector<RoundLogRow> parse_round_log_csv(const std::string& text);

}  // namespace fedme

#include "fedme/round_log.hpp"

#include <sstream>
#include <stdexcept>

#include "fedme/io.hpp"

namespace fedme {

namespace {

void put(std::string& out, const std::optional<std::size_t>& v) {
    if (v) {
        out += std::to_string(*v);
    }
}

void put(std::string& out, const std::optional<double>& v) {
    if (v) {
        out += format_g(*v, 6);
    }
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

std::optional<std::size_t> get_index(const std::string& s) {
    if (s.empty()) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(std::stoull(s));
}

std::optional<double> get_real(const std::string& s) {
    if (s.empty()) {
        return std::nullopt;
    }
    return std::stod(s);
}

}  // namespace

std::string round_log_csv(std::span<const RoundLogRow> rows) {
    std::string out = kRoundLogHeader;
    out += '\n';
    for (const auto& r : rows) {
        out += std::to_string(r.round);
        out += ',';
        out += std::to_string(r.client);
        out += ',';
        put(out, r.k);
        out += ',';
        put(out, r.cluster);
        out += ',';
        put(out, r.donor);
        out += ',';
        put(out, r.selection);
        out += ',';
        put(out, r.loss_p_train);
        out += ',';
        put(out, r.loss_ex_train);
        out += ',';
        put(out, r.loss_p_val);
        out += ',';
        put(out, r.loss_ex_val);
        out += ',';
        out += format_g(r.val_acc, 6);
        out += ',';
        out += format_g(r.test_acc, 6);
        out += ',';
        out += format_g(r.client_ms, 6);
        out += ',';
        out += format_g(r.server_ms, 6);
        out += '\n';
    }
    return out;
}

std::vector<RoundLogRow> parse_round_log_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || split_fields(line).size() != 14 ||
        line.rfind("round,client,", 0) != 0) {
        throw std::runtime_error("round log: missing or malformed header");
    }
    std::vector<RoundLogRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto f = split_fields(line);
        if (f.size() != 14) {
            throw std::runtime_error("round log: line " + std::to_string(line_no) +
                                     " has " + std::to_string(f.size()) + " fields");
        }
        RoundLogRow r;
        r.round = std::stoull(f[0]);
        r.client = std::stoull(f[1]);
        r.k = get_index(f[2]);
        r.cluster = get_index(f[3]);
        r.donor = get_index(f[4]);
        r.selection = get_index(f[5]);
        r.loss_p_train = get_real(f[6]);
        r.loss_ex_train = get_real(f[7]);
        r.loss_p_val = get_real(f[8]);
        r.loss_ex_val = get_real(f[9]);
        r.val_acc = std::stod(f[10]);
        r.test_acc = std::stod(f[11]);
        r.client_ms = std::stod(f[12]);
        r.server_ms = std::stod(f[13]);
        rows.push_back(r);
    }
    return rows;
}

}  // namespace fedme

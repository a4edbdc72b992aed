#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedme {

/// Writes through a sibling temp file and renames it into place, so readers
/// never observe a partially written file. Errors name the path.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// printf-style "%.<digits>g".
std::string format_g(double value, int digits);

}  // namespace fedme

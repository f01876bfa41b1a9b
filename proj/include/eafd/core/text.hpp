#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace eafd {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

/// Whole-string decimal parse; nullopt on any trailing garbage. Accepts
/// "nan"/"inf" spellings, callers check finiteness.
std::optional<double> parse_double(std::string_view text);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

std::size_t edit_distance(std::string_view a, std::string_view b);

/// Minimal CSV: comma separated, optional double-quoted cells with "" escapes.
std::vector<std::string> split_csv_line(std::string_view line);
std::string csv_escape(std::string_view cell);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace eafd

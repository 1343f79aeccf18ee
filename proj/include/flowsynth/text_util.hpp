#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace flowsynth {

// Shortest decimal form that round-trips the exact double value.
std::string format_double(double v);

// Locale-independent numeric parsing; rejects trailing junk and empty
// fields. Accepts "inf"/"nan" spellings, which cleaning filters later.
std::optional<double> parse_double(std::string_view s);
std::optional<long long> parse_int(std::string_view s);
std::optional<unsigned long long> parse_uint(std::string_view s);

std::vector<std::string_view> split(std::string_view line, char sep);
std::string_view trim(std::string_view s);

} // namespace flowsynth

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace eegbridge::csv {

// Splits one comma-separated line. Fields are trimmed of surrounding blanks.
std::vector<std::string> split_line(std::string_view line);

// True for blank lines and '#' comment lines, which every reader skips.
bool is_skippable(std::string_view line);

// Parses a decimal floating-point field; returns false on malformed input.
bool parse_double(std::string_view field, double& out);

// Shortest representation that parses back to the identical double.
std::string format_double(double value);

std::string trim(std::string_view s);

}  // namespace eegbridge::csv

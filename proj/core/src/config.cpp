#include "eegbridge/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>

#include "eegbridge/csv.hpp"
#include "eegbridge/error.hpp"

namespace eegbridge {

namespace {

template <typename T>
T parse_integer(const std::string& key, const std::string& text) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    fail(ErrorCode::kInvalidConfig, "key '" + key + "': '" + text + "' is not an integer");
  }
  return value;
}

double parse_real(const std::string& key, const std::string& text) {
  double v = 0.0;
  if (!csv::parse_double(text, v)) fail(ErrorCode::kInvalidConfig, "key '" + key + "': '" + text + "' is not a number");
  return v;
}

}  // namespace

Config Config::parse(std::istream& in, const std::string& source_name) {
  Config cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto t = csv::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::kInvalidConfig, source_name + " line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = csv::trim(t.substr(0, eq));
    if (key.empty()) fail(ErrorCode::kInvalidConfig, source_name + " line " + std::to_string(line_no) + ": empty key");
    cfg.set(key, csv::trim(t.substr(eq + 1)));
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open config " + path.string());
  return parse(in, path.string());
}

void Config::set(const std::string& key, const std::string& value) { values_[key] = value; }

void Config::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) fail(ErrorCode::kInvalidConfig, "override '" + assignment + "' is not key=value");
  const auto key = csv::trim(assignment.substr(0, eq));
  if (key.empty()) fail(ErrorCode::kInvalidConfig, "override '" + assignment + "' has an empty key");
  set(key, csv::trim(assignment.substr(eq + 1)));
}

void Config::merge(const Config& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_real(key, it->second);
}

int Config::get_int(const std::string& key, int fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_integer<int>(key, it->second);
}

std::uint64_t Config::get_uint64(const std::string& key, std::uint64_t fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_integer<std::uint64_t>(key, it->second);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
  if (it->second == "false" || it->second == "0" || it->second == "no") return false;
  fail(ErrorCode::kInvalidConfig, "key '" + key + "': '" + it->second + "' is not a boolean");
}

std::vector<double> Config::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  for (const auto& f : csv::split_line(it->second)) out.push_back(parse_real(key, f));
  return out;
}

std::vector<int> Config::get_ints(const std::string& key, const std::vector<int>& fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<int> out;
  for (const auto& f : csv::split_line(it->second)) out.push_back(parse_integer<int>(key, f));
  return out;
}

std::vector<std::string> Config::get_strings(const std::string& key, const std::vector<std::string>& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : csv::split_line(it->second);
}

void Config::require_known(const std::vector<std::string>& known) const {
  for (const auto& [k, v] : values_) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      fail(ErrorCode::kInvalidConfig, "unknown config key '" + k + "'");
    }
  }
}

std::string Config::echo() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
  return out.str();
}

}  // namespace eegbridge

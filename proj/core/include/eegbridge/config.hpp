#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace eegbridge {

// Flat `key = value` configuration. Dotted keys namespace modules, e.g.
// `sbp.epsilon` or `gan.lambda_var`. Later assignments override earlier ones.
class Config {
 public:
  static Config parse(std::istream& in, const std::string& source_name = "<config>");
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  // Parses "key=value".
  void set_override(const std::string& assignment);
  void merge(const Config& other);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_uint64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const;
  std::vector<std::string> get_strings(const std::string& key, const std::vector<std::string>& fallback) const;

  // Throws InvalidConfig naming the first key not in `known`.
  void require_known(const std::vector<std::string>& known) const;

  // Sorted `key = value` lines; parse(echo()) reproduces the config.
  std::string echo() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace eegbridge

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "eegbridge/config.hpp"

namespace eegbridge {

// Provenance record written next to every output: command, inputs, outputs,
// seeds, effective configuration and per-stage status.
class Manifest {
 public:
  Manifest(std::string command, std::filesystem::path path);

  void add_input(const std::filesystem::path& p) { inputs_.push_back(p.string()); }
  void add_output(const std::filesystem::path& p) { outputs_.push_back(p.string()); }
  void set_seed(const std::string& name, std::uint64_t value);
  void set_config(const Config& config) { config_ = config; }
  void set_note(const std::string& key, const std::string& value);

  void begin_stage(const std::string& name);
  void finish_stage();
  void fail_stage(const std::string& message);

  const std::filesystem::path& path() const noexcept { return path_; }
  // Writes the manifest; safe to call repeatedly as stages progress.
  void write() const;

 private:
  struct Stage {
    std::string name;
    std::string status;
    std::string message;
  };

  std::string command_;
  std::filesystem::path path_;
  std::string created_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
  std::vector<std::pair<std::string, std::uint64_t>> seeds_;
  std::vector<std::pair<std::string, std::string>> notes_;
  std::vector<Stage> stages_;
  Config config_;
};

}  // namespace eegbridge

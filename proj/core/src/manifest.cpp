#include "eegbridge/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include <json.hpp>

#include "eegbridge/error.hpp"
#include "eegbridge/version.hpp"

namespace eegbridge {

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

Manifest::Manifest(std::string command, std::filesystem::path path)
    : command_(std::move(command)), path_(std::move(path)), created_(utc_now()) {}

void Manifest::set_seed(const std::string& name, std::uint64_t value) {
  for (auto& [k, v] : seeds_) {
    if (k == name) {
      v = value;
      return;
    }
  }
  seeds_.emplace_back(name, value);
}

void Manifest::set_note(const std::string& key, const std::string& value) {
  for (auto& [k, v] : notes_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  notes_.emplace_back(key, value);
}

void Manifest::begin_stage(const std::string& name) {
  stages_.push_back({name, "running", {}});
  write();
}

void Manifest::finish_stage() {
  if (!stages_.empty()) stages_.back().status = "ok";
  write();
}

void Manifest::fail_stage(const std::string& message) {
  if (!stages_.empty()) {
    stages_.back().status = "failed";
    stages_.back().message = message;
  }
  write();
}

void Manifest::write() const {
  nlohmann::ordered_json j;
  j["tool"] = "eegbridge";
  j["version"] = kVersion;
  j["command"] = command_;
  j["created_utc"] = created_;
  j["inputs"] = inputs_;
  j["outputs"] = outputs_;
  auto seeds = nlohmann::ordered_json::object();
  for (const auto& [k, v] : seeds_) seeds[k] = v;
  j["seeds"] = seeds;
  auto config = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config_.values()) config[k] = v;
  j["config"] = config;
  auto notes = nlohmann::ordered_json::object();
  for (const auto& [k, v] : notes_) notes[k] = v;
  j["notes"] = notes;
  auto stages = nlohmann::ordered_json::array();
  std::string status = "ok";
  for (const auto& s : stages_) {
    nlohmann::ordered_json st;
    st["name"] = s.name;
    st["status"] = s.status;
    if (!s.message.empty()) st["message"] = s.message;
    stages.push_back(st);
    if (s.status == "failed") status = "failed";
    else if (s.status == "running" && status == "ok") status = "running";
  }
  j["stages"] = stages;
  j["status"] = status;

  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path_.string());
  out << j.dump(2) << '\n';
}

}  // namespace eegbridge

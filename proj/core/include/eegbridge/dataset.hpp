#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace eegbridge {

// Rows are samples, columns are features.
using FeatureMatrix = Eigen::MatrixXd;

// Task portion of a recording session. P1 is the baseline block.
enum class Portion : std::uint8_t { P1 = 0, P2 = 1, P3 = 2, P4 = 3 };

inline constexpr int kNumPortions = 4;
inline constexpr std::array<Portion, kNumPortions> kAllPortions = {Portion::P1, Portion::P2,
                                                                  Portion::P3, Portion::P4};

std::string_view to_string(Portion p);
// Accepts exactly "P1".."P4"; throws UnknownPortion otherwise.
Portion parse_portion(std::string_view label);
inline int index_of(Portion p) { return static_cast<int>(p); }

enum class FeatureSpace { kRaw, kNormalized };
std::string_view to_string(FeatureSpace s);

class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<std::string> names);

  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t dimension() const noexcept { return names_.size(); }

  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;

 private:
  std::vector<std::string> names_;
};

struct Sample {
  std::string participant;
  Portion portion = Portion::P1;
  Eigen::VectorXd features;
};

struct GroupKey {
  std::string participant;
  Portion portion = Portion::P1;

  friend bool operator==(const GroupKey&, const GroupKey&) = default;
};

// A validated collection of samples sharing one schema and one feature space.
class Dataset {
 public:
  Dataset() = default;
  Dataset(FeatureSchema schema, FeatureSpace space);

  const FeatureSchema& schema() const noexcept { return schema_; }
  FeatureSpace space() const noexcept { return space_; }
  const std::vector<Sample>& samples() const noexcept { return samples_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }

  // Retags the space, e.g. after loading a file that was written normalized.
  void assume_space(FeatureSpace space) noexcept { space_ = space; }

  // Validates dimension and finiteness before appending.
  void add(Sample sample);

  // Participants in order of first appearance.
  std::vector<std::string> participants() const;
  bool has_group(std::string_view participant, Portion portion) const;
  std::size_t group_size(std::string_view participant, Portion portion) const;

 private:
  FeatureSchema schema_;
  FeatureSpace space_ = FeatureSpace::kRaw;
  std::vector<Sample> samples_;
};

Dataset read_dataset(std::istream& in, const std::optional<FeatureSchema>& schema = std::nullopt,
                     const std::string& source_name = "<stream>");
Dataset load_dataset(const std::filesystem::path& path,
                     const std::optional<FeatureSchema>& schema = std::nullopt);
void write_dataset(std::ostream& out, const Dataset& dataset);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);

// Feature vectors of one (participant, portion) group, in file order.
FeatureMatrix group(const Dataset& dataset, std::string_view participant, Portion portion);

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;  // population convention (divide by n)
};

FeatureStats feature_statistics(const FeatureMatrix& samples);
FeatureStats feature_statistics(const Dataset& dataset);
FeatureStats feature_statistics(const Dataset& dataset, std::string_view participant,
                                Portion portion);

FeatureMatrix to_matrix(const Dataset& dataset);

}  // namespace eegbridge

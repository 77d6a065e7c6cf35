#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eegbridge/dataset.hpp"

namespace eegbridge {

inline constexpr double kDefaultNormalizationEps = 1e-6;

// Per-participant reference statistics of the baseline portion, in raw units.
struct BaselineStats {
  std::string participant;
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;
  double eps = kDefaultNormalizationEps;
  Portion baseline_portion = Portion::P1;
};

struct ClipRange {
  double lo = -5.0;
  double hi = 5.0;

  void validate() const;
  double mid() const { return 0.5 * (lo + hi); }
  double half_width() const { return 0.5 * (hi - lo); }
};

BaselineStats compute_baseline(const Dataset& dataset, const std::string& participant,
                               Portion baseline_portion = Portion::P1,
                               double eps = kDefaultNormalizationEps);

// clamp((x - mu) / (sigma + eps), lo, hi) per coordinate.
Eigen::VectorXd apply(const Eigen::VectorXd& x, const BaselineStats& stats, const ClipRange& clip);
// x_norm * (sigma + eps) + mu.
Eigen::VectorXd invert(const Eigen::VectorXd& x_norm, const BaselineStats& stats);

struct NormalizationResult {
  Dataset dataset;                    // normalized space
  std::vector<BaselineStats> stats;   // participant order of the input dataset
};

NormalizationResult normalize_dataset(const Dataset& dataset, Portion baseline_portion = Portion::P1,
                                      double eps = kDefaultNormalizationEps, const ClipRange& clip = {});

// Inverse transform of a whole normalized dataset back to raw units.
Dataset denormalize_dataset(const Dataset& normalized, const std::vector<BaselineStats>& stats);

const BaselineStats& find_stats(const std::vector<BaselineStats>& stats, const std::string& participant);

// Sidecar CSV: participant_id, mu_<feature>..., sigma_<feature>... with eps and
// baseline portion recorded on a leading '#' line.
void write_baseline_stats(std::ostream& out, const FeatureSchema& schema,
                          const std::vector<BaselineStats>& stats);
void save_baseline_stats(const std::filesystem::path& path, const FeatureSchema& schema,
                         const std::vector<BaselineStats>& stats);
std::vector<BaselineStats> read_baseline_stats(std::istream& in, const FeatureSchema& schema);
std::vector<BaselineStats> load_baseline_stats(const std::filesystem::path& path, const FeatureSchema& schema);

}  // namespace eegbridge

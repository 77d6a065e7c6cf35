#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eegbridge/config.hpp"
#include "eegbridge/dataset.hpp"
#include "eegbridge/gan.hpp"
#include "eegbridge/normalize.hpp"
#include "eegbridge/sbp.hpp"

namespace eegbridge {

// Synthetic cohort with known per-group Gaussians. Each participant draws a
// baseline mean and std per feature; portion k shifts the mean by
// drift_scale * drifts[k] and multiplies the variance by inflation[k].
struct VirtualCohortConfig {
  int num_participants = 10;
  int samples_per_portion = 200;
  std::vector<std::string> feature_names = {"theta", "alpha", "engagement"};
  double baseline_mean_lo = -3.0;
  double baseline_mean_hi = 3.0;
  double baseline_std_lo = 0.7;
  double baseline_std_hi = 1.4;
  double drift_scale_lo = 0.7;
  double drift_scale_hi = 1.3;
  // Mean shift of P1..P4 relative to baseline in raw feature units; P1 is zero.
  std::array<std::vector<double>, kNumPortions> drifts = {
      std::vector<double>{0.0, 0.0, 0.0}, std::vector<double>{0.4, 0.4, 0.4},
      std::vector<double>{0.8, 0.8, 0.8}, std::vector<double>{1.0, 1.0, 1.0}};
  std::array<double, kNumPortions> inflation = {1.0, 1.0, 1.0, 1.0};
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t dimension() const { return feature_names.size(); }
};

struct GaussianParams {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

struct CohortParticipant {
  std::string id;
  Eigen::VectorXd baseline_mean;
  Eigen::VectorXd baseline_std;
  double drift_scale = 1.0;
};

struct VirtualCohort {
  VirtualCohortConfig config;
  std::vector<CohortParticipant> participants;
  Dataset data;  // raw space

  // Generating distribution of one group, raw units.
  GaussianParams params(std::size_t participant, Portion portion) const;
  // Same distribution after exact z-scoring by the true baseline parameters.
  GaussianParams normalized_params(std::size_t participant, Portion portion) const;
  double oracle_energy(std::size_t participant, const Transition& t) const;
  double normalized_oracle_energy(std::size_t participant, const Transition& t) const;
};

// Participant ids are "s01", "s02", ...; rows are participant-major, then portion.
VirtualCohort generate_virtual_cohort(const VirtualCohortConfig& cfg);

// Fraction of participants whose sign of E(second) - E(first) agrees between
// the two tables. Differences below tie_tolerance in magnitude count as ties,
// which only match ties.
double direction_agreement(const EnergyTable& real, const EnergyTable& synth, const Transition& first,
                           const Transition& second, double tie_tolerance = 1e-12);

// Fraction of participants with E(second) > E(first) + tie_tolerance.
double direction_consistency(const EnergyTable& table, const Transition& first, const Transition& second,
                             double tie_tolerance = 1e-12);

// Spearman correlation with average ranks for ties; NaN when either column is constant.
double rank_correlation(const Eigen::VectorXd& real, const Eigen::VectorXd& synth);

// Kendall tau-b; NaN when either sequence is constant.
double kendall_tau(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

struct GroupSummary {
  double mean = 0.0;
  double std = 0.0;  // population

  friend bool operator==(const GroupSummary&, const GroupSummary&) = default;
};

GroupSummary group_summary(const Eigen::VectorXd& column);
GroupSummary group_summary(const EnergyTable& table, const Transition& t);

struct ComparisonReport {
  std::vector<std::string> participants;
  std::vector<Transition> transitions;
  Eigen::MatrixXd real;   // participants x transitions
  Eigen::MatrixXd synth;
  double direction_agreement = 0.0;      // over the first two transitions
  double real_direction_consistency = 0.0;
  double synth_direction_consistency = 0.0;
  std::vector<double> rank_correlation;  // per transition
  std::vector<GroupSummary> real_summary;
  std::vector<GroupSummary> synth_summary;
};

// Aligns the tables by participant id; throws ParticipantMismatch when the
// participant sets differ.
ComparisonReport compare(const EnergyTable& real, const EnergyTable& synth);

void write_comparison_json(std::ostream& out, const ComparisonReport& report);
void save_comparison_json(const std::filesystem::path& path, const ComparisonReport& report);
ComparisonReport read_comparison_json(std::istream& in);
ComparisonReport load_comparison_json(const std::filesystem::path& path);

struct FeatureHistogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<long> real;
  std::vector<long> synth;
};

struct FeatureReport {
  std::vector<std::string> names;
  FeatureStats real;
  FeatureStats synth;
  std::vector<FeatureHistogram> histograms;  // one per feature
};

inline constexpr int kHistogramBins = 50;

// Per-feature mean/std of both sources and fixed-bin histograms over the clip
// range. Throws SchemaMismatch when the schemas differ.
FeatureReport feature_report(const Dataset& real, const Dataset& synth, const ClipRange& clip = {},
                             int bins = kHistogramBins);

// feature,real_mean,real_std,gan_mean,gan_std at full precision.
void write_feature_report(std::ostream& out, const FeatureReport& report);
FeatureReport read_feature_report(std::istream& in);
// feature,source,bin,lo,hi,count
void write_feature_histograms(std::ostream& out, const FeatureReport& report);
// One row of the fixed-width table: "theta  0.0797  1.0866  0.1750  0.9550".
std::string format_feature_row(const std::string& name, double real_mean, double real_std, double gan_mean,
                               double gan_std);
void write_feature_table(std::ostream& out, const FeatureReport& report);

// Bar chart of group summaries and per-participant line chart, as SVG plus CSV.
void write_plots(const std::filesystem::path& dir, const ComparisonReport& report);

struct ExperimentConfig {
  std::optional<std::filesystem::path> dataset_path;  // raw CSV; otherwise a virtual cohort
  VirtualCohortConfig cohort;
  Portion baseline_portion = Portion::P1;
  double normalization_eps = kDefaultNormalizationEps;
  ClipRange clip;
  GeneratorConfig generator;
  CriticConfig critic;
  TrainConfig train;
  SBPConfig sbp;
  std::vector<Transition> transitions = default_transitions();
  std::uint64_t seed = 0;
  int threads = 1;
  bool strict = false;  // NotConverged solves fail the run
  std::filesystem::path output_dir;

  void validate() const;
};

// Keys understood by apply_config, e.g. "sbp.epsilon" or "train.generator_steps".
const std::vector<std::string>& experiment_config_keys();
// Applies recognized keys; throws InvalidConfig on unknown keys or bad values.
void apply_config(const Config& config, ExperimentConfig& cfg);
// Effective configuration as a flat key/value echo.
Config echo_config(const ExperimentConfig& cfg);

struct ExperimentResult {
  ComparisonReport report;
  EnergyTable real;
  EnergyTable synth;
  FeatureReport features;
  TrainingLog log;
  std::uint64_t cohort_seed = 0;
  std::uint64_t train_seed = 0;
  std::uint64_t generate_seed = 0;
};

// normalize -> train -> generate matched groups -> energy tables -> report.
// Every stage's artifacts are written to cfg.output_dir as it completes; on
// failure manifest.json names the failed stage and the error is rethrown.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const TrainObserver& observer = {});

}  // namespace eegbridge

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "eegbridge/dataset.hpp"
#include "eegbridge/harness.hpp"
#include "eegbridge/normalize.hpp"
#include "eegbridge/sbp.hpp"

namespace eegbridge {

struct WindowConfig {
  std::size_t window = 200;
  std::size_t stride = 50;
  SBPConfig sbp;
  bool warm_start = true;

  void validate() const;
};

// Ring buffer of the most recent normalized samples, scored against a fixed
// baseline reference.
class WindowState {
 public:
  WindowState(EmpiricalDistribution reference, WindowConfig cfg);

  // Returns a fresh energy once the window is full and then every `stride`
  // samples; nothing otherwise.
  std::optional<double> ingest(const Eigen::VectorXd& sample);

  std::size_t size() const noexcept { return filled_; }
  std::size_t ingested() const noexcept { return ingested_; }
  const WindowConfig& config() const noexcept { return cfg_; }
  const EmpiricalDistribution& reference() const noexcept { return reference_; }
  const std::optional<SBPResult>& last_solve() const noexcept { return last_; }
  // Buffered samples, oldest first.
  Eigen::MatrixXd window() const;

 private:
  EmpiricalDistribution reference_;
  WindowConfig cfg_;
  Eigen::MatrixXd buffer_;
  std::size_t head_ = 0;
  std::size_t filled_ = 0;
  std::size_t ingested_ = 0;
  std::optional<SBPResult> last_;
};

enum class Decision { kIncreaseChallenge, kHold, kReduceChallenge };

std::string_view to_string(Decision d);
Decision parse_decision(std::string_view text);

struct ControllerConfig {
  double theta_low = 0.0;
  double theta_high = 1.0;
  double hysteresis = 0.0;
  // Decisions after an active one during which the opposite direction is held back.
  int cooldown = 2;

  void validate() const;
};

// Reduce above theta_high, Increase below theta_low, Hold in between. Entering
// an active state needs the extra margin h; staying in it does not.
Decision decide(double energy, Decision previous, const ControllerConfig& cfg);

struct ControlDecision {
  std::size_t index = 0;  // samples ingested when the decision was made
  double energy = 0.0;
  Decision decision = Decision::kHold;

  friend bool operator==(const ControlDecision&, const ControlDecision&) = default;
};

// decide() plus the reversal cooldown. Deterministic in its inputs.
class Controller {
 public:
  explicit Controller(ControllerConfig cfg);

  ControlDecision step(double energy, std::size_t index);
  Decision current() const noexcept { return previous_; }

 private:
  ControllerConfig cfg_;
  Decision previous_ = Decision::kHold;
  Decision last_active_ = Decision::kHold;
  int since_active_ = 0;
};

struct CalibrationConfig {
  double q_low = 0.2;
  double q_high = 0.8;
  double hysteresis_fraction = 0.3;  // h as a fraction of theta_high - theta_low
  int cooldown = 2;

  void validate() const;
};

// Linear-interpolation quantile of unsorted values.
double quantile(std::vector<double> values, double q);

// Thresholds from quantiles of a calibration run's energies.
ControllerConfig calibrate_controller(const std::vector<double>& energies, const CalibrationConfig& cfg = {});

struct EnergyPoint {
  std::size_t index = 0;
  double energy = 0.0;
};

// Rolling window energies of a stream (rows are samples).
std::vector<EnergyPoint> rolling_energies(const Eigen::MatrixXd& stream, const EmpiricalDistribution& reference,
                                          const WindowConfig& cfg);

std::vector<ControlDecision> simulate(const Eigen::MatrixXd& stream, const EmpiricalDistribution& reference,
                                      const WindowConfig& window, const ControllerConfig& controller);

// Runs the controller over precomputed energies.
std::vector<ControlDecision> replay(const std::vector<EnergyPoint>& energies, const ControllerConfig& controller);

// index,energy,decision
void write_trace(std::ostream& out, const std::vector<ControlDecision>& trace);
std::vector<ControlDecision> read_trace(std::istream& in);

// Header of feature names, then one sample per line.
Eigen::MatrixXd read_stream(std::istream& in, const FeatureSchema& schema);
Eigen::MatrixXd load_stream(const std::filesystem::path& path, const FeatureSchema& schema);
void write_stream(std::ostream& out, const FeatureSchema& schema, const Eigen::MatrixXd& stream);

// Segment of a scripted cohort stream: `count` samples whose generating
// Gaussian moves from portion `from` to portion `to`.
struct StreamSegment {
  Portion from = Portion::P1;
  Portion to = Portion::P1;
  std::size_t count = 0;
};

// Raw samples of one cohort participant, normalized with `stats` and clipped.
Eigen::MatrixXd cohort_stream(const VirtualCohort& cohort, std::size_t participant,
                              const std::vector<StreamSegment>& segments, const BaselineStats& stats,
                              const ClipRange& clip, std::uint64_t seed);

// One window of fresh P1 then two of P2; played after the baseline recording.
std::vector<StreamSegment> calibration_script(std::size_t window);
// The reference samples followed by calibration_script. Its rolling energies
// set the controller thresholds.
Eigen::MatrixXd calibration_stream(const VirtualCohort& cohort, std::size_t participant,
                                   const EmpiricalDistribution& reference, std::size_t window,
                                   const BaselineStats& stats, const ClipRange& clip, std::uint64_t seed);
// A ramp from P1 to P3 over eight windows, then one window of P3. Along a
// segment the squared transport distance from its start grows linearly.
std::vector<StreamSegment> ramp_script(std::size_t window);

}  // namespace eegbridge

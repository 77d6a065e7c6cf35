#include "eegbridge/adaptive.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <random>

#include "eegbridge/csv.hpp"
#include "eegbridge/error.hpp"

namespace eegbridge {

void WindowConfig::validate() const {
  if (window < 1) fail(ErrorCode::kInvalidConfig, "window must hold at least one sample");
  if (stride < 1) fail(ErrorCode::kInvalidConfig, "stride must be at least one sample");
  sbp.validate();
}

WindowState::WindowState(EmpiricalDistribution reference, WindowConfig cfg)
    : reference_(std::move(reference)), cfg_(std::move(cfg)) {
  cfg_.validate();
  reference_.validate();
  buffer_.resize(static_cast<Eigen::Index>(cfg_.window), reference_.dimension());
}

std::optional<double> WindowState::ingest(const Eigen::VectorXd& sample) {
  if (sample.size() != reference_.dimension()) {
    fail(ErrorCode::kDimensionMismatch, "stream sample has " + std::to_string(sample.size()) +
                                            " features, reference has " + std::to_string(reference_.dimension()));
  }
  if (!sample.allFinite()) fail(ErrorCode::kNonFiniteValue, "stream sample is not finite");
  buffer_.row(static_cast<Eigen::Index>(head_)) = sample.transpose();
  head_ = (head_ + 1) % cfg_.window;
  filled_ = std::min(filled_ + 1, cfg_.window);
  ++ingested_;
  if (ingested_ < cfg_.window || (ingested_ - cfg_.window) % cfg_.stride != 0) return std::nullopt;

  // Slot order is kept so the previous potentials line up with the buffer.
  const auto current = EmpiricalDistribution::uniform(buffer_);
  const SinkhornPotentials* warm = cfg_.warm_start && last_ ? &last_->potentials : nullptr;
  last_ = sbp_energy(current, reference_, cfg_.sbp, warm);
  return last_->energy;
}

Eigen::MatrixXd WindowState::window() const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(filled_), buffer_.cols());
  const std::size_t start = filled_ < cfg_.window ? 0 : head_;
  for (std::size_t k = 0; k < filled_; ++k) {
    out.row(static_cast<Eigen::Index>(k)) = buffer_.row(static_cast<Eigen::Index>((start + k) % cfg_.window));
  }
  return out;
}

std::string_view to_string(Decision d) {
  switch (d) {
    case Decision::kIncreaseChallenge: return "IncreaseChallenge";
    case Decision::kHold: return "Hold";
    case Decision::kReduceChallenge: return "ReduceChallenge";
  }
  return "Hold";
}

Decision parse_decision(std::string_view text) {
  if (text == "IncreaseChallenge") return Decision::kIncreaseChallenge;
  if (text == "Hold") return Decision::kHold;
  if (text == "ReduceChallenge") return Decision::kReduceChallenge;
  fail(ErrorCode::kParseError, "unknown decision '" + std::string(text) + "'");
}

void ControllerConfig::validate() const {
  if (!std::isfinite(theta_low) || !std::isfinite(theta_high) || !std::isfinite(hysteresis)) {
    fail(ErrorCode::kInvalidConfig, "controller thresholds must be finite");
  }
  if (hysteresis < 0.0) fail(ErrorCode::kInvalidConfig, "hysteresis must be non-negative");
  if (!(theta_low + hysteresis < theta_high - hysteresis)) {
    fail(ErrorCode::kInvalidConfig, "need theta_low + h < theta_high - h");
  }
  if (cooldown < 0) fail(ErrorCode::kInvalidConfig, "cooldown must be non-negative");
}

Decision decide(double energy, Decision previous, const ControllerConfig& cfg) {
  const double reduce_at = cfg.theta_high + (previous == Decision::kReduceChallenge ? 0.0 : cfg.hysteresis);
  const double increase_at = cfg.theta_low - (previous == Decision::kIncreaseChallenge ? 0.0 : cfg.hysteresis);
  if (energy > reduce_at) return Decision::kReduceChallenge;
  if (energy < increase_at) return Decision::kIncreaseChallenge;
  return Decision::kHold;
}

Controller::Controller(ControllerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

ControlDecision Controller::step(double energy, std::size_t index) {
  if (!std::isfinite(energy)) fail(ErrorCode::kNonFiniteValue, "controller energy is not finite");
  Decision d = decide(energy, previous_, cfg_);
  const bool reversal = d != Decision::kHold && last_active_ != Decision::kHold && d != last_active_;
  if (reversal && since_active_ < cfg_.cooldown) d = Decision::kHold;
  ++since_active_;
  if (d != Decision::kHold) {
    last_active_ = d;
    since_active_ = 0;
  }
  previous_ = d;
  return ControlDecision{index, energy, d};
}

void CalibrationConfig::validate() const {
  if (!(0.0 <= q_low && q_low < q_high && q_high <= 1.0)) {
    fail(ErrorCode::kInvalidConfig, "calibration quantiles must satisfy 0 <= q_low < q_high <= 1");
  }
  if (!(hysteresis_fraction >= 0.0 && hysteresis_fraction < 0.5)) {
    fail(ErrorCode::kInvalidConfig, "hysteresis fraction must lie in [0, 0.5)");
  }
  if (cooldown < 0) fail(ErrorCode::kInvalidConfig, "cooldown must be non-negative");
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) fail(ErrorCode::kInvalidArgument, "quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

ControllerConfig calibrate_controller(const std::vector<double>& energies, const CalibrationConfig& cfg) {
  cfg.validate();
  if (energies.size() < 2) fail(ErrorCode::kInvalidConfig, "calibration needs at least two energies");
  ControllerConfig c;
  c.theta_low = quantile(energies, cfg.q_low);
  c.theta_high = quantile(energies, cfg.q_high);
  c.hysteresis = cfg.hysteresis_fraction * (c.theta_high - c.theta_low);
  c.cooldown = cfg.cooldown;
  if (!(c.theta_high > c.theta_low)) fail(ErrorCode::kInvalidConfig, "calibration energies have no spread");
  c.validate();
  return c;
}

std::vector<EnergyPoint> rolling_energies(const Eigen::MatrixXd& stream, const EmpiricalDistribution& reference,
                                          const WindowConfig& cfg) {
  WindowState state(reference, cfg);
  std::vector<EnergyPoint> out;
  for (Eigen::Index i = 0; i < stream.rows(); ++i) {
    if (const auto e = state.ingest(stream.row(i).transpose())) out.push_back({state.ingested(), *e});
  }
  return out;
}

std::vector<ControlDecision> replay(const std::vector<EnergyPoint>& energies, const ControllerConfig& controller) {
  Controller c(controller);
  std::vector<ControlDecision> trace;
  trace.reserve(energies.size());
  for (const auto& e : energies) trace.push_back(c.step(e.energy, e.index));
  return trace;
}

std::vector<ControlDecision> simulate(const Eigen::MatrixXd& stream, const EmpiricalDistribution& reference,
                                      const WindowConfig& window, const ControllerConfig& controller) {
  controller.validate();
  return replay(rolling_energies(stream, reference, window), controller);
}

void write_trace(std::ostream& out, const std::vector<ControlDecision>& trace) {
  out << "index,energy,decision\n";
  for (const auto& d : trace) out << d.index << ',' << csv::format_double(d.energy) << ',' << to_string(d.decision) << '\n';
}

std::vector<ControlDecision> read_trace(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::kEmptyFile, "trace is empty");
  if (csv::split_line(line) != std::vector<std::string>{"index", "energy", "decision"}) {
    fail(ErrorCode::kSchemaMismatch, "unexpected trace header '" + line + "'");
  }
  std::vector<ControlDecision> trace;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::is_skippable(line)) continue;
    const auto f = csv::split_line(line);
    double energy = 0.0;
    double index = 0.0;
    if (f.size() != 3 || !csv::parse_double(f[0], index) || !csv::parse_double(f[1], energy) || index < 0) {
      fail(ErrorCode::kParseError, "trace line " + std::to_string(line_no));
    }
    trace.push_back({static_cast<std::size_t>(index), energy, parse_decision(f[2])});
  }
  return trace;
}

Eigen::MatrixXd read_stream(std::istream& in, const FeatureSchema& schema) {
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (!have_header && std::getline(in, line)) {
    ++line_no;
    if (csv::is_skippable(line)) continue;
    if (csv::split_line(line) != schema.names()) {
      fail(ErrorCode::kSchemaMismatch, "stream header '" + line + "' does not match the feature columns");
    }
    have_header = true;
  }
  if (!have_header) fail(ErrorCode::kEmptyFile, "stream has no header");
  const auto d = static_cast<Eigen::Index>(schema.dimension());
  std::vector<double> values;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::is_skippable(line)) continue;
    const auto fields = csv::split_line(line);
    if (static_cast<Eigen::Index>(fields.size()) != d) {
      fail(ErrorCode::kDimensionMismatch, "stream line " + std::to_string(line_no) + " has " +
                                              std::to_string(fields.size()) + " fields");
    }
    for (const auto& field : fields) {
      double v = 0.0;
      if (!csv::parse_double(field, v)) {
        fail(ErrorCode::kParseError, "stream line " + std::to_string(line_no) + ": '" + field + "'");
      }
      if (!std::isfinite(v)) fail(ErrorCode::kNonFiniteValue, "stream line " + std::to_string(line_no));
      values.push_back(v);
    }
    ++rows;
  }
  Eigen::MatrixXd out(rows, d);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) out(r, c) = values[static_cast<std::size_t>(r * d + c)];
  }
  return out;
}

Eigen::MatrixXd load_stream(const std::filesystem::path& path, const FeatureSchema& schema) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  return read_stream(in, schema);
}

void write_stream(std::ostream& out, const FeatureSchema& schema, const Eigen::MatrixXd& stream) {
  if (stream.cols() != static_cast<Eigen::Index>(schema.dimension())) {
    fail(ErrorCode::kDimensionMismatch, "stream width does not match the schema");
  }
  const auto& names = schema.names();
  for (std::size_t i = 0; i < names.size(); ++i) out << (i ? "," : "") << names[i];
  out << '\n';
  for (Eigen::Index r = 0; r < stream.rows(); ++r) {
    for (Eigen::Index c = 0; c < stream.cols(); ++c) out << (c ? "," : "") << csv::format_double(stream(r, c));
    out << '\n';
  }
}

Eigen::MatrixXd cohort_stream(const VirtualCohort& cohort, std::size_t participant,
                              const std::vector<StreamSegment>& segments, const BaselineStats& stats,
                              const ClipRange& clip, std::uint64_t seed) {
  std::size_t total = 0;
  for (const auto& s : segments) total += s.count;
  const auto d = static_cast<Eigen::Index>(cohort.config.dimension());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(total), d);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Index row = 0;
  for (const auto& s : segments) {
    const auto a = cohort.params(participant, s.from);
    const auto b = cohort.params(participant, s.to);
    const Eigen::VectorXd sa = a.cov.diagonal().cwiseSqrt();
    const Eigen::VectorXd sb = b.cov.diagonal().cwiseSqrt();
    for (std::size_t k = 0; k < s.count; ++k) {
      // Progress along the path grows like sqrt(time), so the squared transport
      // distance from `from` grows linearly.
      const double t = s.count > 1 ? std::sqrt(static_cast<double>(k) / static_cast<double>(s.count - 1)) : 0.0;
      const Eigen::VectorXd mean = (1.0 - t) * a.mean + t * b.mean;
      const Eigen::VectorXd sd = (1.0 - t) * sa + t * sb;
      Eigen::VectorXd x(d);
      for (Eigen::Index f = 0; f < d; ++f) x[f] = mean[f] + sd[f] * normal(rng);
      out.row(row++) = apply(x, stats, clip).transpose();
    }
  }
  return out;
}

std::vector<StreamSegment> calibration_script(std::size_t window) {
  return {{Portion::P1, Portion::P1, window}, {Portion::P2, Portion::P2, 2 * window}};
}

Eigen::MatrixXd calibration_stream(const VirtualCohort& cohort, std::size_t participant,
                                   const EmpiricalDistribution& reference, std::size_t window,
                                   const BaselineStats& stats, const ClipRange& clip, std::uint64_t seed) {
  const Eigen::MatrixXd tail = cohort_stream(cohort, participant, calibration_script(window), stats, clip, seed);
  if (tail.cols() != reference.dimension()) fail(ErrorCode::kDimensionMismatch, "reference dimension differs from cohort");
  Eigen::MatrixXd out(reference.size() + tail.rows(), tail.cols());
  out << reference.points, tail;
  return out;
}

std::vector<StreamSegment> ramp_script(std::size_t window) {
  return {{Portion::P1, Portion::P3, 8 * window}, {Portion::P3, Portion::P3, window}};
}

}  // namespace eegbridge

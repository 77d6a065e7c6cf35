#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "eegbridge/adaptive.hpp"
#include "expect_error.hpp"
#include "oracles.hpp"

namespace eegbridge {
namespace {

Eigen::VectorXd scalar(double v) { return Eigen::VectorXd::Constant(1, v); }

ControllerConfig controller(double lo, double hi, double h, int cooldown = 2) {
  ControllerConfig c;
  c.theta_low = lo;
  c.theta_high = hi;
  c.hysteresis = h;
  c.cooldown = cooldown;
  return c;
}

std::size_t count_entries(const std::vector<Decision>& ds, Decision target) {
  std::size_t n = 0;
  Decision prev = Decision::kHold;
  for (const auto d : ds) {
    if (d == target && prev != target) ++n;
    prev = d;
  }
  return n;
}

TEST(Window, FirstEnergyAfterFullWindowThenEveryStride) {
  const auto ref = EmpiricalDistribution::uniform(Eigen::MatrixXd(Eigen::VectorXd::LinSpaced(3, 0.0, 2.0)));
  WindowConfig cfg;
  cfg.window = 10;
  cfg.stride = 5;
  WindowState state(ref, cfg);
  std::vector<std::size_t> at;
  for (int i = 1; i <= 26; ++i) {
    if (state.ingest(scalar(0.1 * i))) at.push_back(static_cast<std::size_t>(i));
  }
  EXPECT_EQ(at, (std::vector<std::size_t>{10, 15, 20, 25}));
  EXPECT_EQ(state.size(), 10u);
  EXPECT_EQ(state.ingested(), 26u);
}

TEST(Window, KeepsTheMostRecentSamplesInOrder) {
  const auto ref = EmpiricalDistribution::uniform(Eigen::MatrixXd::Zero(2, 1));
  WindowConfig cfg;
  cfg.window = 4;
  cfg.stride = 1;
  WindowState state(ref, cfg);
  for (int i = 1; i <= 7; ++i) state.ingest(scalar(i));
  EXPECT_EQ(state.window(), (Eigen::MatrixXd(4, 1) << 4, 5, 6, 7).finished());
}

TEST(Window, Validation) {
  const auto ref = EmpiricalDistribution::uniform(Eigen::MatrixXd::Zero(2, 1));
  WindowConfig cfg;
  cfg.stride = 0;
  EXPECT_ERROR_CODE(WindowState(ref, cfg), ErrorCode::kInvalidConfig);
  WindowState ok(ref, WindowConfig{});
  EXPECT_ERROR_CODE(ok.ingest(Eigen::Vector2d(1, 2)), ErrorCode::kDimensionMismatch);
  EXPECT_ERROR_CODE(ok.ingest(scalar(NAN)), ErrorCode::kNonFiniteValue);
}

TEST(Window, StreamLikeReferenceSitsAtSelfTransportFloor) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd ref_pts = oracle::gaussian_matrix(200, 3, rng);
  const auto ref = EmpiricalDistribution::uniform(ref_pts);
  WindowConfig cfg;
  cfg.window = 200;
  cfg.stride = 100;
  const auto energies = rolling_energies(oracle::gaussian_matrix(600, 3, rng), ref, cfg);
  ASSERT_EQ(energies.size(), 5u);
  // Floor: the same solver between two independent samples of the reference law.
  std::vector<double> floor;
  for (int k = 0; k < 10; ++k) {
    floor.push_back(sbp_energy(EmpiricalDistribution::uniform(oracle::gaussian_matrix(200, 3, rng)), ref, cfg.sbp).energy);
  }
  const double lo = *std::min_element(floor.begin(), floor.end());
  const double hi = *std::max_element(floor.begin(), floor.end());
  for (const auto& e : energies) {
    EXPECT_GT(e.energy, 0.5 * lo);
    EXPECT_LT(e.energy, 1.5 * hi);
  }
}

TEST(Window, ShiftedReferenceAddsSquaredShift) {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd ref_pts = oracle::gaussian_matrix(150, 2, rng);
  const auto ref = EmpiricalDistribution::uniform(ref_pts);
  const Eigen::RowVector2d delta(0.8, -0.6);
  WindowConfig cfg;
  cfg.window = 150;
  cfg.stride = 150;
  const double floor = rolling_energies(ref_pts, ref, cfg).front().energy;
  const Eigen::MatrixXd shifted = ref_pts.rowwise() + delta;
  const auto cost_shift = rolling_energies(shifted, ref, cfg).front().energy - floor;
  // Same points, so the cross term vanishes and the coupling is shift invariant,
  // but epsilon is relative to the median cost and therefore changes slightly.
  EXPECT_NEAR(cost_shift, delta.squaredNorm(), 0.05 * delta.squaredNorm());

  WindowConfig absolute = cfg;
  absolute.sbp.epsilon_mode = EpsilonMode::kAbsolute;
  absolute.sbp.epsilon = 0.05;
  const double exact = rolling_energies(shifted, ref, absolute).front().energy -
                       rolling_energies(ref_pts, ref, absolute).front().energy;
  EXPECT_NEAR(exact, delta.squaredNorm(), 1e-6);

  // Fresh points: with a fixed epsilon the coupling ignores the shift, so the
  // energy moves by |delta|^2 + 2 delta . (mean(fresh) - mean(ref)).
  const Eigen::MatrixXd fresh = oracle::gaussian_matrix(150, 2, rng);
  const Eigen::RowVector2d gap = fresh.colwise().mean() - ref_pts.colwise().mean();
  const double moved = rolling_energies(Eigen::MatrixXd(fresh.rowwise() + delta), ref, absolute).front().energy -
                       rolling_energies(fresh, ref, absolute).front().energy;
  EXPECT_NEAR(moved, delta.squaredNorm() + 2.0 * delta.dot(gap), 1e-6);
}

TEST(Decide, Thresholds) {
  const auto c = controller(1.0, 3.0, 0.2);
  EXPECT_EQ(decide(2.0, Decision::kHold, c), Decision::kHold);
  EXPECT_EQ(decide(3.0 + 2 * 0.2, Decision::kHold, c), Decision::kReduceChallenge);
  EXPECT_EQ(decide(3.1, Decision::kHold, c), Decision::kHold);
  EXPECT_EQ(decide(3.1, Decision::kReduceChallenge, c), Decision::kReduceChallenge);
  EXPECT_EQ(decide(1.0 - 2 * 0.2, Decision::kHold, c), Decision::kIncreaseChallenge);
  EXPECT_EQ(decide(0.9, Decision::kHold, c), Decision::kHold);
  EXPECT_EQ(decide(0.9, Decision::kIncreaseChallenge, c), Decision::kIncreaseChallenge);
  EXPECT_EQ(decide(2.0, Decision::kReduceChallenge, c), Decision::kHold);
}

TEST(Decide, NoChatteringInsideHysteresisBand) {
  const double h = 0.2;
  const auto c = controller(1.0, 3.0, h);
  Decision prev = Decision::kHold;
  std::vector<Decision> ds;
  int excursions = 0;
  for (int i = 0; i < 400; ++i) {
    // Triangle wave of amplitude 0.9h around theta_high, with a spike beyond
    // the band every 100 samples.
    const double phase = std::fmod(i * 0.13, 2.0);
    double e = 3.0 + 0.9 * h * (phase < 1.0 ? 2.0 * phase - 1.0 : 3.0 - 2.0 * phase);
    if (i % 100 == 50) {
      e = 3.0 + 2.0 * h;
      ++excursions;
    }
    prev = decide(e, prev, c);
    ds.push_back(prev);
  }
  EXPECT_EQ(count_entries(ds, Decision::kReduceChallenge), static_cast<std::size_t>(excursions));
  EXPECT_EQ(count_entries(ds, Decision::kIncreaseChallenge), 0u);
}

TEST(Controller, CooldownHoldsBackImmediateReversal) {
  Controller ctl(controller(1.0, 3.0, 0.1, 2));
  EXPECT_EQ(ctl.step(5.0, 1).decision, Decision::kReduceChallenge);
  EXPECT_EQ(ctl.step(0.0, 2).decision, Decision::kHold);
  EXPECT_EQ(ctl.step(0.0, 3).decision, Decision::kHold);
  EXPECT_EQ(ctl.step(0.0, 4).decision, Decision::kIncreaseChallenge);
  Controller no_cooldown(controller(1.0, 3.0, 0.1, 0));
  no_cooldown.step(5.0, 1);
  EXPECT_EQ(no_cooldown.step(0.0, 2).decision, Decision::kIncreaseChallenge);
}

TEST(Controller, Validation) {
  EXPECT_ERROR_CODE(controller(2.0, 1.0, 0.0).validate(), ErrorCode::kInvalidConfig);
  EXPECT_ERROR_CODE(controller(1.0, 2.0, 0.6).validate(), ErrorCode::kInvalidConfig);
  EXPECT_ERROR_CODE(controller(1.0, 2.0, -0.1).validate(), ErrorCode::kInvalidConfig);
  Controller ok(controller(1.0, 2.0, 0.1));
  EXPECT_ERROR_CODE(ok.step(NAN, 0), ErrorCode::kNonFiniteValue);
}

TEST(Calibration, QuantilesAndHysteresis) {
  std::vector<double> e;
  for (int i = 0; i <= 10; ++i) e.push_back(i);
  std::reverse(e.begin(), e.end());
  EXPECT_DOUBLE_EQ(quantile(e, 0.25), 2.5);
  const auto c = calibrate_controller(e);
  EXPECT_DOUBLE_EQ(c.theta_low, 2.0);
  EXPECT_DOUBLE_EQ(c.theta_high, 8.0);
  EXPECT_DOUBLE_EQ(c.hysteresis, 0.3 * 6.0);
  EXPECT_ERROR_CODE(calibrate_controller({1.0, 1.0, 1.0}), ErrorCode::kInvalidConfig);
  EXPECT_ERROR_CODE(calibrate_controller({1.0}), ErrorCode::kInvalidConfig);
  CalibrationConfig bad;
  bad.q_low = 0.9;
  EXPECT_ERROR_CODE(calibrate_controller(e, bad), ErrorCode::kInvalidConfig);
}

TEST(Simulate, EmptyStream) {
  const auto ref = EmpiricalDistribution::uniform(Eigen::MatrixXd::Zero(2, 1));
  EXPECT_TRUE(simulate(Eigen::MatrixXd(0, 1), ref, WindowConfig{}, controller(0, 1, 0)).empty());
}

TEST(Simulate, ReplayMatchesSimulate) {
  std::mt19937_64 rng(3);
  const auto ref = EmpiricalDistribution::uniform(oracle::gaussian_matrix(60, 2, rng));
  Eigen::MatrixXd stream = oracle::gaussian_matrix(300, 2, rng);
  for (Eigen::Index i = 0; i < stream.rows(); ++i) stream.row(i).array() += 0.01 * static_cast<double>(i);
  WindowConfig w;
  w.window = 60;
  w.stride = 20;
  const auto c = controller(0.5, 2.0, 0.1);
  const auto trace = simulate(stream, ref, w, c);
  EXPECT_EQ(trace, replay(rolling_energies(stream, ref, w), c));
  EXPECT_EQ(trace.size(), 13u);
  EXPECT_EQ(trace.back().decision, Decision::kReduceChallenge);
  std::vector<double> energies;
  std::vector<double> order;
  for (const auto& d : trace) {
    energies.push_back(d.energy);
    order.push_back(static_cast<double>(d.index));
  }
  EXPECT_GT(oracle::kendall_tau_b(order, energies), 0.8);
}

TEST(Simulate, WarmStartDoesNotChangeEnergiesBeyondTolerance) {
  std::mt19937_64 rng(4);
  const auto ref = EmpiricalDistribution::uniform(oracle::gaussian_matrix(50, 2, rng));
  const Eigen::MatrixXd stream = oracle::gaussian_matrix(200, 2, rng).array() + 0.5;
  WindowConfig warm;
  warm.window = 50;
  warm.stride = 25;
  WindowConfig cold = warm;
  cold.warm_start = false;
  const auto a = rolling_energies(stream, ref, warm);
  const auto b = rolling_energies(stream, ref, cold);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i].energy, b[i].energy, 1e-6 * b[i].energy);
}

TEST(Trace, RoundTrip) {
  const std::vector<ControlDecision> trace = {{200, 0.5, Decision::kHold},
                                              {250, 2.25, Decision::kReduceChallenge},
                                              {300, 0.125, Decision::kIncreaseChallenge}};
  std::stringstream buf;
  write_trace(buf, trace);
  EXPECT_EQ(buf.str().substr(0, buf.str().find('\n')), "index,energy,decision");
  EXPECT_EQ(read_trace(buf), trace);
  EXPECT_ERROR_CODE(parse_decision("Panic"), ErrorCode::kParseError);
}

TEST(Stream, RoundTripAndSchemaCheck) {
  std::mt19937_64 rng(5);
  const FeatureSchema schema({"theta", "alpha"});
  const Eigen::MatrixXd s = oracle::gaussian_matrix(7, 2, rng);
  std::stringstream buf;
  write_stream(buf, schema, s);
  EXPECT_EQ(read_stream(buf, schema), s);
  std::stringstream wrong("beta,alpha\n1,2\n");
  EXPECT_ERROR_CODE(read_stream(wrong, schema), ErrorCode::kSchemaMismatch);
  std::stringstream ragged("theta,alpha\n1,2,3\n");
  EXPECT_ERROR_CODE(read_stream(ragged, schema), ErrorCode::kDimensionMismatch);
}

TEST(CohortStream, ScriptLengthsAndNormalization) {
  VirtualCohortConfig cfg;
  cfg.samples_per_portion = 50;
  const auto cohort = generate_virtual_cohort(cfg);
  const auto norm = normalize_dataset(cohort.data);
  const auto& stats = find_stats(norm.stats, "s03");
  const auto ramp = cohort_stream(cohort, 2, ramp_script(40), stats, ClipRange{}, 1);
  EXPECT_EQ(ramp.rows(), 40 * 9);
  EXPECT_LE(ramp.cwiseAbs().maxCoeff(), 5.0);
  const auto same = cohort_stream(cohort, 2, ramp_script(40), stats, ClipRange{}, 1);
  EXPECT_EQ(ramp, same);

  const auto ref = EmpiricalDistribution::uniform(group(norm.dataset, "s03", Portion::P1));
  const auto cal = calibration_stream(cohort, 2, ref, 40, stats, ClipRange{}, 2);
  EXPECT_EQ(cal.rows(), ref.size() + 3 * 40);
  EXPECT_EQ(cal.topRows(ref.size()), ref.points);
}

}  // namespace
}  // namespace eegbridge

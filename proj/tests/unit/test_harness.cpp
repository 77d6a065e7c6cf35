#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "eegbridge/config.hpp"
#include "eegbridge/harness.hpp"
#include "expect_error.hpp"
#include "oracles.hpp"

namespace eegbridge {
namespace {

const std::filesystem::path kFixtures = EEGBRIDGE_FIXTURE_DIR;

const Transition kP12{Portion::P1, Portion::P2};
const Transition kP13{Portion::P1, Portion::P3};

EnergyTable table(const std::vector<double>& first, const std::vector<double>& second) {
  EnergyTable t;
  t.transitions = default_transitions();
  t.energies.resize(static_cast<Eigen::Index>(first.size()), 2);
  for (std::size_t i = 0; i < first.size(); ++i) {
    t.energies(static_cast<Eigen::Index>(i), 0) = first[i];
    t.energies(static_cast<Eigen::Index>(i), 1) = second[i];
    t.participants.push_back("p" + std::to_string(i));
  }
  return t;
}

std::vector<double> as_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

TEST(PublishedTables, DirectionAgreementIsSevenTenths) {
  const auto real = load_energy_table(kFixtures / "published_real_energies.csv");
  const auto gan = load_energy_table(kFixtures / "published_gan_energies.csv");
  ASSERT_EQ(real.participants.size(), 10u);
  EXPECT_EQ(direction_agreement(real, gan, kP12, kP13), 0.7);
}

TEST(PublishedTables, RankCorrelationMatchesBruteForce) {
  const auto real = load_energy_table(kFixtures / "published_real_energies.csv");
  const auto gan = load_energy_table(kFixtures / "published_gan_energies.csv");
  for (const auto& t : {kP12, kP13}) {
    const double expected = oracle::spearman(as_vector(real.column(t)), as_vector(gan.column(t)));
    EXPECT_NEAR(rank_correlation(real.column(t), gan.column(t)), expected, 1e-12) << t.label();
  }
  // Values computed by hand from the ranks before any code existed.
  EXPECT_NEAR(rank_correlation(real.column(kP13), gan.column(kP13)), -0.20060882941442129, 1e-12);
  EXPECT_NEAR(rank_correlation(real.column(kP12), gan.column(kP12)), -0.66060606060606053, 1e-12);
}

TEST(PublishedTables, GroupSummaryMean) {
  const auto real = load_energy_table(kFixtures / "published_real_energies.csv");
  const auto s = group_summary(real, kP12);
  const double expected = (0.000391 + 0.000518 + 0.000725 + 0.000692 + 0.000790 + 0.000508 + 0.000686 + 0.000544 +
                           0.000695 + 0.000858) /
                          10.0;
  EXPECT_NEAR(s.mean, expected, 1e-12);
  EXPECT_NEAR(s.mean, 0.0006407, 1e-12);
  EXPECT_NEAR(s.std, oracle::population_std(as_vector(real.column(kP12))), 1e-12);
}

TEST(PublishedTables, FeatureRowRendering) {
  std::ifstream in(kFixtures / "published_feature_stats.csv");
  std::string line;
  std::vector<std::string> fields;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("feature,", 0) == 0) continue;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
  }
  ASSERT_EQ(fields.size(), 5u);
  const std::string row =
      format_feature_row(fields[0], std::stod(fields[1]), std::stod(fields[2]), std::stod(fields[3]), std::stod(fields[4]));
  std::istringstream tokens(row);
  std::vector<std::string> got{std::istream_iterator<std::string>(tokens), {}};
  EXPECT_EQ(got, fields) << row;
}

TEST(DirectionAgreement, IdenticalAndFlipped) {
  const auto a = table({1, 2, 5, 4}, {2, 1, 6, 3});
  const auto flipped = table({2, 1, 6, 3}, {1, 2, 5, 4});
  EXPECT_EQ(direction_agreement(a, a, kP12, kP13), 1.0);
  EXPECT_EQ(direction_agreement(a, flipped, kP12, kP13), 0.0);
}

TEST(DirectionAgreement, TiesOnlyMatchTies) {
  const auto tied = table({1, 1, 1}, {1, 1, 1});
  const auto up = table({1, 1, 1}, {2, 2, 2});
  EXPECT_EQ(direction_agreement(tied, tied, kP12, kP13), 1.0);
  EXPECT_EQ(direction_agreement(tied, up, kP12, kP13), 0.0);
  EXPECT_EQ(direction_consistency(tied, kP12, kP13), 0.0);
}

TEST(DirectionAgreement, AlignsByParticipantId) {
  auto real = table({1, 2, 3}, {2, 1, 4});
  auto synth = real;
  std::swap(synth.participants[0], synth.participants[2]);
  synth.energies.row(0).swap(synth.energies.row(2));
  EXPECT_EQ(direction_agreement(real, synth, kP12, kP13), 1.0);
  synth.participants[1] = "stranger";
  EXPECT_ERROR_CODE(direction_agreement(real, synth, kP12, kP13), ErrorCode::kParticipantMismatch);
}

TEST(RankCorrelation, Basics) {
  const Eigen::VectorXd a = (Eigen::VectorXd(5) << 0.3, 1.2, 0.7, 2.0, -1.0).finished();
  EXPECT_NEAR(rank_correlation(a, a), 1.0, 1e-12);
  EXPECT_NEAR(rank_correlation(a, -a), -1.0, 1e-12);
  EXPECT_TRUE(std::isnan(rank_correlation(a, Eigen::VectorXd::Ones(5))));
  EXPECT_ERROR_CODE(rank_correlation(a.head(2), a.head(2)), ErrorCode::kTooFewParticipants);
  EXPECT_ERROR_CODE(rank_correlation(a, a.head(4)), ErrorCode::kDimensionMismatch);
}

TEST(RankCorrelation, TiesMatchBruteForce) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> u(0, 4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(9), y(9);
    for (auto& v : x) v = u(rng);
    for (auto& v : y) v = u(rng);
    const Eigen::VectorXd ex = Eigen::Map<Eigen::VectorXd>(x.data(), 9);
    const Eigen::VectorXd ey = Eigen::Map<Eigen::VectorXd>(y.data(), 9);
    const double got = rank_correlation(ex, ey);
    const double expected = oracle::spearman(x, y);
    if (std::isnan(expected)) {
      EXPECT_TRUE(std::isnan(got));
    } else {
      EXPECT_NEAR(got, expected, 1e-12);
    }
  }
}

TEST(KendallTau, MatchesBruteForce) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> u(0, 5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(12), y(12);
    for (auto& v : x) v = u(rng);
    for (auto& v : y) v = u(rng);
    const double expected = oracle::kendall_tau_b(x, y);
    const double got = kendall_tau(Eigen::Map<Eigen::VectorXd>(x.data(), 12), Eigen::Map<Eigen::VectorXd>(y.data(), 12));
    if (std::isnan(expected)) {
      EXPECT_TRUE(std::isnan(got));
    } else {
      EXPECT_NEAR(got, expected, 1e-12);
    }
  }
  const Eigen::VectorXd a = Eigen::VectorXd::LinSpaced(6, 0, 5);
  EXPECT_EQ(kendall_tau(a, a), 1.0);
  EXPECT_EQ(kendall_tau(a, -a), -1.0);
}

TEST(GroupSummary, Basics) {
  const auto single = group_summary(Eigen::VectorXd::Constant(1, 0.25));
  EXPECT_EQ(single.mean, 0.25);
  EXPECT_EQ(single.std, 0.0);
  const auto t = table({1, 2, 3}, {4, 5, 6});
  EXPECT_EQ(group_summary(t, kP12), group_summary(t, kP12));
  EXPECT_ERROR_CODE(group_summary(Eigen::VectorXd(0)), ErrorCode::kEmptyColumn);
}

TEST(Compare, ReportAndJsonRoundTrip) {
  const auto real = table({1, 2, 3, 4}, {2, 3, 5, 3});
  auto synth = table({1.5, 2.5, 2, 4}, {3, 2, 6, 5});
  const auto r = compare(real, synth);
  EXPECT_EQ(r.direction_agreement, 0.5);
  EXPECT_EQ(r.real_direction_consistency, 0.75);
  EXPECT_EQ(r.synth_direction_consistency, 0.75);
  ASSERT_EQ(r.rank_correlation.size(), 2u);
  EXPECT_NEAR(r.rank_correlation[1], oracle::spearman({2, 3, 5, 3}, {3, 2, 6, 5}), 1e-12);
  std::stringstream buf;
  write_comparison_json(buf, r);
  const auto j = nlohmann::json::parse(buf.str());
  EXPECT_EQ(j["direction_agreement"], 0.5);
  EXPECT_TRUE(j["per_transition"][0].contains("rank_correlation"));
  buf.seekg(0);
  const auto back = read_comparison_json(buf);
  EXPECT_EQ(back.participants, r.participants);
  EXPECT_EQ(back.transitions, r.transitions);
  EXPECT_EQ(back.real, r.real);
  EXPECT_EQ(back.synth, r.synth);
  EXPECT_EQ(back.rank_correlation, r.rank_correlation);
  EXPECT_EQ(back.real_summary, r.real_summary);
}

TEST(Compare, ParticipantSetsMustMatch) {
  const auto real = table({1, 2, 3}, {2, 3, 5});
  const auto synth = table({1, 2}, {2, 3});
  EXPECT_ERROR_CODE(compare(real, synth), ErrorCode::kParticipantMismatch);
}

TEST(VirtualCohort, OracleEnergiesFromDrift) {
  VirtualCohortConfig cfg;
  cfg.feature_names = {"x", "y"};
  cfg.drifts = {std::vector<double>{0, 0}, {1, 0}, {2, 0}, {0, 0}};
  cfg.baseline_std_lo = cfg.baseline_std_hi = 1.0;
  cfg.drift_scale_lo = cfg.drift_scale_hi = 1.0;
  cfg.samples_per_portion = 5;
  const auto cohort = generate_virtual_cohort(cfg);
  for (std::size_t i = 0; i < cohort.participants.size(); ++i) {
    EXPECT_NEAR(cohort.oracle_energy(i, kP12), 1.0, 1e-12);
    EXPECT_NEAR(cohort.oracle_energy(i, kP13), 4.0, 1e-12);
  }
}

TEST(VirtualCohort, ZeroDriftMeansIdenticalPortions) {
  VirtualCohortConfig cfg;
  for (auto& d : cfg.drifts) d = {0.0, 0.0, 0.0};
  cfg.samples_per_portion = 5;
  const auto cohort = generate_virtual_cohort(cfg);
  for (std::size_t i = 0; i < cohort.participants.size(); ++i) {
    EXPECT_NEAR(cohort.oracle_energy(i, kP13), 0.0, 1e-12);
    EXPECT_EQ(cohort.params(i, Portion::P1).mean, cohort.params(i, Portion::P4).mean);
  }
}

TEST(VirtualCohort, DefaultOrderingAndNormalizedOracle) {
  VirtualCohortConfig cfg;
  cfg.samples_per_portion = 5;
  const auto cohort = generate_virtual_cohort(cfg);
  EXPECT_EQ(cohort.participants.front().id, "s01");
  for (std::size_t i = 0; i < cohort.participants.size(); ++i) {
    EXPECT_GT(cohort.normalized_oracle_energy(i, kP13), cohort.normalized_oracle_energy(i, kP12));
    const auto np = cohort.normalized_params(i, Portion::P1);
    EXPECT_LT(np.mean.cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((np.cov - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(VirtualCohort, DeterministicInSeed) {
  VirtualCohortConfig cfg;
  cfg.samples_per_portion = 10;
  EXPECT_EQ(to_matrix(generate_virtual_cohort(cfg).data), to_matrix(generate_virtual_cohort(cfg).data));
  auto other = cfg;
  other.seed = 1;
  EXPECT_NE(to_matrix(generate_virtual_cohort(cfg).data), to_matrix(generate_virtual_cohort(other).data));
}

TEST(VirtualCohort, Validation) {
  VirtualCohortConfig cfg;
  cfg.num_participants = 0;
  EXPECT_ERROR_CODE(cfg.validate(), ErrorCode::kInvalidConfig);
  cfg = {};
  cfg.drifts[1] = {1.0};
  EXPECT_ERROR_CODE(cfg.validate(), ErrorCode::kInvalidConfig);
}

TEST(FeatureReport, IdenticalSetsGiveIdenticalRows) {
  VirtualCohortConfig cfg;
  cfg.samples_per_portion = 20;
  const auto data = normalize_dataset(generate_virtual_cohort(cfg).data).dataset;
  const auto r = feature_report(data, data);
  EXPECT_EQ(r.real.mean, r.synth.mean);
  EXPECT_EQ(r.real.std, r.synth.std);
  ASSERT_EQ(r.histograms.size(), 3u);
  for (const auto& h : r.histograms) {
    EXPECT_EQ(h.real, h.synth);
    EXPECT_EQ(h.real.size(), static_cast<std::size_t>(kHistogramBins));
  }
  std::stringstream buf;
  write_feature_report(buf, r);
  const auto back = read_feature_report(buf);
  EXPECT_EQ(back.names, r.names);
  EXPECT_EQ(back.real.mean, r.real.mean);
  EXPECT_EQ(back.synth.std, r.synth.std);
}

TEST(FeatureReport, DisjointPointMassesDoNotOverlap) {
  Dataset a(FeatureSchema({"x"}), FeatureSpace::kNormalized);
  Dataset b(FeatureSchema({"x"}), FeatureSpace::kNormalized);
  for (int i = 0; i < 10; ++i) {
    a.add(Sample{"p", Portion::P1, Eigen::VectorXd::Constant(1, -2.0)});
    b.add(Sample{"p", Portion::P1, Eigen::VectorXd::Constant(1, 3.0)});
  }
  const auto r = feature_report(a, b);
  const auto& h = r.histograms[0];
  for (std::size_t k = 0; k < h.real.size(); ++k) EXPECT_TRUE(h.real[k] == 0 || h.synth[k] == 0);
  EXPECT_EQ(std::accumulate(h.real.begin(), h.real.end(), 0L), 10);
  EXPECT_EQ(std::accumulate(h.synth.begin(), h.synth.end(), 0L), 10);
  EXPECT_ERROR_CODE(feature_report(a, Dataset(FeatureSchema({"y"}), FeatureSpace::kNormalized)),
                    ErrorCode::kSchemaMismatch);
}

TEST(ExperimentConfig, ApplyAndEcho) {
  Config c;
  c.set("sbp.epsilon", "0.02");
  c.set("sbp.epsilon_mode", "max");
  c.set("train.generator_steps", "17");
  c.set("gan.critic_widths", "32,16");
  c.set("sbp.transitions", "P1:P4");
  ExperimentConfig cfg;
  apply_config(c, cfg);
  EXPECT_EQ(cfg.sbp.epsilon, 0.02);
  EXPECT_EQ(cfg.sbp.epsilon_mode, EpsilonMode::kMaxCost);
  EXPECT_EQ(cfg.train.generator_steps, 17);
  EXPECT_EQ(cfg.critic.widths, (std::vector<int>{32, 16}));
  EXPECT_EQ(cfg.transitions, (std::vector<Transition>{{Portion::P1, Portion::P4}}));

  ExperimentConfig again;
  apply_config(echo_config(cfg), again);
  EXPECT_EQ(echo_config(again).echo(), echo_config(cfg).echo());
}

TEST(ExperimentConfig, UnknownOrBadKeys) {
  ExperimentConfig cfg;
  Config unknown;
  unknown.set("sbp.epsilom", "1");
  EXPECT_ERROR_CODE(apply_config(unknown, cfg), ErrorCode::kInvalidConfig);
  Config bad;
  bad.set("train.generator_steps", "many");
  EXPECT_ERROR_CODE(apply_config(bad, cfg), ErrorCode::kInvalidConfig);
}

TEST(RunExperiment, WritesEveryArtifactAndManifest) {
  oracle::TempDir dir("experiment");
  ExperimentConfig cfg;
  cfg.cohort.num_participants = 3;
  cfg.cohort.samples_per_portion = 40;
  cfg.generator.width = 16;
  cfg.generator.residual_blocks = 1;
  cfg.critic.widths = {16};
  cfg.train.generator_steps = 3;
  cfg.output_dir = dir.path();
  const auto res = run_experiment(cfg);
  EXPECT_EQ(res.real.participants.size(), 3u);
  EXPECT_EQ(res.report.real_direction_consistency, direction_consistency(res.real, kP12, kP13));
  for (const char* f : {"cohort_raw.csv", "normalized.csv", "baseline_stats.csv", "training_log.csv", "checkpoint.bin",
                        "synthetic.csv", "energy_real.csv", "energy_synth.csv", "sbp_diagnostics.jsonl",
                        "comparison.json", "feature_report.csv", "feature_histograms.csv", "feature_table.txt",
                        "manifest.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  std::ifstream in(dir / "manifest.json");
  const auto manifest = nlohmann::json::parse(in);
  EXPECT_EQ(manifest["command"], "experiment");
  for (const auto& stage : manifest["stages"]) EXPECT_EQ(stage["status"], "ok") << stage.dump();
}

TEST(RunExperiment, FailedStageIsRecorded) {
  oracle::TempDir dir("experiment_fail");
  ExperimentConfig cfg;
  cfg.dataset_path = dir / "missing.csv";
  cfg.output_dir = dir.path();
  EXPECT_ERROR_CODE(run_experiment(cfg), ErrorCode::kIoError);
  std::ifstream in(dir / "manifest.json");
  const auto manifest = nlohmann::json::parse(in);
  bool any_failed = false;
  for (const auto& stage : manifest["stages"]) any_failed |= stage["status"] == "failed";
  EXPECT_TRUE(any_failed) << manifest.dump();
}

}  // namespace
}  // namespace eegbridge

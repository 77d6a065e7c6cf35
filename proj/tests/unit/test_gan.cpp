#include <sstream>

#include <gtest/gtest.h>

#include "eegbridge/gan.hpp"
#include "eegbridge/harness.hpp"
#include "expect_error.hpp"
#include "oracles.hpp"

namespace eegbridge {
namespace {

using ad::Matrix;

std::vector<double> flat(const Matrix& m) { return {m.data(), m.data() + m.size()}; }

// Critic D(x) = w x + b on one-dimensional samples, no embeddings.
CriticModel scalar_critic(double w, double b) {
  CriticConfig cfg;
  cfg.pack_size = 1;
  cfg.widths = {};
  CriticModel critic(cfg, 1, 1, 0, 0);
  critic.trunk().parameters()[0](0, 0) = w;
  critic.trunk().parameters()[1](0, 0) = b;
  return critic;
}

Dataset tiny_cohort(int samples) {
  VirtualCohortConfig cfg;
  cfg.num_participants = 2;
  cfg.samples_per_portion = samples;
  cfg.feature_names = {"theta", "alpha"};
  cfg.drifts = {std::vector<double>{0, 0}, {0.4, 0.4}, {0.8, 0.8}, {1, 1}};
  return normalize_dataset(generate_virtual_cohort(cfg).data).dataset;
}

GeneratorConfig small_generator() {
  GeneratorConfig g;
  g.latent_dim = 4;
  g.participant_embedding = 2;
  g.portion_embedding = 2;
  g.width = 8;
  g.residual_blocks = 1;
  g.activation = Activation::kTanh;
  return g;
}

CriticConfig small_critic(int pack) {
  CriticConfig c;
  c.pack_size = pack;
  c.widths = {8, 6};
  c.activation = Activation::kTanh;
  return c;
}

TrainConfig short_training(int steps) {
  TrainConfig t;
  t.generator_steps = steps;
  t.critic_steps_per_gen_step = 2;
  t.batch_packs = 4;
  t.seed = 3;
  return t;
}

TEST(Pack, SingleSampleThenEmbeddings) {
  CriticConfig cfg;
  cfg.pack_size = 1;
  std::mt19937_64 rng(1);
  CriticModel critic(cfg, 2, 3, 2, 3);
  critic.initialize(rng);
  const auto v = pack({Eigen::Vector2d(7, 8)}, {{2, 1}}, critic);
  ASSERT_EQ(v.size(), 2 + 2 + 3);
  EXPECT_EQ(v.head(2), Eigen::Vector2d(7, 8));
  EXPECT_EQ(v.segment(2, 2), critic.participant_embedding().row(2).transpose());
  EXPECT_EQ(v.tail(3), critic.portion_embedding().row(1).transpose());
}

TEST(Pack, TwoSamplesWidth) {
  CriticConfig cfg;
  cfg.pack_size = 2;
  const CriticModel critic(cfg, 3, 2, 5, 4);
  const auto v = pack({Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(4, 5, 6)}, {{1, 0}, {1, 0}}, critic);
  EXPECT_EQ(v.size(), 2 * 3 + 5 + 4);
  EXPECT_EQ(v.head(6), (Eigen::VectorXd(6) << 1, 2, 3, 4, 5, 6).finished());
}

TEST(Pack, Errors) {
  CriticConfig cfg;
  cfg.pack_size = 2;
  const CriticModel critic(cfg, 3, 2, 5, 4);
  EXPECT_ERROR_CODE(pack({Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(4, 5, 6)}, {{0, 0}, {1, 0}}, critic),
                    ErrorCode::kMixedConditionPack);
  EXPECT_ERROR_CODE(pack({Eigen::Vector3d(1, 2, 3)}, {{0, 0}}, critic), ErrorCode::kShapeMismatch);
  EXPECT_ERROR_CODE(pack({Eigen::Vector2d(1, 2), Eigen::Vector2d(4, 5)}, {{0, 0}, {0, 0}}, critic),
                    ErrorCode::kDimensionMismatch);
}

TEST(Pack, PackRowsGroupsConsecutiveSamples) {
  const Matrix s = (Matrix(4, 2) << 1, 2, 3, 4, 5, 6, 7, 8).finished();
  EXPECT_EQ(pack_rows(s, 2), (Matrix(2, 4) << 1, 2, 3, 4, 5, 6, 7, 8).finished());
  EXPECT_ERROR_CODE(pack_rows(s, 3), ErrorCode::kShapeMismatch);
}

TEST(CriticLoss, ConstantCriticGivesLambda) {
  const auto critic = scalar_critic(0.0, 1.3);
  const Matrix real = (Matrix(3, 1) << 0.4, -1.0, 2.0).finished();
  const Matrix gen = (Matrix(3, 1) << 2.0, 0.1, -4.0).finished();
  const auto res = critic_loss(real, gen, Eigen::Vector3d(0.3, 0.8, 0.5), {{0, 0}, {0, 0}, {0, 0}}, critic, 10.0);
  EXPECT_NEAR(res.loss, 10.0, 1e-12);
  EXPECT_NEAR(res.penalty, 1.0, 1e-12);
  EXPECT_NEAR(res.wasserstein, 0.0, 1e-12);
}

TEST(CriticLoss, UnitNormLinearCriticHasNoPenalty) {
  CriticConfig cfg;
  cfg.pack_size = 1;
  cfg.widths = {};
  CriticModel critic(cfg, 2, 1, 0, 0);
  critic.trunk().parameters()[0] << 0.6, -0.8;
  std::mt19937_64 rng(2);
  const Matrix real = oracle::gaussian_matrix(5, 2, rng);
  const Matrix gen = oracle::gaussian_matrix(5, 2, rng);
  const Eigen::Vector2d w(0.6, -0.8);
  const double expected = (gen * w).mean() - (real * w).mean();
  const auto res = critic_loss(real, gen, Eigen::VectorXd::Constant(5, 0.5), std::vector<Condition>(5), critic, 10.0);
  EXPECT_NEAR(res.penalty, 0.0, 1e-12);
  EXPECT_NEAR(res.loss, expected, 1e-12);
}

TEST(CriticLoss, HandCaseIsTen) {
  const auto critic = scalar_critic(2.0, 0.0);
  const Matrix zero = Matrix::Zero(1, 1);
  EXPECT_NEAR(critic_loss(zero, zero, Eigen::VectorXd::Constant(1, 0.5), {{0, 0}}, critic, 10.0).loss, 10.0, 1e-12);
}

TEST(CriticLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  CriticModel critic(small_critic(2), 2, 2, 2, 2);
  critic.initialize(rng);
  const Matrix real = oracle::gaussian_matrix(3, 4, rng);
  const Matrix gen = oracle::gaussian_matrix(3, 4, rng);
  const Eigen::Vector3d t(0.2, 0.5, 0.9);
  const std::vector<Condition> cond = {{0, 1}, {1, 2}, {0, 0}};
  const auto res = critic_loss(real, gen, t, cond, critic, 10.0);
  auto refs = critic.parameter_refs();
  ASSERT_EQ(res.grads.size(), refs.size());
  for (std::size_t p = 0; p < refs.size(); ++p) {
    const auto f = [&](const std::vector<double>& v) {
      CriticModel copy = critic;
      auto r = copy.parameter_refs();
      *r[p] = Eigen::Map<const Matrix>(v.data(), refs[p]->rows(), refs[p]->cols());
      return critic_loss(real, gen, t, cond, copy, 10.0).loss;
    };
    const auto fd = oracle::central_differences(f, flat(*refs[p]), 1e-5);
    for (std::size_t i = 0; i < fd.size(); ++i) {
      EXPECT_LT(oracle::relative_error(res.grads[p].data()[i], fd[i], 1e-4), 1e-4) << "tensor " << p << " entry " << i;
    }
  }
}

TEST(VarianceLoss, IdenticalBatchesGiveZero) {
  std::mt19937_64 rng(5);
  const Matrix x = oracle::gaussian_matrix(6, 3, rng);
  const std::vector<Condition> c = {{0, 0}, {0, 0}, {0, 0}, {1, 0}, {1, 0}, {1, 0}};
  EXPECT_EQ(variance_loss(x, c, x, c), 0.0);
}

TEST(VarianceLoss, HandCaseIsTwo) {
  const double s = std::sqrt(2.0);
  const Matrix real = (Matrix(2, 2) << -1, -s, 1, s).finished();  // variances (1, 2)
  const Matrix gen = (Matrix(2, 2) << -1, 0, 1, 0).finished();    // variances (1, 0)
  EXPECT_NEAR(variance_loss(real, {{0, 0}, {0, 0}}, gen, {{0, 0}, {0, 0}}), 2.0, 1e-12);
}

TEST(VarianceLoss, AveragesGroups) {
  const double s = std::sqrt(2.0);
  const Matrix real = (Matrix(4, 2) << -1, -s, 1, s, 0, 1, 2, 3).finished();
  const Matrix gen = (Matrix(4, 2) << -1, 0, 1, 0, 0, 1, 2, 3).finished();
  const std::vector<Condition> c = {{0, 0}, {0, 0}, {0, 1}, {0, 1}};
  EXPECT_NEAR(variance_loss(real, c, gen, c), 1.0, 1e-12);
}

TEST(VarianceLoss, MatchesIndependentComputation) {
  std::mt19937_64 rng(6);
  const Matrix real = oracle::gaussian_matrix(9, 3, rng);
  const Matrix gen = 2.0 * oracle::gaussian_matrix(9, 3, rng);
  const std::vector<Condition> c = {{0, 0}, {1, 1}, {0, 0}, {1, 1}, {0, 0}, {1, 1}, {2, 0}, {0, 0}, {1, 1}};
  // Group {2,0} has a single row and is skipped.
  double total = 0.0;
  int groups = 0;
  for (const Condition g : {Condition{0, 0}, Condition{1, 1}}) {
    double term = 0.0;
    for (int k = 0; k < 3; ++k) {
      std::vector<double> r, s;
      for (int i = 0; i < 9; ++i) {
        if (c[i] == g) {
          r.push_back(real(i, k));
          s.push_back(gen(i, k));
        }
      }
      const double gap = std::pow(oracle::population_std(r), 2) - std::pow(oracle::population_std(s), 2);
      term += gap * gap / 3.0;
    }
    total += term;
    ++groups;
  }
  EXPECT_NEAR(variance_loss(real, c, gen, c), total / groups, 1e-12);
}

TEST(VarianceLoss, NoEligibleGroup) {
  const Matrix x = Matrix::Zero(2, 1);
  EXPECT_ERROR_CODE(variance_loss(x, {{0, 0}, {1, 0}}, x, {{0, 0}, {1, 0}}), ErrorCode::kNoEligibleGroups);
}

class GeneratorLossTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::mt19937_64 rng(7);
    generator = GeneratorModel(small_generator(), FeatureSchema({"a", "b"}), {"p", "q"}, ClipRange{});
    generator.initialize(rng);
    critic = CriticModel(small_critic(2), 2, 2, 2, 2);
    critic.initialize(rng);
    z = oracle::gaussian_matrix(8, 4, rng);
    real = oracle::gaussian_matrix(8, 2, rng);
  }

  GeneratorModel generator;
  CriticModel critic;
  Matrix z;
  Matrix real;
  std::vector<Condition> packs = {{0, 0}, {1, 2}, {0, 0}, {1, 2}};
};

TEST_F(GeneratorLossTest, ZeroLambdaIsAdversarialOnly) {
  const auto res = generator_loss(z, packs, real, generator, critic, 0.0);
  std::vector<Condition> rows;
  for (const auto& c : packs) rows.insert(rows.end(), 2, c);
  const Matrix x = generator.sample(z, rows);
  const double expected = -critic.score(pack_rows(x, 2), packs).mean();
  EXPECT_NEAR(res.loss, expected, 1e-12);
  EXPECT_NEAR(res.adversarial, expected, 1e-12);
}

TEST_F(GeneratorLossTest, ConstantCriticLeavesVarianceTerm) {
  CriticConfig cfg = small_critic(2);
  cfg.widths = {};
  CriticModel constant(cfg, 2, 2, 2, 2);
  constant.trunk().parameters()[1](0, 0) = 0.75;
  const auto res = generator_loss(z, packs, real, generator, constant, 1.0);
  ASSERT_TRUE(res.variance_term_used);
  EXPECT_NEAR(res.loss, -0.75 + res.l_var, 1e-12);
  std::vector<Condition> rows;
  for (const auto& c : packs) rows.insert(rows.end(), 2, c);
  EXPECT_NEAR(res.l_var, variance_loss(real, rows, generator.sample(z, rows), rows), 1e-12);
}

TEST_F(GeneratorLossTest, GradientsMatchFiniteDifferences) {
  const auto res = generator_loss(z, packs, real, generator, critic, 1.0);
  auto refs = generator.parameter_refs();
  ASSERT_EQ(res.grads.size(), refs.size());
  for (std::size_t p = 0; p < refs.size(); ++p) {
    const auto f = [&](const std::vector<double>& v) {
      GeneratorModel copy = generator;
      auto r = copy.parameter_refs();
      *r[p] = Eigen::Map<const Matrix>(v.data(), refs[p]->rows(), refs[p]->cols());
      return generator_loss(z, packs, real, copy, critic, 1.0).loss;
    };
    const auto fd = oracle::central_differences(f, flat(*refs[p]), 1e-5);
    for (std::size_t i = 0; i < fd.size(); ++i) {
      EXPECT_LT(oracle::relative_error(res.grads[p].data()[i], fd[i], 1e-4), 1e-4) << "tensor " << p << " entry " << i;
    }
  }
}

TEST(Generator, OutputsStayInsideClipRange) {
  std::mt19937_64 rng(8);
  GeneratorModel g(small_generator(), FeatureSchema({"a", "b", "c"}), {"p"}, ClipRange{-5, 5});
  g.initialize(rng);
  for (auto& w : g.trunk().parameters()) w *= 25.0;
  const Matrix x = generate(g, "p", Portion::P2, 100000, 9);
  ASSERT_EQ(x.rows(), 100000);
  EXPECT_LE(x.cwiseAbs().maxCoeff(), 5.0);
  EXPECT_EQ(generate(g, "p", Portion::P1, 0, 9).rows(), 0);
  EXPECT_ERROR_CODE(generate(g, "ghost", Portion::P1, 1, 9), ErrorCode::kUnknownCondition);
}

TEST(Generator, SameSeedSameSamples) {
  std::mt19937_64 rng(10);
  GeneratorModel g(small_generator(), FeatureSchema({"a"}), {"p", "q"}, ClipRange{});
  g.initialize(rng);
  EXPECT_EQ(generate(g, "q", Portion::P3, 50, 4), generate(g, "q", Portion::P3, 50, 4));
  EXPECT_NE(generate(g, "q", Portion::P3, 50, 4), generate(g, "q", Portion::P3, 50, 5));
}

TEST(Config, Validation) {
  GeneratorConfig g;
  g.latent_dim = 0;
  EXPECT_ERROR_CODE(g.validate(), ErrorCode::kInvalidConfig);
  CriticConfig c;
  c.pack_size = 0;
  EXPECT_ERROR_CODE(c.validate(), ErrorCode::kInvalidConfig);
  TrainConfig t;
  t.lambda_gp = -1;
  EXPECT_ERROR_CODE(t.validate(), ErrorCode::kInvalidConfig);
  t = {};
  t.critic_learning_rate = 0;
  EXPECT_ERROR_CODE(t.validate(), ErrorCode::kInvalidConfig);
}

TEST(Train, ZeroStepsReturnsInitializedModelAndEmptyLog) {
  const auto data = tiny_cohort(20);
  const auto res = train(data, small_generator(), small_critic(2), short_training(0));
  EXPECT_TRUE(res.log.records.empty());
  EXPECT_GT(res.generator.trunk().parameters()[0].cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(res.generator.participants(), data.participants());
}

TEST(Train, RejectsRawData) {
  VirtualCohortConfig cfg;
  cfg.num_participants = 1;
  cfg.samples_per_portion = 5;
  EXPECT_ERROR_CODE(train(generate_virtual_cohort(cfg).data, small_generator(), small_critic(2), short_training(1)),
                    ErrorCode::kInvalidArgument);
}

TEST(Train, LogHasCriticAndGeneratorRecords) {
  const auto data = tiny_cohort(20);
  int observed = 0;
  const auto res = train(data, small_generator(), small_critic(2), short_training(5), ClipRange{},
                         [&](int, const TrainingLog&) { ++observed; });
  EXPECT_EQ(observed, 5);
  EXPECT_EQ(res.log.wasserstein_series().size(), 10u);
  EXPECT_EQ(res.log.penalty_series().size(), 10u);
  long generator_records = 0;
  for (const auto& r : res.log.records) {
    generator_records += r.kind == TrainingRecord::Kind::kGenerator;
    EXPECT_TRUE(std::isfinite(r.wasserstein) && std::isfinite(r.grad_penalty) && std::isfinite(r.l_var));
  }
  EXPECT_EQ(generator_records, 5);
  std::ostringstream csv;
  write_training_log(csv, res.log);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "step,kind,wasserstein,grad_penalty,l_var,adversarial");
}

TEST(Train, SameSeedGivesIdenticalCheckpoints) {
  const auto data = tiny_cohort(20);
  const auto a = train(data, small_generator(), small_critic(2), short_training(4));
  const auto b = train(data, small_generator(), small_critic(2), short_training(4));
  std::ostringstream ca, cb;
  write_checkpoint(ca, a.generator, a.critic);
  write_checkpoint(cb, b.generator, b.critic);
  EXPECT_EQ(ca.str(), cb.str());
  auto other = short_training(4);
  other.seed = 4;
  const auto c = train(data, small_generator(), small_critic(2), other);
  std::ostringstream cc;
  write_checkpoint(cc, c.generator, c.critic);
  EXPECT_NE(ca.str(), cc.str());
}

TEST(Checkpoint, RoundTripPreservesSamples) {
  const auto data = tiny_cohort(20);
  const auto trained = train(data, small_generator(), small_critic(2), short_training(2));
  oracle::TempDir dir("ckpt");
  save_checkpoint(dir / "model.bin", trained.generator, trained.critic, "train.seed = 3\n");
  const auto back = load_checkpoint(dir / "model.bin");
  EXPECT_EQ(back.config_echo, "train.seed = 3\n");
  EXPECT_EQ(back.generator.participants(), trained.generator.participants());
  EXPECT_EQ(back.generator.schema(), trained.generator.schema());
  EXPECT_EQ(generate(back.generator, "s02", Portion::P3, 30, 1), generate(trained.generator, "s02", Portion::P3, 30, 1));
  EXPECT_EQ(back.critic.trunk().parameters(), trained.critic.trunk().parameters());
  std::istringstream junk("garbage");
  EXPECT_ERROR_CODE(read_checkpoint(junk), ErrorCode::kIoError);
}

TEST(Checkpoint, PeriodicCheckpointsAreWritten) {
  oracle::TempDir dir("periodic");
  auto cfg = short_training(4);
  cfg.checkpoint_every = 2;
  cfg.checkpoint_dir = dir.path();
  train(tiny_cohort(20), small_generator(), small_critic(2), cfg);
  int files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++files;
  EXPECT_EQ(files, 3);
  for (const char* name : {"checkpoint_step_2.bin", "checkpoint_step_4.bin", "checkpoint_final.bin"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
  }
  EXPECT_NO_THROW(load_checkpoint(dir / "checkpoint_step_2.bin"));
}

TEST(GenerateMatching, CopiesGroupSizes) {
  const auto data = tiny_cohort(20);
  const auto trained = train(data, small_generator(), small_critic(2), short_training(1));
  Dataset like(data.schema(), FeatureSpace::kNormalized);
  for (std::size_t i = 0; i < data.size(); i += 3) like.add(data.samples()[i]);
  const auto synth = generate_matching(trained.generator, like, 5);
  EXPECT_EQ(synth.space(), FeatureSpace::kNormalized);
  EXPECT_EQ(synth.size(), like.size());
  for (const auto& p : like.participants()) {
    for (const auto portion : kAllPortions) EXPECT_EQ(synth.group_size(p, portion), like.group_size(p, portion));
  }
}

}  // namespace
}  // namespace eegbridge

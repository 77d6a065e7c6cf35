#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <string>

#include "cli.hpp"
#include "eegbridge/adaptive.hpp"
#include "eegbridge/autodiff.hpp"
#include "eegbridge/gan.hpp"
#include "eegbridge/harness.hpp"
#include "eegbridge/mlp.hpp"
#include "eegbridge/normalize.hpp"
#include "eegbridge/sbp.hpp"

namespace eegbridge::cli {

namespace {

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

Eigen::MatrixXd column(std::initializer_list<double> v) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

EnergyTable table(const Eigen::VectorXd& first, const Eigen::VectorXd& second) {
  EnergyTable t;
  t.transitions = default_transitions();
  t.energies.resize(first.size(), 2);
  t.energies.col(0) = first;
  t.energies.col(1) = second;
  for (Eigen::Index i = 0; i < first.size(); ++i) t.participants.push_back("s" + std::to_string(i + 1));
  return t;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

SBPConfig sbp_with(EpsilonMode mode, double eps) {
  SBPConfig c;
  c.epsilon_mode = mode;
  c.epsilon = eps;
  return c;
}

CriticModel scalar_critic(double w, double b) {
  CriticConfig cfg;
  cfg.pack_size = 1;
  cfg.widths = {};
  CriticModel critic(cfg, 1, 1, 0, 0);
  critic.trunk().parameters()[0](0, 0) = w;
  critic.trunk().parameters()[1](0, 0) = b;
  return critic;
}

Dataset small_dataset() {
  Dataset d(FeatureSchema({"a", "b"}), FeatureSpace::kRaw);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  for (const auto portion : {Portion::P1, Portion::P2}) {
    for (int i = 0; i < 20; ++i) {
      d.add(Sample{"s01", portion, Eigen::Vector2d(3.0 + 2.0 * n(rng), -1.0 + 0.5 * n(rng))});
    }
  }
  return d;
}

}  // namespace

SelftestReport run_selftest(std::ostream& log) {
  SelftestReport r;
  const auto check = [&](const std::string& name, const std::function<bool()>& fn) {
    bool ok = false;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      log << "  exception: " << e.what() << '\n';
    }
    ++r.total;
    if (ok) {
      ++r.passed;
    } else {
      r.failed.push_back(name);
    }
    log << (ok ? "ok   " : "FAIL ") << name << '\n';
  };

  check("single-point coupling is [[1]]", [] {
    const auto res = sinkhorn(vec({1.0}), vec({1.0}), Eigen::MatrixXd::Constant(1, 1, 3.0), SBPConfig{});
    return near(res.plan.coupling(0, 0), 1.0, 1e-12);
  });
  check("small-eps coupling of identical two-point sets is half identity", [] {
    const auto p = EmpiricalDistribution::uniform(column({0.0, 1.0}));
    const auto res = sbp_energy(p, p, sbp_with(EpsilonMode::kMaxCost, 1e-4));
    const auto& g = res.plan.coupling;
    return near(g(0, 0), 0.5, 1e-6) && near(g(1, 1), 0.5, 1e-6) && g(0, 1) < 1e-6 && g(1, 0) < 1e-6;
  });
  check("large-eps coupling is the product of marginals", [] {
    const auto p = EmpiricalDistribution::uniform(column({0.0, 1.0, 3.0}));
    const auto q = EmpiricalDistribution::uniform(column({-1.0, 2.0}));
    const auto res = sbp_energy(p, q, sbp_with(EpsilonMode::kMaxCost, 1e6));
    const Eigen::MatrixXd outer = p.weights * q.weights.transpose();
    return (res.plan.coupling - outer).cwiseAbs().maxCoeff() < 1e-6;
  });
  check("singleton energy is the squared distance for every eps", [] {
    const auto p = EmpiricalDistribution::uniform(column({0.0}));
    const auto q = EmpiricalDistribution::uniform(column({2.0}));
    for (double eps : {1e-3, 1.0, 1e3}) {
      if (!near(sbp_energy(p, q, sbp_with(EpsilonMode::kAbsolute, eps)).energy, 4.0, 1e-12)) return false;
    }
    return true;
  });
  check("self transport is near zero at small eps", [] {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd pts(12, 2);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = n(rng);
    const auto p = EmpiricalDistribution::uniform(pts);
    const auto res = sbp_energy(p, p, sbp_with(EpsilonMode::kMaxCost, 1e-4));
    return res.energy < 1e-3 * cost_matrix(p, p).mean();
  });
  check("Gaussian oracle closed forms", [] {
    const Eigen::MatrixXd one = Eigen::MatrixXd::Identity(1, 1);
    const Eigen::MatrixXd four = Eigen::MatrixXd::Constant(1, 1, 4.0);
    const Eigen::MatrixXd cov = (Eigen::Matrix2d() << 2.0, 0.3, 0.3, 1.0).finished();
    return near(gaussian_transport_oracle(Eigen::Vector2d(1, 2), cov, Eigen::Vector2d(1, 2), cov), 0.0, 1e-12) &&
           near(gaussian_transport_oracle(vec({0.0}), one, vec({1.0}), one), 1.0, 1e-12) &&
           near(gaussian_transport_oracle(vec({0.0}), one, vec({0.0}), four), 1.0, 1e-12);
  });

  check("d(x^2)/dx at 3 is 6", [] {
    ad::Tape tape;
    const auto x = tape.leaf(ad::Matrix::Constant(1, 1, 3.0));
    const std::vector<ad::Var> wrt = {x};
    return near(tape.gradient(ad::square(x), wrt)[0].value()(0, 0), 6.0, 1e-12);
  });
  check("gradient of ||x||^2/2 is x", [] {
    ad::Tape tape;
    const ad::Matrix v = (ad::Matrix(1, 3) << 0.5, -2.0, 1.5).finished();
    const auto x = tape.leaf(v);
    const std::vector<ad::Var> wrt = {x};
    const auto g = tape.gradient(ad::scale(ad::sum_all(ad::square(x)), 0.5), wrt)[0].value();
    return (g - v).cwiseAbs().maxCoeff() < 1e-12;
  });
  check("linear critic input gradient is its weight", [] {
    Mlp m(MlpSpec::dense_stack({3, 1}, Activation::kIdentity, Activation::kIdentity));
    m.parameters()[0] << 0.2, -0.7, 1.1;
    const ad::Matrix x = (ad::Matrix(2, 3) << 1, 2, 3, -4, 5, 0.5).finished();
    const auto g = input_gradient(m, x);
    return (g.row(0).transpose() - m.parameters()[0]).cwiseAbs().maxCoeff() < 1e-12 &&
           (g.row(1).transpose() - m.parameters()[0]).cwiseAbs().maxCoeff() < 1e-12;
  });
  check("zero residual block is the identity", [] {
    Mlp m(MlpSpec{{LayerSpec::residual(3, Activation::kTanh)}});
    const ad::Matrix x = (ad::Matrix(2, 3) << 1, 2, 3, -4, 5, 0.5).finished();
    return (m.predict(x) - x).cwiseAbs().maxCoeff() == 0.0;
  });
  check("penalty of D(x)=2x is 1 with weight gradient 2", [] {
    Mlp m(MlpSpec::dense_stack({1, 1}, Activation::kIdentity, Activation::kIdentity));
    m.parameters()[0](0, 0) = 2.0;
    const auto res = grad_penalty_backward(m, ad::Matrix::Constant(1, 1, 0.7));
    return near(res.penalty, 1.0, 1e-12) && near(res.params[0](0, 0), 2.0, 1e-12) && res.params[1](0, 0) == 0.0;
  });
  check("unit-norm linear critic has zero penalty and gradient", [] {
    Mlp m(MlpSpec::dense_stack({2, 1}, Activation::kIdentity, Activation::kIdentity));
    m.parameters()[0] << 0.6, 0.8;
    const auto res = grad_penalty_backward(m, (ad::Matrix(2, 2) << 1, 2, -3, 0.5).finished());
    double g = 0.0;
    for (const auto& p : res.params) g = std::max(g, p.cwiseAbs().maxCoeff());
    return near(res.penalty, 0.0, 1e-12) && g < 1e-12;
  });

  check("constant critic loss equals lambda_gp", [] {
    const auto critic = scalar_critic(0.0, 1.3);
    const ad::Matrix real = (ad::Matrix(2, 1) << 0.4, -1.0).finished();
    const ad::Matrix gen = (ad::Matrix(2, 1) << 2.0, 0.1).finished();
    const auto res = critic_loss(real, gen, vec({0.3, 0.8}), {{0, 0}, {0, 0}}, critic, 10.0);
    return near(res.loss, 10.0, 1e-12);
  });
  check("critic loss of D(x)=2x on zero data is 10", [] {
    const auto critic = scalar_critic(2.0, 0.0);
    const ad::Matrix zero = ad::Matrix::Zero(1, 1);
    return near(critic_loss(zero, zero, vec({0.5}), {{0, 0}}, critic, 10.0).loss, 10.0, 1e-12);
  });
  check("variance loss hand case is 2", [] {
    const double s = std::sqrt(2.0);
    const ad::Matrix real = (ad::Matrix(2, 2) << -1, -s, 1, s).finished();
    const ad::Matrix gen = (ad::Matrix(2, 2) << -1, 0, 1, 0).finished();
    return near(variance_loss(real, {{0, 0}, {0, 0}}, gen, {{0, 0}, {0, 0}}), 2.0, 1e-12);
  });
  check("variance loss averages over groups", [] {
    const double s = std::sqrt(2.0);
    const ad::Matrix real = (ad::Matrix(4, 2) << -1, -s, 1, s, 0, 1, 2, 3).finished();
    const ad::Matrix gen = (ad::Matrix(4, 2) << -1, 0, 1, 0, 0, 1, 2, 3).finished();
    const std::vector<Condition> c = {{0, 0}, {0, 0}, {0, 1}, {0, 1}};
    return near(variance_loss(real, c, gen, c), 1.0, 1e-12);
  });
  check("pack width is m*d plus both embeddings", [] {
    CriticConfig cfg;
    cfg.pack_size = 2;
    const CriticModel critic(cfg, 3, 2, 8, 8);
    const auto v = pack({Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(4, 5, 6)}, {{1, 2}, {1, 2}}, critic);
    return v.size() == 2 * 3 + 8 + 8 && v[3] == 4.0;
  });
  check("mixed-condition pack is rejected", [] {
    CriticConfig cfg;
    cfg.pack_size = 2;
    const CriticModel critic(cfg, 3, 2, 8, 8);
    try {
      pack({Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(4, 5, 6)}, {{0, 0}, {1, 0}}, critic);
    } catch (const Error& e) {
      return e.code() == ErrorCode::kMixedConditionPack;
    }
    return false;
  });

  check("baseline group re-normalizes to mean 0 and inverts exactly", [] {
    const auto data = small_dataset();
    const auto res = normalize_dataset(data);
    const auto st = feature_statistics(res.dataset, "s01", Portion::P1);
    const auto& stats = res.stats[0];
    const Eigen::Vector2d x(2.5, -0.75);
    return st.mean.cwiseAbs().maxCoeff() <= 1e-9 && (invert(apply(x, stats, ClipRange{}), stats) - x).norm() < 1e-12;
  });

  check("direction agreement: identical 1, flipped 0, published tables 0.7", [] {
    const auto real = table(vec({.000391, .000518, .000725, .000692, .000790, .000508, .000686, .000544, .000695, .000858}),
                            vec({.000491, .000549, .000740, .000907, .001063, .000835, .000556, .000443, .000694, .002588}));
    const auto gan = table(vec({.000845, .000860, .000558, .000753, .000581, .000951, .000693, .001016, .000740, .000768}),
                           vec({.000885, .001127, .000951, .000932, .000830, .000948, .000741, .000836, .000830, .000779}));
    const auto flipped = table(real.energies.col(1), real.energies.col(0));
    const auto [t1, t2] = std::pair{default_transitions()[0], default_transitions()[1]};
    return direction_agreement(real, real, t1, t2) == 1.0 && direction_agreement(real, flipped, t1, t2) == 0.0 &&
           direction_agreement(real, gan, t1, t2) == 0.7;
  });
  check("rank correlation of identical and reversed columns", [] {
    const auto a = vec({0.3, 1.2, 0.7, 2.0});
    return near(rank_correlation(a, a), 1.0, 1e-12) && near(rank_correlation(a, -a), -1.0, 1e-12);
  });
  check("single-participant summary has zero std", [] {
    const auto s = group_summary(vec({0.0042}));
    return s.mean == 0.0042 && s.std == 0.0;
  });
  check("virtual cohort row count", [] {
    VirtualCohortConfig cfg;
    cfg.samples_per_portion = 100;
    return generate_virtual_cohort(cfg).data.size() == 4000;
  });

  check("window of 10 with stride 5 scores after samples 10 and 15", [] {
    const auto ref = EmpiricalDistribution::uniform(column({0.0, 1.0, 2.0}));
    WindowConfig cfg;
    cfg.window = 10;
    cfg.stride = 5;
    WindowState state(ref, cfg);
    std::vector<std::size_t> at;
    for (int i = 1; i <= 16; ++i) {
      if (state.ingest(vec({0.1 * i}))) at.push_back(static_cast<std::size_t>(i));
    }
    return at == std::vector<std::size_t>{10, 15};
  });
  check("controller holds midway and reduces beyond the band", [] {
    ControllerConfig c;
    c.theta_low = 1.0;
    c.theta_high = 3.0;
    c.hysteresis = 0.2;
    return decide(2.0, Decision::kHold, c) == Decision::kHold &&
           decide(3.0 + 2 * 0.2, Decision::kHold, c) == Decision::kReduceChallenge;
  });
  check("empty stream gives an empty trace", [] {
    ControllerConfig c;
    const auto ref = EmpiricalDistribution::uniform(column({0.0, 1.0}));
    return simulate(Eigen::MatrixXd(0, 1), ref, WindowConfig{}, c).empty();
  });
  return r;
}

}  // namespace eegbridge::cli

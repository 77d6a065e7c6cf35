#include "eegbridge/sbp.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "eegbridge/csv.hpp"
#include "eegbridge/error.hpp"

namespace eegbridge {

namespace {

// Intermediate epsilon-scaling stages only need a rough warm start.
constexpr double kScalingStageTolerance = 1e-4;
constexpr std::size_t kRelaxProbe = 20;
constexpr double kMaxRelaxation = 1.99;
constexpr double kAbsorbLog = 50.0;
constexpr int kMaxRebuilds = 20;
constexpr Eigen::Index kNewtonMaxSize = 1200;
constexpr int kNewtonSteps = 60;
constexpr int kNewtonSwitch = 1500;

double log_sum_exp(const Eigen::ArrayXd& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v - mx).exp().sum());
}

double median_of(const Eigen::MatrixXd& m) {
  std::vector<double> values(m.data(), m.data() + m.size());
  const auto mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  double med = values[mid];
  if (values.size() % 2 == 0) {
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    med = 0.5 * (med + lower);
  }
  return med;
}

double marginal_violation(const Eigen::MatrixXd& coupling, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double rows = (coupling.rowwise().sum() - a).cwiseAbs().sum();
  const double cols = (coupling.colwise().sum().transpose() - b).cwiseAbs().sum();
  return std::max(rows, cols);
}

}  // namespace

EmpiricalDistribution EmpiricalDistribution::uniform(Eigen::MatrixXd points) {
  const auto n = points.rows();
  if (n == 0) fail(ErrorCode::kEmptyGroup, "empirical distribution needs at least one point");
  EmpiricalDistribution d{std::move(points), Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n))};
  return d;
}

void EmpiricalDistribution::validate() const {
  if (points.rows() == 0) fail(ErrorCode::kEmptyGroup, "empirical distribution needs at least one point");
  if (weights.size() != points.rows()) {
    fail(ErrorCode::kDimensionMismatch, "weights and points disagree in count");
  }
  if (!points.allFinite()) fail(ErrorCode::kNonFiniteValue, "distribution support is not finite");
  if ((weights.array() < 0.0).any()) fail(ErrorCode::kInvalidArgument, "negative weight");
  if (std::abs(weights.sum() - 1.0) > 1e-12) {
    fail(ErrorCode::kInvalidArgument, "weights sum to " + csv::format_double(weights.sum()) + ", not 1");
  }
}

EmpiricalDistribution EmpiricalDistribution::pruned() const {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (weights[i] > 0.0) keep.push_back(i);
  }
  if (keep.size() == static_cast<std::size_t>(weights.size())) return *this;
  EmpiricalDistribution out{Eigen::MatrixXd(static_cast<Eigen::Index>(keep.size()), points.cols()),
                            Eigen::VectorXd(static_cast<Eigen::Index>(keep.size()))};
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.points.row(static_cast<Eigen::Index>(k)) = points.row(keep[k]);
    out.weights[static_cast<Eigen::Index>(k)] = weights[keep[k]];
  }
  return out;
}

void SBPConfig::validate() const {
  if (!(epsilon > 0.0)) fail(ErrorCode::kInvalidConfig, "sbp epsilon must be positive");
  if (!(tolerance > 0.0)) fail(ErrorCode::kInvalidConfig, "sbp tolerance must be positive");
  if (max_iterations < 1) fail(ErrorCode::kInvalidConfig, "sbp max_iterations must be >= 1");
  if (epsilon_scaling_steps < 1) fail(ErrorCode::kInvalidConfig, "sbp epsilon_scaling_steps must be >= 1");
}

std::string_view to_string(EpsilonMode mode) {
  switch (mode) {
    case EpsilonMode::kAbsolute: return "absolute";
    case EpsilonMode::kMedianCost: return "median";
    case EpsilonMode::kMaxCost: return "max";
  }
  return "median";
}

EpsilonMode parse_epsilon_mode(std::string_view text) {
  if (text == "absolute") return EpsilonMode::kAbsolute;
  if (text == "median") return EpsilonMode::kMedianCost;
  if (text == "max") return EpsilonMode::kMaxCost;
  fail(ErrorCode::kInvalidConfig, "unknown epsilon mode '" + std::string(text) + "'");
}

Eigen::MatrixXd cost_matrix(const EmpiricalDistribution& p, const EmpiricalDistribution& q) {
  if (p.dimension() != q.dimension()) {
    fail(ErrorCode::kDimensionMismatch, "cost matrix between dimensions " + std::to_string(p.dimension()) +
                                            " and " + std::to_string(q.dimension()));
  }
  Eigen::MatrixXd c(p.size(), q.size());
  // Direct differences rather than the |p|^2 + |q|^2 - 2pq expansion: exact zeros
  // on coincident points and no cancellation.
  for (Eigen::Index j = 0; j < q.size(); ++j) {
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      c(i, j) = (p.points.row(i) - q.points.row(j)).squaredNorm();
    }
  }
  return c;
}

double resolve_epsilon(const Eigen::MatrixXd& cost, const SBPConfig& cfg) {
  cfg.validate();
  double scale = 1.0;
  switch (cfg.epsilon_mode) {
    case EpsilonMode::kAbsolute: return cfg.epsilon;
    case EpsilonMode::kMedianCost: scale = median_of(cost); break;
    case EpsilonMode::kMaxCost: scale = cost.maxCoeff(); break;
  }
  if (!(scale > 0.0)) scale = cost.maxCoeff();
  if (!(scale > 0.0)) scale = 1.0;  // all-zero cost: every coupling is optimal
  return cfg.epsilon * scale;
}

SinkhornResult sinkhorn(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& cost,
                        const SBPConfig& cfg, const SinkhornPotentials* warm_start) {
  cfg.validate();
  const auto n = a.size();
  const auto m = b.size();
  if (cost.rows() != n || cost.cols() != m) {
    fail(ErrorCode::kDimensionMismatch, "cost matrix shape does not match the marginals");
  }
  if (n == 0 || m == 0) fail(ErrorCode::kInvalidArgument, "empty marginal");
  if ((a.array() <= 0.0).any() || (b.array() <= 0.0).any()) {
    fail(ErrorCode::kInvalidArgument, "marginals must be strictly positive; prune zero-weight points first");
  }
  if (!cost.allFinite()) fail(ErrorCode::kNonFiniteValue, "cost matrix is not finite");

  const double eps_target = resolve_epsilon(cost, cfg);
  const Eigen::ArrayXd log_a = a.array().log();
  const Eigen::ArrayXd log_b = b.array().log();
  const Eigen::MatrixXd cost_t = cost.transpose();

  Eigen::ArrayXd f = Eigen::ArrayXd::Zero(n);
  Eigen::ArrayXd g = Eigen::ArrayXd::Zero(m);
  if (warm_start != nullptr && warm_start->f.size() == n && warm_start->g.size() == m) {
    f = warm_start->f.array();
    g = warm_start->g.array();
  }

  SinkhornResult result;
  result.epsilon = eps_target;
  Eigen::ArrayXd col_buf(n);
  Eigen::ArrayXd row_buf(m);

  // One exact log-domain sweep; afterwards every kernel row sums to a_i.
  const auto recenter = [&](double eps) {
    for (Eigen::Index j = 0; j < m; ++j) {
      col_buf = (f - cost.col(j).array()) / eps;
      g[j] = eps * (log_b[j] - log_sum_exp(col_buf));
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      row_buf = (g - cost_t.col(i).array()) / eps;
      f[i] = eps * (log_a[i] - log_sum_exp(row_buf));
    }
    ++result.iterations;
    if (!f.allFinite() || !g.allFinite()) fail(ErrorCode::kNumericalOverflow, "Sinkhorn potentials became non-finite");
  };

  Eigen::MatrixXd kernel(n, m);
  const auto build_kernel = [&](double eps) {
    kernel = ((cost.array().colwise() - f).rowwise() - g.transpose()).matrix();
    kernel = (-kernel.array() / eps).exp().matrix();
  };

  // Damped Newton ascent on the dual with g[m-1] pinned, for small problems
  // where the scaling iterations stall near a permutation-like plan.
  const auto newton_polish = [&](double eps, double tol, int max_steps) {
    const auto plan_of = [&](const Eigen::ArrayXd& ff, const Eigen::ArrayXd& gg) -> Eigen::MatrixXd {
      return Eigen::MatrixXd(((-cost.array()).colwise() + ff).rowwise() + gg.transpose()) / eps;
    };
    const auto dual = [&](const Eigen::ArrayXd& ff, const Eigen::ArrayXd& gg, const Eigen::MatrixXd& plan) {
      return (ff * a.array()).sum() + (gg * b.array()).sum() - eps * plan.sum();
    };
    Eigen::MatrixXd plan = plan_of(f, g).array().exp().matrix();
    for (int step = 0; step < max_steps; ++step) {
      const Eigen::VectorXd rows = plan.rowwise().sum() - a;
      const Eigen::VectorXd cols = plan.colwise().sum().transpose() - b;
      if (std::max(rows.cwiseAbs().sum(), cols.cwiseAbs().sum()) <= tol) return;
      const Eigen::Index k = n + m - 1;
      Eigen::MatrixXd h = Eigen::MatrixXd::Zero(k, k);
      h.topLeftCorner(n, n).diagonal() = rows + a;
      h.topRightCorner(n, m - 1) = plan.leftCols(m - 1);
      h.bottomLeftCorner(m - 1, n) = plan.leftCols(m - 1).transpose();
      h.bottomRightCorner(m - 1, m - 1).diagonal() = (cols + b).head(m - 1);
      Eigen::VectorXd residual(k);
      residual << rows, cols.head(m - 1);
      const Eigen::VectorXd delta = -eps * h.ldlt().solve(residual);
      if (!delta.allFinite()) return;
      const double slope = -residual.dot(delta);
      const double base = dual(f, g, plan);
      double t = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
        Eigen::ArrayXd ff = f + t * delta.head(n).array();
        Eigen::ArrayXd gg = g;
        gg.head(m - 1) += t * delta.tail(m - 1).array();
        Eigen::MatrixXd trial = plan_of(ff, gg).array().exp().matrix();
        if (!trial.allFinite()) continue;
        if (dual(ff, gg, trial) >= base + 1e-4 * t * slope) {
          f = std::move(ff);
          g = std::move(gg);
          plan = std::move(trial);
          moved = true;
          break;
        }
      }
      ++result.iterations;
      if (!moved) return;
    }
  };

  // Scaling-domain iterations on the kernel exp((f_i + g_j - C_ij) / eps),
  // folding the scalings back into (f, g) before they leave a safe range.
  for (int stage = 0; stage < cfg.epsilon_scaling_steps; ++stage) {
    const bool last_stage = stage + 1 == cfg.epsilon_scaling_steps;
    const double eps = eps_target * std::ldexp(1.0, cfg.epsilon_scaling_steps - 1 - stage);
    const double stage_tol = last_stage ? 0.5 * cfg.tolerance : std::max(cfg.tolerance, kScalingStageTolerance);
    recenter(eps);
    build_kernel(eps);
    Eigen::ArrayXd log_u = Eigen::ArrayXd::Zero(n);
    Eigen::ArrayXd log_v = Eigen::ArrayXd::Zero(m);
    Eigen::ArrayXd u = Eigen::ArrayXd::Ones(n);
    Eigen::ArrayXd v = Eigen::ArrayXd::Ones(m);
    const auto absorb = [&] {
      f += eps * log_u;
      g += eps * log_v;
      log_u.setZero();
      log_v.setZero();
      u.setOnes();
      v.setOnes();
    };

    // Successive over-relaxation: plain updates first, then a factor chosen
    // from the observed contraction rate.
    double omega = 1.0;
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> history;
    int rebuilds = 0;
    double last_err = std::numeric_limits<double>::infinity();
    const bool newton = last_stage && n + m <= kNewtonMaxSize;
    const int sweep_budget = newton ? std::min(cfg.max_iterations, kNewtonSwitch) : cfg.max_iterations;
    int it = 1;
    for (; it < sweep_budget; ++it) {
      const Eigen::ArrayXd kt_u = (kernel.transpose() * u.matrix()).array();
      const Eigen::ArrayXd log_v_sink = log_b - kt_u.log();
      log_v = omega == 1.0 ? log_v_sink : ((1.0 - omega) * log_v + omega * log_v_sink).eval();
      v = log_v.exp();
      const Eigen::ArrayXd k_v = (kernel * v.matrix()).array();
      const Eigen::ArrayXd log_u_sink = log_a - k_v.log();
      ++result.iterations;
      if (!log_u_sink.allFinite() || !log_v.allFinite()) {
        // A scaling left the representable range: fold back the last good
        // iterate and restart the stage from exact potentials.
        if (++rebuilds > kMaxRebuilds) fail(ErrorCode::kNumericalOverflow, "Sinkhorn scalings became non-finite");
        log_v = log_v.unaryExpr([](double x) { return std::isfinite(x) ? x : 0.0; });
        absorb();
        recenter(eps);
        build_kernel(eps);
        continue;
      }
      // Plan diag(u) K diag(v): row sums u * (K v), column sums v * (K^T u).
      double err = (u * k_v - a.array()).abs().sum();
      if (omega != 1.0) err = std::max(err, (v * kt_u - b.array()).abs().sum());
      last_err = err;
      if (err <= stage_tol) break;

      best = std::min(best, err);
      if (omega > 1.0 && err > 1e3 * best) omega = 1.0;
      history.push_back(err);
      if (history.size() % kRelaxProbe == 0) {
        // Observed rate mu under factor omega maps back to the plain Sinkhorn
        // rate lambda through (mu + omega - 1)^2 = omega^2 * lambda * mu.
        const auto k = history.size();
        const double mu = std::pow(history[k - 1] / history[k - 1 - kRelaxProbe / 2], 2.0 / kRelaxProbe);
        if (mu > 0.0 && mu < 1.0) {
          const double lambda = std::min(1.0, (mu + omega - 1.0) * (mu + omega - 1.0) / (omega * omega * mu));
          omega = std::max(omega, std::min(kMaxRelaxation, 2.0 / (1.0 + std::sqrt(1.0 - lambda))));
        }
      }
      log_u = omega == 1.0 ? log_u_sink : ((1.0 - omega) * log_u + omega * log_u_sink).eval();
      u = log_u.exp();
      if (log_u.abs().maxCoeff() > kAbsorbLog || log_v.abs().maxCoeff() > kAbsorbLog) {
        absorb();
        build_kernel(eps);
      }
    }
    absorb();
    if (newton && last_err > stage_tol) newton_polish(eps, stage_tol, std::min(kNewtonSteps, cfg.max_iterations - it));
  }

  Eigen::MatrixXd coupling(n, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    coupling.col(j) = ((f + g[j] - cost.col(j).array()) / eps_target).exp().matrix();
  }
  result.plan = TransportPlan{std::move(coupling), a, b};
  result.potentials = SinkhornPotentials{f.matrix(), g.matrix()};
  result.marginal_error = marginal_violation(result.plan.coupling, a, b);
  result.converged = result.marginal_error <= cfg.tolerance;
  return result;
}

namespace {

// Total order on distributions: size, then weights, then points.
bool canonically_before(const EmpiricalDistribution& a, const EmpiricalDistribution& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  const auto lex = [](const auto& x, const auto& y) {
    return std::lexicographical_compare(x.data(), x.data() + x.size(), y.data(), y.data() + y.size());
  };
  if (lex(a.weights, b.weights)) return true;
  if (lex(b.weights, a.weights)) return false;
  return lex(a.points, b.points);
}

}  // namespace

SBPResult sbp_energy(const EmpiricalDistribution& p0, const EmpiricalDistribution& p1, const SBPConfig& cfg,
                     const SinkhornPotentials* warm_start) {
  p0.validate();
  p1.validate();
  const auto src = p0.pruned();
  const auto dst = p1.pruned();
  const Eigen::MatrixXd cost = cost_matrix(src, dst);

  // Both argument orders run the identical solve, so the energy is symmetric.
  const bool flip = canonically_before(dst, src);
  SinkhornResult solved;
  if (flip) {
    std::optional<SinkhornPotentials> warm;
    if (warm_start) warm = SinkhornPotentials{warm_start->g, warm_start->f};
    const Eigen::MatrixXd cost_t = cost.transpose();
    solved = sinkhorn(dst.weights, src.weights, cost_t, cfg, warm ? &*warm : nullptr);
    solved.plan.coupling.transposeInPlace();
    std::swap(solved.plan.source_marginal, solved.plan.target_marginal);
    std::swap(solved.potentials.f, solved.potentials.g);
  } else {
    solved = sinkhorn(src.weights, dst.weights, cost, cfg, warm_start);
  }
  SBPResult r;
  r.energy = (solved.plan.coupling.array() * cost.array()).sum();
  r.plan = std::move(solved.plan);
  r.potentials = std::move(solved.potentials);
  r.epsilon = solved.epsilon;
  r.iterations_used = solved.iterations;
  r.converged = solved.converged;
  r.marginal_error = solved.marginal_error;
  return r;
}

void require_converged(const SBPResult& result) {
  if (!result.converged) {
    fail(ErrorCode::kNotConverged, "Sinkhorn stopped after " + std::to_string(result.iterations_used) +
                                       " iterations with marginal error " +
                                       csv::format_double(result.marginal_error));
  }
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) fail(ErrorCode::kNotPSD, "matrix is not square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) fail(ErrorCode::kNotPSD, "matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd ev = es.eigenvalues();
  if (ev.minCoeff() < -1e-10 * scale) {
    fail(ErrorCode::kNotPSD, "matrix has eigenvalue " + csv::format_double(ev.minCoeff()));
  }
  ev = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double gaussian_transport_oracle(const Eigen::VectorXd& mu0, const Eigen::MatrixXd& cov0,
                                 const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1) {
  const auto d = mu0.size();
  if (mu1.size() != d || cov0.rows() != d || cov1.rows() != d) {
    fail(ErrorCode::kDimensionMismatch, "Gaussian parameters disagree in dimension");
  }
  const Eigen::MatrixXd root0 = psd_sqrt(cov0);
  psd_sqrt(cov1);  // validates cov1
  Eigen::MatrixXd cross = root0 * cov1 * root0;
  cross = 0.5 * (cross + cross.transpose());
  const double bures = (cov0 + cov1 - 2.0 * psd_sqrt(cross)).trace();
  return std::max(0.0, (mu0 - mu1).squaredNorm() + bures);
}

std::string Transition::label() const {
  return std::string(to_string(from)) + "->" + std::string(to_string(to));
}

std::vector<Transition> parse_transitions(std::string_view text) {
  std::vector<Transition> out;
  for (const auto& item : csv::split_line(text)) {
    if (item.empty()) continue;
    auto sep = item.find("->");
    std::size_t width = 2;
    if (sep == std::string::npos) {
      sep = item.find(':');
      width = 1;
    }
    if (sep == std::string::npos) fail(ErrorCode::kInvalidArgument, "bad transition '" + item + "'");
    out.push_back(Transition{parse_portion(csv::trim(item.substr(0, sep))),
                             parse_portion(csv::trim(item.substr(sep + width)))});
  }
  if (out.empty()) fail(ErrorCode::kInvalidArgument, "no transitions given");
  return out;
}

std::size_t EnergyTable::column_index(const Transition& t) const {
  const auto it = std::find(transitions.begin(), transitions.end(), t);
  if (it == transitions.end()) fail(ErrorCode::kEmptyColumn, "energy table has no column " + t.label());
  return static_cast<std::size_t>(it - transitions.begin());
}

Eigen::VectorXd EnergyTable::column(const Transition& t) const {
  return energies.col(static_cast<Eigen::Index>(column_index(t)));
}

EnergyTable energy_table(const Dataset& dataset, const std::vector<Transition>& transitions,
                         const SBPConfig& cfg, int threads) {
  cfg.validate();
  EnergyTable table;
  table.participants = dataset.participants();
  table.transitions = transitions;
  for (const auto& p : table.participants) {
    for (const auto& t : transitions) {
      for (const auto portion : {t.from, t.to}) {
        if (!dataset.has_group(p, portion)) {
          fail(ErrorCode::kEmptyGroup, "participant '" + p + "' has no " + std::string(to_string(portion)) + " samples");
        }
      }
    }
  }
  const auto np = table.participants.size();
  const auto nt = transitions.size();
  table.energies = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(nt));
  table.diagnostics.resize(np * nt);
  std::vector<std::exception_ptr> errors(np * nt);

  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t job = next++; job < np * nt; job = next++) {
      const auto pi = job / nt;
      const auto ti = job % nt;
      const auto& participant = table.participants[pi];
      const auto& t = transitions[ti];
      try {
        const auto src = EmpiricalDistribution::uniform(group(dataset, participant, t.from));
        const auto dst = EmpiricalDistribution::uniform(group(dataset, participant, t.to));
        const auto r = sbp_energy(src, dst, cfg);
        table.energies(static_cast<Eigen::Index>(pi), static_cast<Eigen::Index>(ti)) = r.energy;
        table.diagnostics[job] = SolveDiagnostics{participant, t, r.epsilon, r.iterations_used, r.marginal_error,
                                                  r.converged};
      } catch (...) {
        errors[job] = std::current_exception();
      }
    }
  };
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(np * nt)));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return table;
}

void write_energy_table(std::ostream& out, const EnergyTable& table) {
  out << "participant_id";
  for (const auto& t : table.transitions) out << ',' << t.label();
  out << '\n';
  for (std::size_t i = 0; i < table.participants.size(); ++i) {
    out << table.participants[i];
    for (std::size_t k = 0; k < table.transitions.size(); ++k) {
      out << ',' << csv::format_double(table.energies(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
    }
    out << '\n';
  }
}

void save_energy_table(const std::filesystem::path& path, const EnergyTable& table) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  write_energy_table(out, table);
}

EnergyTable read_energy_table(std::istream& in) {
  EnergyTable table;
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (csv::is_skippable(line)) continue;
    header = csv::split_line(line);
    break;
  }
  if (header.empty()) fail(ErrorCode::kEmptyFile, "energy table has no header");
  if (header[0] != "participant_id") fail(ErrorCode::kMissingColumn, "energy table lacks participant_id");
  for (std::size_t k = 1; k < header.size(); ++k) {
    table.transitions.push_back(parse_transitions(header[k]).front());
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (csv::is_skippable(line)) continue;
    const auto f = csv::split_line(line);
    if (f.size() != header.size()) fail(ErrorCode::kParseError, "energy table: wrong field count");
    table.participants.push_back(f[0]);
    std::vector<double> row(f.size() - 1);
    for (std::size_t k = 1; k < f.size(); ++k) {
      if (!csv::parse_double(f[k], row[k - 1]) || !std::isfinite(row[k - 1])) {
        fail(ErrorCode::kNonFiniteValue, "energy table: bad value '" + f[k] + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  table.energies.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(table.transitions.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < rows[i].size(); ++k) {
      table.energies(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
  }
  return table;
}

EnergyTable load_energy_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  return read_energy_table(in);
}

void write_diagnostics_jsonl(std::ostream& out, const std::vector<SolveDiagnostics>& diagnostics) {
  for (const auto& d : diagnostics) {
    nlohmann::ordered_json j;
    j["participant"] = d.participant;
    j["transition"] = d.transition.label();
    j["epsilon"] = d.epsilon;
    j["iterations"] = d.iterations;
    j["marginal_error"] = d.marginal_error;
    j["converged"] = d.converged;
    out << j.dump() << '\n';
  }
}

}  // namespace eegbridge

#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eegbridge/dataset.hpp"

namespace eegbridge {

// Weighted point cloud. Rows of `points` are support points.
struct EmpiricalDistribution {
  Eigen::MatrixXd points;
  Eigen::VectorXd weights;

  static EmpiricalDistribution uniform(Eigen::MatrixXd points);

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dimension() const { return points.cols(); }
  void validate() const;
  // Drops zero-weight points; the solver requires strictly positive marginals.
  EmpiricalDistribution pruned() const;
};

// How SBPConfig::epsilon is interpreted.
enum class EpsilonMode {
  kAbsolute,    // epsilon is in squared feature units
  kMedianCost,  // epsilon * median(C)
  kMaxCost,     // epsilon * max(C)
};

struct SBPConfig {
  double epsilon = 0.05;
  EpsilonMode epsilon_mode = EpsilonMode::kMedianCost;
  int max_iterations = 10000;
  double tolerance = 1e-8;
  int epsilon_scaling_steps = 4;

  void validate() const;
};

std::string_view to_string(EpsilonMode mode);
EpsilonMode parse_epsilon_mode(std::string_view text);

struct TransportPlan {
  Eigen::MatrixXd coupling;
  Eigen::VectorXd source_marginal;
  Eigen::VectorXd target_marginal;
};

// Dual potentials of the entropic problem, usable as a warm start.
struct SinkhornPotentials {
  Eigen::VectorXd f;
  Eigen::VectorXd g;
};

struct SinkhornResult {
  TransportPlan plan;
  SinkhornPotentials potentials;
  double epsilon = 0.0;
  int iterations = 0;
  bool converged = false;
  double marginal_error = 0.0;  // max of L1 row and L1 column violation
};

struct SBPResult {
  double energy = 0.0;
  TransportPlan plan;
  SinkhornPotentials potentials;
  double epsilon = 0.0;
  int iterations_used = 0;
  bool converged = false;
  double marginal_error = 0.0;
};

// C_ij = ||p_i - q_j||^2.
Eigen::MatrixXd cost_matrix(const EmpiricalDistribution& p, const EmpiricalDistribution& q);

// The absolute regularization strength cfg resolves to for cost matrix C.
double resolve_epsilon(const Eigen::MatrixXd& cost, const SBPConfig& cfg);

// Log-domain Sinkhorn with epsilon scaling. A non-converged solve returns the
// last iterate with converged = false; see require_converged.
SinkhornResult sinkhorn(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& cost,
                        const SBPConfig& cfg, const SinkhornPotentials* warm_start = nullptr);

// Transport term <coupling, C> of the entropic Schrodinger bridge between p0 and p1.
SBPResult sbp_energy(const EmpiricalDistribution& p0, const EmpiricalDistribution& p1, const SBPConfig& cfg,
                     const SinkhornPotentials* warm_start = nullptr);

// Throws NotConverged when the solve did not reach its tolerance.
void require_converged(const SBPResult& result);

// Exact squared 2-Wasserstein distance between two Gaussians (Bures formula).
double gaussian_transport_oracle(const Eigen::VectorXd& mu0, const Eigen::MatrixXd& cov0,
                                 const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1);

// Principal square root of a symmetric PSD matrix; throws NotPSD otherwise.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m);

struct Transition {
  Portion from = Portion::P1;
  Portion to = Portion::P2;

  std::string label() const;  // "P1->P2"
  friend bool operator==(const Transition&, const Transition&) = default;
};

// Parses "P1:P2,P1:P3" (also accepts "P1->P2").
std::vector<Transition> parse_transitions(std::string_view text);
inline std::vector<Transition> default_transitions() {
  return {{Portion::P1, Portion::P2}, {Portion::P1, Portion::P3}};
}

struct SolveDiagnostics {
  std::string participant;
  Transition transition;
  double epsilon = 0.0;
  int iterations = 0;
  double marginal_error = 0.0;
  bool converged = false;
};

// energies(i, k) is participant i's energy for transitions[k].
struct EnergyTable {
  std::vector<std::string> participants;
  std::vector<Transition> transitions;
  Eigen::MatrixXd energies;
  std::vector<SolveDiagnostics> diagnostics;

  Eigen::VectorXd column(const Transition& t) const;
  std::size_t column_index(const Transition& t) const;
};

// Independent solves run on up to `threads` workers; results do not depend on
// the thread count.
EnergyTable energy_table(const Dataset& dataset, const std::vector<Transition>& transitions,
                         const SBPConfig& cfg, int threads = 1);

void write_energy_table(std::ostream& out, const EnergyTable& table);
void save_energy_table(const std::filesystem::path& path, const EnergyTable& table);
EnergyTable read_energy_table(std::istream& in);
EnergyTable load_energy_table(const std::filesystem::path& path);

// One JSON object per line: participant, transition, epsilon, iterations, marginal_error, converged.
void write_diagnostics_jsonl(std::ostream& out, const std::vector<SolveDiagnostics>& diagnostics);

}  // namespace eegbridge

#include "eegbridge/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <type_traits>

#include "eegbridge/csv.hpp"
#include "eegbridge/error.hpp"
#include "eegbridge/manifest.hpp"
#include "eegbridge/random.hpp"

namespace eegbridge {

namespace {

std::string participant_id(int i) {
  std::ostringstream out;
  out << 's' << (i + 1 < 10 ? "0" : "") << (i + 1);
  return out.str();
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> average_ranks(const Eigen::VectorXd& v) {
  const auto n = static_cast<std::size_t>(v.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return v[static_cast<Eigen::Index>(a)] < v[static_cast<Eigen::Index>(b)];
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[static_cast<Eigen::Index>(order[j + 1])] == v[static_cast<Eigen::Index>(order[i])]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

int sign_with_ties(double diff, double tol) {
  if (std::abs(diff) < tol) return 0;
  return diff > 0 ? 1 : -1;
}

// Row of `table` for each participant of `ids`; throws ParticipantMismatch.
std::vector<Eigen::Index> align(const std::vector<std::string>& ids, const EnergyTable& table) {
  if (ids.size() != table.participants.size()) {
    fail(ErrorCode::kParticipantMismatch, "tables have " + std::to_string(ids.size()) + " and " +
                                               std::to_string(table.participants.size()) + " participants");
  }
  std::vector<Eigen::Index> rows;
  for (const auto& id : ids) {
    const auto it = std::find(table.participants.begin(), table.participants.end(), id);
    if (it == table.participants.end()) {
      fail(ErrorCode::kParticipantMismatch, "participant '" + id + "' missing from the second table");
    }
    rows.push_back(static_cast<Eigen::Index>(it - table.participants.begin()));
  }
  return rows;
}

void check_drift(const std::vector<double>& drift, std::size_t d, int portion) {
  if (drift.size() != d) {
    fail(ErrorCode::kInvalidConfig, "drift of P" + std::to_string(portion + 1) + " has " +
                                        std::to_string(drift.size()) + " entries for " + std::to_string(d) +
                                        " features");
  }
  for (const double x : drift) {
    if (!std::isfinite(x)) fail(ErrorCode::kInvalidConfig, "non-finite drift");
  }
}

}  // namespace

void VirtualCohortConfig::validate() const {
  if (num_participants < 1) fail(ErrorCode::kInvalidConfig, "cohort needs at least one participant");
  if (samples_per_portion < 1) fail(ErrorCode::kInvalidConfig, "cohort needs at least one sample per portion");
  if (feature_names.empty()) fail(ErrorCode::kInvalidConfig, "cohort needs at least one feature");
  if (!(baseline_mean_lo <= baseline_mean_hi)) fail(ErrorCode::kInvalidConfig, "baseline mean range is empty");
  if (!(baseline_std_lo > 0.0 && baseline_std_lo <= baseline_std_hi)) {
    fail(ErrorCode::kInvalidConfig, "baseline std range must be positive and ordered");
  }
  if (!(drift_scale_lo >= 0.0 && drift_scale_lo <= drift_scale_hi)) {
    fail(ErrorCode::kInvalidConfig, "drift scale range must be non-negative and ordered");
  }
  for (int k = 0; k < kNumPortions; ++k) {
    check_drift(drifts[static_cast<std::size_t>(k)], feature_names.size(), k);
    if (!(inflation[static_cast<std::size_t>(k)] > 0.0) || !std::isfinite(inflation[static_cast<std::size_t>(k)])) {
      fail(ErrorCode::kInvalidConfig, "covariance inflation must be positive");
    }
  }
}

GaussianParams VirtualCohort::params(std::size_t participant, Portion portion) const {
  const auto& p = participants.at(participant);
  const auto k = static_cast<std::size_t>(index_of(portion));
  GaussianParams g;
  g.mean = p.baseline_mean + p.drift_scale * to_vector(config.drifts[k]);
  g.cov = (p.baseline_std.array().square() * config.inflation[k]).matrix().asDiagonal();
  return g;
}

GaussianParams VirtualCohort::normalized_params(std::size_t participant, Portion portion) const {
  const auto& p = participants.at(participant);
  const auto k = static_cast<std::size_t>(index_of(portion));
  const auto d = static_cast<Eigen::Index>(config.dimension());
  GaussianParams g;
  g.mean = (p.drift_scale * to_vector(config.drifts[k]).array() / p.baseline_std.array()).matrix();
  g.cov = Eigen::MatrixXd::Identity(d, d) * config.inflation[k];
  return g;
}

double VirtualCohort::oracle_energy(std::size_t participant, const Transition& t) const {
  const auto a = params(participant, t.from);
  const auto b = params(participant, t.to);
  return gaussian_transport_oracle(a.mean, a.cov, b.mean, b.cov);
}

double VirtualCohort::normalized_oracle_energy(std::size_t participant, const Transition& t) const {
  const auto a = normalized_params(participant, t.from);
  const auto b = normalized_params(participant, t.to);
  return gaussian_transport_oracle(a.mean, a.cov, b.mean, b.cov);
}

VirtualCohort generate_virtual_cohort(const VirtualCohortConfig& cfg) {
  cfg.validate();
  VirtualCohort cohort;
  cohort.config = cfg;
  cohort.data = Dataset(FeatureSchema(cfg.feature_names), FeatureSpace::kRaw);
  const auto d = static_cast<Eigen::Index>(cfg.dimension());

  for (int i = 0; i < cfg.num_participants; ++i) {
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> mean_dist(cfg.baseline_mean_lo, cfg.baseline_mean_hi);
    std::uniform_real_distribution<double> std_dist(cfg.baseline_std_lo, cfg.baseline_std_hi);
    std::uniform_real_distribution<double> scale_dist(cfg.drift_scale_lo, cfg.drift_scale_hi);
    CohortParticipant p;
    p.id = participant_id(i);
    p.baseline_mean.resize(d);
    p.baseline_std.resize(d);
    for (Eigen::Index f = 0; f < d; ++f) p.baseline_mean[f] = mean_dist(rng);
    for (Eigen::Index f = 0; f < d; ++f) p.baseline_std[f] = std_dist(rng);
    p.drift_scale = scale_dist(rng);
    cohort.participants.push_back(p);
  }

  for (std::size_t i = 0; i < cohort.participants.size(); ++i) {
    for (const auto portion : kAllPortions) {
      const auto g = cohort.params(i, portion);
      const Eigen::VectorXd sd = g.cov.diagonal().cwiseSqrt();
      std::mt19937_64 rng(derive_seed(cfg.seed, "samples/" + std::to_string(i) + "/" +
                                                     std::string(to_string(portion))));
      std::normal_distribution<double> normal(0.0, 1.0);
      for (int s = 0; s < cfg.samples_per_portion; ++s) {
        Eigen::VectorXd x(d);
        for (Eigen::Index f = 0; f < d; ++f) x[f] = g.mean[f] + sd[f] * normal(rng);
        cohort.data.add(Sample{cohort.participants[i].id, portion, std::move(x)});
      }
    }
  }
  return cohort;
}

double direction_agreement(const EnergyTable& real, const EnergyTable& synth, const Transition& first,
                           const Transition& second, double tie_tolerance) {
  const auto rows = align(real.participants, synth);
  if (real.participants.empty()) fail(ErrorCode::kEmptyColumn, "energy tables are empty");
  const auto r1 = real.column(first);
  const auto r2 = real.column(second);
  const auto s1 = synth.column(first);
  const auto s2 = synth.column(second);
  std::size_t matches = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto ri = static_cast<Eigen::Index>(i);
    const int a = sign_with_ties(r2[ri] - r1[ri], tie_tolerance);
    const int b = sign_with_ties(s2[rows[i]] - s1[rows[i]], tie_tolerance);
    if (a == b) ++matches;
  }
  return static_cast<double>(matches) / static_cast<double>(rows.size());
}

double direction_consistency(const EnergyTable& table, const Transition& first, const Transition& second,
                             double tie_tolerance) {
  if (table.participants.empty()) fail(ErrorCode::kEmptyColumn, "energy table is empty");
  const auto a = table.column(first);
  const auto b = table.column(second);
  std::size_t up = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (sign_with_ties(b[i] - a[i], tie_tolerance) > 0) ++up;
  }
  return static_cast<double>(up) / static_cast<double>(a.size());
}

double rank_correlation(const Eigen::VectorXd& real, const Eigen::VectorXd& synth) {
  if (real.size() != synth.size()) {
    fail(ErrorCode::kDimensionMismatch, "columns have " + std::to_string(real.size()) + " and " +
                                            std::to_string(synth.size()) + " entries");
  }
  if (real.size() < 3) {
    fail(ErrorCode::kTooFewParticipants, "rank correlation needs at least 3 participants, got " +
                                             std::to_string(real.size()));
  }
  const auto ra = average_ranks(real);
  const auto rb = average_ranks(synth);
  const double n = static_cast<double>(ra.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double kendall_tau(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size()) fail(ErrorCode::kDimensionMismatch, "sequences differ in length");
  double concordant = 0.0;
  double discordant = 0.0;
  double ties_x = 0.0;
  double ties_y = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    for (Eigen::Index j = i + 1; j < x.size(); ++j) {
      const double dx = x[j] - x[i];
      const double dy = y[j] - y[i];
      if (dx == 0.0 && dy == 0.0) continue;
      if (dx == 0.0) {
        ties_x += 1.0;
      } else if (dy == 0.0) {
        ties_y += 1.0;
      } else if ((dx > 0) == (dy > 0)) {
        concordant += 1.0;
      } else {
        discordant += 1.0;
      }
    }
  }
  const double denom = std::sqrt((concordant + discordant + ties_x) * (concordant + discordant + ties_y));
  if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (concordant - discordant) / denom;
}

GroupSummary group_summary(const Eigen::VectorXd& column) {
  if (column.size() == 0) fail(ErrorCode::kEmptyColumn, "cannot summarize an empty column");
  GroupSummary s;
  s.mean = column.mean();
  s.std = std::sqrt((column.array() - s.mean).square().mean());
  return s;
}

GroupSummary group_summary(const EnergyTable& table, const Transition& t) {
  return group_summary(table.column(t));
}

ComparisonReport compare(const EnergyTable& real, const EnergyTable& synth) {
  const auto rows = align(real.participants, synth);
  if (real.participants.empty()) fail(ErrorCode::kEmptyColumn, "energy tables are empty");
  ComparisonReport r;
  r.participants = real.participants;
  r.transitions = real.transitions;
  const auto np = static_cast<Eigen::Index>(rows.size());
  const auto nt = static_cast<Eigen::Index>(real.transitions.size());
  r.real = real.energies;
  r.synth.resize(np, nt);
  for (Eigen::Index k = 0; k < nt; ++k) {
    const auto col = synth.column(real.transitions[static_cast<std::size_t>(k)]);
    for (Eigen::Index i = 0; i < np; ++i) r.synth(i, k) = col[rows[static_cast<std::size_t>(i)]];
  }
  const auto nan = std::numeric_limits<double>::quiet_NaN();
  if (nt >= 2) {
    r.direction_agreement = direction_agreement(real, synth, real.transitions[0], real.transitions[1]);
    r.real_direction_consistency = direction_consistency(real, real.transitions[0], real.transitions[1]);
    r.synth_direction_consistency = direction_consistency(synth, real.transitions[0], real.transitions[1]);
  } else {
    r.direction_agreement = r.real_direction_consistency = r.synth_direction_consistency = nan;
  }
  for (Eigen::Index k = 0; k < nt; ++k) {
    r.rank_correlation.push_back(np >= 3 ? rank_correlation(r.real.col(k), r.synth.col(k)) : nan);
    r.real_summary.push_back(group_summary(Eigen::VectorXd(r.real.col(k))));
    r.synth_summary.push_back(group_summary(Eigen::VectorXd(r.synth.col(k))));
  }
  return r;
}

void ExperimentConfig::validate() const {
  if (!dataset_path) cohort.validate();
  clip.validate();
  generator.validate();
  critic.validate();
  train.validate();
  sbp.validate();
  if (transitions.empty()) fail(ErrorCode::kInvalidConfig, "at least one transition is required");
  if (threads < 1) fail(ErrorCode::kInvalidConfig, "threads must be at least 1");
  if (!(normalization_eps >= 0.0)) fail(ErrorCode::kInvalidConfig, "normalization eps must be non-negative");
  if (output_dir.empty()) fail(ErrorCode::kInvalidConfig, "an output directory is required");
}

const std::vector<std::string>& experiment_config_keys() {
  static const std::vector<std::string> keys = {
      "seed", "threads", "strict", "dataset",
      "normalize.baseline", "normalize.eps", "normalize.clip_lo", "normalize.clip_hi",
      "sbp.epsilon", "sbp.epsilon_mode", "sbp.max_iterations", "sbp.tolerance", "sbp.epsilon_scaling_steps",
      "sbp.transitions",
      "gan.latent_dim", "gan.participant_embedding", "gan.portion_embedding", "gan.width", "gan.residual_blocks",
      "gan.activation", "gan.leaky_slope", "gan.pack_size", "gan.critic_widths", "gan.critic_activation",
      "gan.critic_leaky_slope", "gan.lambda_gp", "gan.lambda_var",
      "train.critic_steps_per_gen_step", "train.batch_packs", "train.generator_lr", "train.critic_lr",
      "train.beta1", "train.beta2", "train.generator_steps", "train.checkpoint_every",
      "cohort.num_participants", "cohort.samples_per_portion", "cohort.features", "cohort.baseline_mean_lo",
      "cohort.baseline_mean_hi", "cohort.baseline_std_lo", "cohort.baseline_std_hi", "cohort.drift_scale_lo",
      "cohort.drift_scale_hi", "cohort.drift_p2", "cohort.drift_p3", "cohort.drift_p4", "cohort.inflation",
      "adaptive.window", "adaptive.stride", "adaptive.cooldown", "adaptive.q_low", "adaptive.q_high",
      "adaptive.hysteresis_fraction", "adaptive.participant"};
  return keys;
}

void apply_config(const Config& c, ExperimentConfig& cfg) {
  c.require_known(experiment_config_keys());
  cfg.seed = c.get_uint64("seed", cfg.seed);
  cfg.threads = c.get_int("threads", cfg.threads);
  cfg.strict = c.get_bool("strict", cfg.strict);
  if (c.has("dataset")) cfg.dataset_path = c.get_string("dataset", "");

  cfg.baseline_portion = parse_portion(c.get_string("normalize.baseline", std::string(to_string(cfg.baseline_portion))));
  cfg.normalization_eps = c.get_double("normalize.eps", cfg.normalization_eps);
  cfg.clip.lo = c.get_double("normalize.clip_lo", cfg.clip.lo);
  cfg.clip.hi = c.get_double("normalize.clip_hi", cfg.clip.hi);

  cfg.sbp.epsilon = c.get_double("sbp.epsilon", cfg.sbp.epsilon);
  if (c.has("sbp.epsilon_mode")) cfg.sbp.epsilon_mode = parse_epsilon_mode(c.get_string("sbp.epsilon_mode", ""));
  cfg.sbp.max_iterations = c.get_int("sbp.max_iterations", cfg.sbp.max_iterations);
  cfg.sbp.tolerance = c.get_double("sbp.tolerance", cfg.sbp.tolerance);
  cfg.sbp.epsilon_scaling_steps = c.get_int("sbp.epsilon_scaling_steps", cfg.sbp.epsilon_scaling_steps);
  if (c.has("sbp.transitions")) cfg.transitions = parse_transitions(c.get_string("sbp.transitions", ""));

  auto& g = cfg.generator;
  g.latent_dim = c.get_int("gan.latent_dim", g.latent_dim);
  g.participant_embedding = c.get_int("gan.participant_embedding", g.participant_embedding);
  g.portion_embedding = c.get_int("gan.portion_embedding", g.portion_embedding);
  g.width = c.get_int("gan.width", g.width);
  g.residual_blocks = c.get_int("gan.residual_blocks", g.residual_blocks);
  if (c.has("gan.activation")) g.activation = parse_activation(c.get_string("gan.activation", ""));
  g.leaky_slope = c.get_double("gan.leaky_slope", g.leaky_slope);
  auto& k = cfg.critic;
  k.pack_size = c.get_int("gan.pack_size", k.pack_size);
  k.widths = c.get_ints("gan.critic_widths", k.widths);
  if (c.has("gan.critic_activation")) k.activation = parse_activation(c.get_string("gan.critic_activation", ""));
  k.leaky_slope = c.get_double("gan.critic_leaky_slope", k.leaky_slope);
  auto& t = cfg.train;
  t.lambda_gp = c.get_double("gan.lambda_gp", t.lambda_gp);
  t.lambda_var = c.get_double("gan.lambda_var", t.lambda_var);
  t.critic_steps_per_gen_step = c.get_int("train.critic_steps_per_gen_step", t.critic_steps_per_gen_step);
  t.batch_packs = c.get_int("train.batch_packs", t.batch_packs);
  t.generator_learning_rate = c.get_double("train.generator_lr", t.generator_learning_rate);
  t.critic_learning_rate = c.get_double("train.critic_lr", t.critic_learning_rate);
  t.beta1 = c.get_double("train.beta1", t.beta1);
  t.beta2 = c.get_double("train.beta2", t.beta2);
  t.generator_steps = c.get_int("train.generator_steps", t.generator_steps);
  t.checkpoint_every = c.get_int("train.checkpoint_every", t.checkpoint_every);

  auto& h = cfg.cohort;
  h.num_participants = c.get_int("cohort.num_participants", h.num_participants);
  h.samples_per_portion = c.get_int("cohort.samples_per_portion", h.samples_per_portion);
  h.feature_names = c.get_strings("cohort.features", h.feature_names);
  h.baseline_mean_lo = c.get_double("cohort.baseline_mean_lo", h.baseline_mean_lo);
  h.baseline_mean_hi = c.get_double("cohort.baseline_mean_hi", h.baseline_mean_hi);
  h.baseline_std_lo = c.get_double("cohort.baseline_std_lo", h.baseline_std_lo);
  h.baseline_std_hi = c.get_double("cohort.baseline_std_hi", h.baseline_std_hi);
  h.drift_scale_lo = c.get_double("cohort.drift_scale_lo", h.drift_scale_lo);
  h.drift_scale_hi = c.get_double("cohort.drift_scale_hi", h.drift_scale_hi);
  h.drifts[1] = c.get_doubles("cohort.drift_p2", h.drifts[1]);
  h.drifts[2] = c.get_doubles("cohort.drift_p3", h.drifts[2]);
  h.drifts[3] = c.get_doubles("cohort.drift_p4", h.drifts[3]);
  if (h.drifts[0].size() != h.feature_names.size()) h.drifts[0].assign(h.feature_names.size(), 0.0);
  if (c.has("cohort.inflation")) {
    const auto inf = c.get_doubles("cohort.inflation", {});
    if (inf.size() != kNumPortions) fail(ErrorCode::kInvalidConfig, "cohort.inflation needs 4 values");
    std::copy(inf.begin(), inf.end(), h.inflation.begin());
  }
}

Config echo_config(const ExperimentConfig& cfg) {
  Config c;
  const auto num = [](double v) { return csv::format_double(v); };
  const auto join = [&](const auto& values) {
    std::string s;
    for (const auto& v : values) {
      if (!s.empty()) s += ',';
      if constexpr (std::is_same_v<std::decay_t<decltype(v)>, double>) {
        s += num(v);
      } else if constexpr (std::is_same_v<std::decay_t<decltype(v)>, int>) {
        s += std::to_string(v);
      } else {
        s += v;
      }
    }
    return s;
  };
  c.set("seed", std::to_string(cfg.seed));
  c.set("threads", std::to_string(cfg.threads));
  c.set("strict", cfg.strict ? "true" : "false");
  if (cfg.dataset_path) c.set("dataset", cfg.dataset_path->string());
  c.set("normalize.baseline", std::string(to_string(cfg.baseline_portion)));
  c.set("normalize.eps", num(cfg.normalization_eps));
  c.set("normalize.clip_lo", num(cfg.clip.lo));
  c.set("normalize.clip_hi", num(cfg.clip.hi));
  c.set("sbp.epsilon", num(cfg.sbp.epsilon));
  c.set("sbp.epsilon_mode", std::string(to_string(cfg.sbp.epsilon_mode)));
  c.set("sbp.max_iterations", std::to_string(cfg.sbp.max_iterations));
  c.set("sbp.tolerance", num(cfg.sbp.tolerance));
  c.set("sbp.epsilon_scaling_steps", std::to_string(cfg.sbp.epsilon_scaling_steps));
  std::vector<std::string> labels;
  for (const auto& t : cfg.transitions) {
    labels.push_back(std::string(to_string(t.from)) + ":" + std::string(to_string(t.to)));
  }
  c.set("sbp.transitions", join(labels));
  c.set("gan.latent_dim", std::to_string(cfg.generator.latent_dim));
  c.set("gan.participant_embedding", std::to_string(cfg.generator.participant_embedding));
  c.set("gan.portion_embedding", std::to_string(cfg.generator.portion_embedding));
  c.set("gan.width", std::to_string(cfg.generator.width));
  c.set("gan.residual_blocks", std::to_string(cfg.generator.residual_blocks));
  c.set("gan.activation", std::string(to_string(cfg.generator.activation)));
  c.set("gan.leaky_slope", num(cfg.generator.leaky_slope));
  c.set("gan.pack_size", std::to_string(cfg.critic.pack_size));
  c.set("gan.critic_widths", join(cfg.critic.widths));
  c.set("gan.critic_activation", std::string(to_string(cfg.critic.activation)));
  c.set("gan.critic_leaky_slope", num(cfg.critic.leaky_slope));
  c.set("gan.lambda_gp", num(cfg.train.lambda_gp));
  c.set("gan.lambda_var", num(cfg.train.lambda_var));
  c.set("train.critic_steps_per_gen_step", std::to_string(cfg.train.critic_steps_per_gen_step));
  c.set("train.batch_packs", std::to_string(cfg.train.batch_packs));
  c.set("train.generator_lr", num(cfg.train.generator_learning_rate));
  c.set("train.critic_lr", num(cfg.train.critic_learning_rate));
  c.set("train.beta1", num(cfg.train.beta1));
  c.set("train.beta2", num(cfg.train.beta2));
  c.set("train.generator_steps", std::to_string(cfg.train.generator_steps));
  c.set("train.checkpoint_every", std::to_string(cfg.train.checkpoint_every));
  if (!cfg.dataset_path) {
    const auto& h = cfg.cohort;
    c.set("cohort.num_participants", std::to_string(h.num_participants));
    c.set("cohort.samples_per_portion", std::to_string(h.samples_per_portion));
    c.set("cohort.features", join(h.feature_names));
    c.set("cohort.baseline_mean_lo", num(h.baseline_mean_lo));
    c.set("cohort.baseline_mean_hi", num(h.baseline_mean_hi));
    c.set("cohort.baseline_std_lo", num(h.baseline_std_lo));
    c.set("cohort.baseline_std_hi", num(h.baseline_std_hi));
    c.set("cohort.drift_scale_lo", num(h.drift_scale_lo));
    c.set("cohort.drift_scale_hi", num(h.drift_scale_hi));
    c.set("cohort.drift_p2", join(h.drifts[1]));
    c.set("cohort.drift_p3", join(h.drifts[2]));
    c.set("cohort.drift_p4", join(h.drifts[3]));
    c.set("cohort.inflation", join(std::vector<double>(h.inflation.begin(), h.inflation.end())));
  }
  return c;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const TrainObserver& observer) {
  cfg.validate();
  const auto& dir = cfg.output_dir;
  std::filesystem::create_directories(dir);
  Manifest manifest("experiment", dir / "manifest.json");
  manifest.set_config(echo_config(cfg));

  ExperimentResult result;
  result.cohort_seed = derive_seed(cfg.seed, "cohort");
  result.train_seed = derive_seed(cfg.seed, "train");
  result.generate_seed = derive_seed(cfg.seed, "generate");
  manifest.set_seed("global", cfg.seed);
  manifest.set_seed("cohort", result.cohort_seed);
  manifest.set_seed("train", result.train_seed);
  manifest.set_seed("generate", result.generate_seed);

  const auto output = [&](const std::string& name) {
    manifest.add_output(name);
    return dir / name;
  };

  try {
    manifest.begin_stage("data");
    Dataset raw;
    if (cfg.dataset_path) {
      manifest.add_input(*cfg.dataset_path);
      raw = load_dataset(*cfg.dataset_path);
    } else {
      auto cohort_cfg = cfg.cohort;
      cohort_cfg.seed = result.cohort_seed;
      raw = generate_virtual_cohort(cohort_cfg).data;
      save_dataset(output("cohort_raw.csv"), raw);
    }
    manifest.finish_stage();

    manifest.begin_stage("normalize");
    const auto norm = normalize_dataset(raw, cfg.baseline_portion, cfg.normalization_eps, cfg.clip);
    save_dataset(output("normalized.csv"), norm.dataset);
    save_baseline_stats(output("baseline_stats.csv"), norm.dataset.schema(), norm.stats);
    manifest.finish_stage();

    manifest.begin_stage("train");
    auto train_cfg = cfg.train;
    train_cfg.seed = result.train_seed;
    if (train_cfg.checkpoint_every > 0) train_cfg.checkpoint_dir = dir / "checkpoints";
    const auto gan = train(norm.dataset, cfg.generator, cfg.critic, train_cfg, cfg.clip, observer);
    result.log = gan.log;
    {
      std::ofstream out(output("training_log.csv"));
      write_training_log(out, gan.log);
    }
    save_checkpoint(output("checkpoint.bin"), gan.generator, gan.critic, echo_config(cfg).echo());
    manifest.finish_stage();

    manifest.begin_stage("generate");
    const auto synthetic = generate_matching(gan.generator, norm.dataset, result.generate_seed);
    save_dataset(output("synthetic.csv"), synthetic);
    manifest.finish_stage();

    manifest.begin_stage("energy");
    result.real = energy_table(norm.dataset, cfg.transitions, cfg.sbp, cfg.threads);
    result.synth = energy_table(synthetic, cfg.transitions, cfg.sbp, cfg.threads);
    save_energy_table(output("energy_real.csv"), result.real);
    save_energy_table(output("energy_synth.csv"), result.synth);
    {
      std::ofstream out(output("sbp_diagnostics.jsonl"));
      write_diagnostics_jsonl(out, result.real.diagnostics);
      write_diagnostics_jsonl(out, result.synth.diagnostics);
    }
    std::size_t unconverged = 0;
    for (const auto* table : {&result.real, &result.synth}) {
      for (const auto& d : table->diagnostics) {
        if (!d.converged) ++unconverged;
      }
    }
    manifest.set_note("unconverged_solves", std::to_string(unconverged));
    if (cfg.strict && unconverged > 0) {
      fail(ErrorCode::kNotConverged, std::to_string(unconverged) + " SBP solves did not converge");
    }
    manifest.finish_stage();

    manifest.begin_stage("report");
    result.report = compare(result.real, result.synth);
    result.features = feature_report(norm.dataset, synthetic, cfg.clip);
    save_comparison_json(output("comparison.json"), result.report);
    {
      std::ofstream out(output("feature_report.csv"));
      write_feature_report(out, result.features);
    }
    {
      std::ofstream out(output("feature_histograms.csv"));
      write_feature_histograms(out, result.features);
    }
    {
      std::ofstream out(output("feature_table.txt"));
      write_feature_table(out, result.features);
    }
    write_plots(dir / "plots", result.report);
    manifest.add_output("plots/");
    manifest.finish_stage();
  } catch (const std::exception& e) {
    manifest.fail_stage(e.what());
    throw;
  }
  return result;
}

}  // namespace eegbridge

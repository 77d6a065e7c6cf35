#include "eegbridge/gan.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "binary_io.hpp"
#include "eegbridge/csv.hpp"
#include "eegbridge/error.hpp"
#include "eegbridge/random.hpp"

namespace eegbridge {

namespace {

constexpr char kGanMagic[8] = {'E', 'G', 'B', 'R', 'G', 'A', 'N', '\0'};
constexpr std::uint32_t kGanVersion = 1;

void fill_normal(ad::Matrix& m, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
  }
}

ad::Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  ad::Matrix m(rows, cols);
  fill_normal(m, rng);
  return m;
}

std::vector<Eigen::Index> participant_index(const std::vector<Condition>& conditions) {
  std::vector<Eigen::Index> idx;
  idx.reserve(conditions.size());
  for (const auto& c : conditions) idx.push_back(c.participant);
  return idx;
}

std::vector<Eigen::Index> portion_index(const std::vector<Condition>& conditions) {
  std::vector<Eigen::Index> idx;
  idx.reserve(conditions.size());
  for (const auto& c : conditions) idx.push_back(c.portion);
  return idx;
}

void check_conditions(const std::vector<Condition>& conditions, Eigen::Index rows, Eigen::Index num_participants) {
  if (static_cast<Eigen::Index>(conditions.size()) != rows) {
    fail(ErrorCode::kShapeMismatch, "expected one condition per row");
  }
  for (const auto& c : conditions) {
    if (c.participant < 0 || c.participant >= num_participants || c.portion < 0 || c.portion >= kNumPortions) {
      fail(ErrorCode::kUnknownCondition, "condition (" + std::to_string(c.participant) + ", " +
                                             std::to_string(c.portion) + ") is out of range");
    }
  }
}

// Expands one condition per pack into one condition per sample.
std::vector<Condition> expand(const std::vector<Condition>& pack_conditions, int pack_size) {
  std::vector<Condition> out;
  out.reserve(pack_conditions.size() * static_cast<std::size_t>(pack_size));
  for (const auto& c : pack_conditions) {
    for (int k = 0; k < pack_size; ++k) out.push_back(c);
  }
  return out;
}

std::map<Condition, std::vector<Eigen::Index>> rows_by_condition(const std::vector<Condition>& conditions) {
  std::map<Condition, std::vector<Eigen::Index>> out;
  for (std::size_t i = 0; i < conditions.size(); ++i) out[conditions[i]].push_back(static_cast<Eigen::Index>(i));
  return out;
}

Eigen::RowVectorXd population_variance(const ad::Matrix& m, const std::vector<Eigen::Index>& rows) {
  ad::Matrix sub(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = m.row(rows[r]);
  const Eigen::RowVectorXd mean = sub.colwise().mean();
  return (sub.rowwise() - mean).array().square().colwise().mean();
}

struct EligibleGroup {
  std::vector<Eigen::Index> real_rows;
  std::vector<Eigen::Index> gen_rows;
};

std::vector<EligibleGroup> eligible_groups(const std::vector<Condition>& real_conditions,
                                           const std::vector<Condition>& gen_conditions) {
  const auto real = rows_by_condition(real_conditions);
  const auto gen = rows_by_condition(gen_conditions);
  std::vector<EligibleGroup> out;
  for (const auto& [cond, rows] : real) {
    const auto it = gen.find(cond);
    if (it == gen.end() || rows.size() < 2 || it->second.size() < 2) continue;
    out.push_back(EligibleGroup{rows, it->second});
  }
  return out;
}

struct GroupData {
  Condition condition;
  ad::Matrix samples;
};

// Draws pack conditions uniformly over groups and samples with replacement.
class BatchSampler {
 public:
  BatchSampler(std::vector<GroupData> groups, int pack_size) : groups_(std::move(groups)), pack_size_(pack_size) {}

  std::vector<Condition> conditions(int batch_packs, std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> pick(0, groups_.size() - 1);
    std::vector<Condition> out;
    for (int b = 0; b < batch_packs; ++b) out.push_back(groups_[pick(rng)].condition);
    return out;
  }

  ad::Matrix real_samples(const std::vector<Condition>& pack_conditions, std::mt19937_64& rng) const {
    const auto d = groups_.front().samples.cols();
    ad::Matrix out(static_cast<Eigen::Index>(pack_conditions.size()) * pack_size_, d);
    Eigen::Index row = 0;
    for (const auto& c : pack_conditions) {
      const auto& g = find(c);
      std::uniform_int_distribution<Eigen::Index> pick(0, g.samples.rows() - 1);
      for (int k = 0; k < pack_size_; ++k) out.row(row++) = g.samples.row(pick(rng));
    }
    return out;
  }

 private:
  const GroupData& find(const Condition& c) const {
    for (const auto& g : groups_) {
      if (g.condition == c) return g;
    }
    fail(ErrorCode::kUnknownCondition, "no training group for condition");
  }

  std::vector<GroupData> groups_;
  int pack_size_;
};

void check_finite(double value, const char* what, long step) {
  if (!std::isfinite(value)) {
    fail(ErrorCode::kDivergenceDetected, std::string(what) + " became non-finite at step " + std::to_string(step));
  }
}

}  // namespace

void GeneratorConfig::validate() const {
  if (latent_dim < 1 || participant_embedding < 1 || portion_embedding < 1 || width < 1 || residual_blocks < 0) {
    fail(ErrorCode::kInvalidConfig, "generator sizes must be positive");
  }
}

void CriticConfig::validate() const {
  if (pack_size < 1) fail(ErrorCode::kInvalidConfig, "pack size must be >= 1");
  for (int w : widths) {
    if (w < 1) fail(ErrorCode::kInvalidConfig, "critic widths must be positive");
  }
}

void TrainConfig::validate() const {
  if (lambda_gp < 0.0 || lambda_var < 0.0) fail(ErrorCode::kInvalidConfig, "loss weights must be non-negative");
  if (critic_steps_per_gen_step < 1 || batch_packs < 1 || generator_steps < 0) {
    fail(ErrorCode::kInvalidConfig, "step counts and batch size must be positive");
  }
  if (!(generator_learning_rate > 0.0) || !(critic_learning_rate > 0.0)) {
    fail(ErrorCode::kInvalidConfig, "learning rates must be positive");
  }
  if (checkpoint_every < 0) fail(ErrorCode::kInvalidConfig, "checkpoint_every must be >= 0");
}

GeneratorModel::GeneratorModel(GeneratorConfig cfg, FeatureSchema schema, std::vector<std::string> participants,
                               ClipRange clip)
    : cfg_(cfg), schema_(std::move(schema)), participants_(std::move(participants)), clip_(clip) {
  cfg_.validate();
  clip_.validate();
  if (participants_.empty()) fail(ErrorCode::kInvalidArgument, "generator needs at least one participant");
  MlpSpec spec;
  spec.leaky_slope = cfg_.leaky_slope;
  spec.layers.push_back(
      LayerSpec::dense(cfg_.latent_dim + cfg_.participant_embedding + cfg_.portion_embedding, cfg_.width, cfg_.activation));
  for (int b = 0; b < cfg_.residual_blocks; ++b) spec.layers.push_back(LayerSpec::residual(cfg_.width, cfg_.activation));
  spec.layers.push_back(LayerSpec::dense(cfg_.width, dimension(), Activation::kIdentity));
  trunk_ = Mlp(std::move(spec));
  participant_embedding_ = ad::Matrix::Zero(static_cast<Eigen::Index>(participants_.size()), cfg_.participant_embedding);
  portion_embedding_ = ad::Matrix::Zero(kNumPortions, cfg_.portion_embedding);
}

void GeneratorModel::initialize(std::mt19937_64& rng) {
  trunk_.initialize(rng);
  fill_normal(participant_embedding_, rng);
  fill_normal(portion_embedding_, rng);
}

std::vector<ad::Matrix*> GeneratorModel::parameter_refs() {
  std::vector<ad::Matrix*> refs;
  for (auto& p : trunk_.parameters()) refs.push_back(&p);
  refs.push_back(&participant_embedding_);
  refs.push_back(&portion_embedding_);
  return refs;
}

std::vector<ad::Var> GeneratorModel::bind(ad::Tape& tape, bool requires_grad) const {
  auto vars = trunk_.bind(tape, requires_grad);
  vars.push_back(tape.leaf(participant_embedding_, requires_grad));
  vars.push_back(tape.leaf(portion_embedding_, requires_grad));
  return vars;
}

ad::Var GeneratorModel::forward(ad::Tape& tape, ad::Var z, const std::vector<Condition>& conditions,
                                std::span<const ad::Var> params) const {
  check_conditions(conditions, tape.value(z).rows(), participant_embedding_.rows());
  const auto n_trunk = trunk_.parameters().size();
  const ad::Var pe = ad::gather_rows(params[n_trunk], participant_index(conditions));
  const ad::Var te = ad::gather_rows(params[n_trunk + 1], portion_index(conditions));
  const ad::Var input = ad::concat_cols(ad::concat_cols(z, pe), te);
  const ad::Var h = trunk_.forward(tape, input, params.first(n_trunk));
  return ad::add_scalar(ad::scale(ad::tanh(h), clip_.half_width()), clip_.mid());
}

ad::Matrix GeneratorModel::sample(const ad::Matrix& z, const std::vector<Condition>& conditions) const {
  ad::Tape tape;
  const auto params = bind(tape, false);
  return forward(tape, tape.constant(z), conditions, params).value();
}

Condition GeneratorModel::condition_of(const std::string& participant, Portion portion) const {
  for (std::size_t i = 0; i < participants_.size(); ++i) {
    if (participants_[i] == participant) return Condition{static_cast<int>(i), index_of(portion)};
  }
  fail(ErrorCode::kUnknownCondition, "participant '" + participant + "' was not seen in training");
}

CriticModel::CriticModel(CriticConfig cfg, int dimension, int num_participants, int participant_embedding,
                         int portion_embedding)
    : cfg_(std::move(cfg)), dimension_(dimension) {
  cfg_.validate();
  if (dimension < 1 || num_participants < 1) fail(ErrorCode::kInvalidArgument, "critic needs positive sizes");
  std::vector<int> widths = {cfg_.pack_size * dimension + participant_embedding + portion_embedding};
  widths.insert(widths.end(), cfg_.widths.begin(), cfg_.widths.end());
  widths.push_back(1);
  trunk_ = Mlp(MlpSpec::dense_stack(widths, cfg_.activation, Activation::kIdentity, cfg_.leaky_slope));
  participant_embedding_ = ad::Matrix::Zero(num_participants, participant_embedding);
  portion_embedding_ = ad::Matrix::Zero(kNumPortions, portion_embedding);
}

void CriticModel::initialize(std::mt19937_64& rng) {
  trunk_.initialize(rng);
  fill_normal(participant_embedding_, rng);
  fill_normal(portion_embedding_, rng);
}

std::vector<ad::Matrix*> CriticModel::parameter_refs() {
  std::vector<ad::Matrix*> refs;
  for (auto& p : trunk_.parameters()) refs.push_back(&p);
  refs.push_back(&participant_embedding_);
  refs.push_back(&portion_embedding_);
  return refs;
}

std::vector<ad::Var> CriticModel::bind(ad::Tape& tape, bool requires_grad) const {
  auto vars = trunk_.bind(tape, requires_grad);
  vars.push_back(tape.leaf(participant_embedding_, requires_grad));
  vars.push_back(tape.leaf(portion_embedding_, requires_grad));
  return vars;
}

ad::Var CriticModel::forward(ad::Tape& tape, ad::Var packs, const std::vector<Condition>& conditions,
                             std::span<const ad::Var> params) const {
  if (tape.value(packs).cols() != pack_width()) {
    fail(ErrorCode::kShapeMismatch, "pack width " + std::to_string(tape.value(packs).cols()) + " != " +
                                        std::to_string(pack_width()));
  }
  check_conditions(conditions, tape.value(packs).rows(), participant_embedding_.rows());
  const auto n_trunk = trunk_.parameters().size();
  const ad::Var pe = ad::gather_rows(params[n_trunk], participant_index(conditions));
  const ad::Var te = ad::gather_rows(params[n_trunk + 1], portion_index(conditions));
  const ad::Var input = ad::concat_cols(ad::concat_cols(packs, pe), te);
  return trunk_.forward(tape, input, params.first(n_trunk));
}

ad::Matrix CriticModel::score(const ad::Matrix& packs, const std::vector<Condition>& conditions) const {
  ad::Tape tape;
  const auto params = bind(tape, false);
  return forward(tape, tape.constant(packs), conditions, params).value();
}

Eigen::VectorXd pack(const std::vector<Eigen::VectorXd>& samples, const std::vector<Condition>& conditions,
                     const CriticModel& critic) {
  if (samples.size() != static_cast<std::size_t>(critic.pack_size()) || conditions.size() != samples.size()) {
    fail(ErrorCode::kShapeMismatch, "a pack needs exactly pack_size samples with one condition each");
  }
  for (const auto& c : conditions) {
    if (!(c == conditions.front())) fail(ErrorCode::kMixedConditionPack, "pack mixes conditions");
  }
  const auto& c = conditions.front();
  check_conditions({c}, 1, critic.participant_embedding().rows());
  const auto ep = critic.participant_embedding().cols();
  const auto et = critic.portion_embedding().cols();
  Eigen::VectorXd out(critic.pack_width() + ep + et);
  Eigen::Index pos = 0;
  for (const auto& s : samples) {
    if (s.size() != critic.dimension()) fail(ErrorCode::kDimensionMismatch, "sample dimension differs from critic");
    out.segment(pos, s.size()) = s;
    pos += s.size();
  }
  out.segment(pos, ep) = critic.participant_embedding().row(c.participant).transpose();
  out.segment(pos + ep, et) = critic.portion_embedding().row(c.portion).transpose();
  return out;
}

ad::Matrix pack_rows(const ad::Matrix& samples, int pack_size) {
  if (pack_size < 1 || samples.rows() % pack_size != 0) {
    fail(ErrorCode::kShapeMismatch, "sample count is not a multiple of the pack size");
  }
  ad::Matrix out(samples.rows() / pack_size, samples.cols() * pack_size);
  for (Eigen::Index b = 0; b < out.rows(); ++b) {
    for (int k = 0; k < pack_size; ++k) {
      out.block(b, k * samples.cols(), 1, samples.cols()) = samples.row(b * pack_size + k);
    }
  }
  return out;
}

CriticLoss critic_loss(const ad::Matrix& real_packs, const ad::Matrix& gen_packs, const Eigen::VectorXd& t,
                       const std::vector<Condition>& conditions, const CriticModel& critic, double lambda_gp) {
  if (real_packs.rows() != gen_packs.rows() || real_packs.cols() != gen_packs.cols() ||
      t.size() != real_packs.rows()) {
    fail(ErrorCode::kShapeMismatch, "real packs, generated packs and interpolation weights disagree");
  }
  ad::Tape tape;
  const auto params = critic.bind(tape, true);
  const ad::Var d_real = critic.forward(tape, tape.constant(real_packs), conditions, params);
  const ad::Var d_gen = critic.forward(tape, tape.constant(gen_packs), conditions, params);
  ad::Var loss = ad::sub(ad::mean_all(d_gen), ad::mean_all(d_real));

  CriticLoss out;
  out.wasserstein = -ad::scalar(loss);
  if (lambda_gp > 0.0) {
    const ad::Matrix mixed =
        (real_packs.array().colwise() * t.array() + gen_packs.array().colwise() * (1.0 - t.array())).matrix();
    const ad::Var x_hat = tape.leaf(mixed, true);
    const ad::Var d_hat = critic.forward(tape, x_hat, conditions, params);
    const ad::Var penalty = gradient_penalty(tape, d_hat, x_hat);
    out.penalty = ad::scalar(penalty);
    loss = ad::add(loss, ad::scale(penalty, lambda_gp));
  }
  out.loss = ad::scalar(loss);
  for (const auto& g : tape.gradient(loss, params)) out.grads.push_back(g.value());
  return out;
}

double variance_loss(const ad::Matrix& real, const std::vector<Condition>& real_conditions, const ad::Matrix& gen,
                     const std::vector<Condition>& gen_conditions) {
  if (real.rows() != static_cast<Eigen::Index>(real_conditions.size()) ||
      gen.rows() != static_cast<Eigen::Index>(gen_conditions.size()) || real.cols() != gen.cols()) {
    fail(ErrorCode::kShapeMismatch, "variance loss inputs disagree in shape");
  }
  const auto groups = eligible_groups(real_conditions, gen_conditions);
  if (groups.empty()) fail(ErrorCode::kNoEligibleGroups, "no group has two real and two generated samples");
  double total = 0.0;
  for (const auto& g : groups) {
    const Eigen::RowVectorXd diff = population_variance(real, g.real_rows) - population_variance(gen, g.gen_rows);
    total += diff.squaredNorm() / static_cast<double>(real.cols());
  }
  return total / static_cast<double>(groups.size());
}

std::optional<ad::Var> variance_loss(ad::Tape& tape, const ad::Matrix& real,
                                     const std::vector<Condition>& real_conditions, ad::Var gen,
                                     const std::vector<Condition>& gen_conditions) {
  const auto& gen_value = tape.value(gen);
  if (gen_value.rows() != static_cast<Eigen::Index>(gen_conditions.size()) || real.cols() != gen_value.cols()) {
    fail(ErrorCode::kShapeMismatch, "variance loss inputs disagree in shape");
  }
  const auto groups = eligible_groups(real_conditions, gen_conditions);
  if (groups.empty()) return std::nullopt;
  const auto d = static_cast<double>(real.cols());
  std::optional<ad::Var> total;
  for (const auto& g : groups) {
    const auto k = static_cast<Eigen::Index>(g.gen_rows.size());
    const ad::Var rows = ad::gather_rows(gen, g.gen_rows);
    const ad::Var mean = ad::scale(ad::sum_rows(rows), 1.0 / static_cast<double>(k));
    const ad::Var centered = ad::sub(rows, ad::broadcast_rows(mean, k));
    const ad::Var var_gen = ad::scale(ad::sum_rows(ad::square(centered)), 1.0 / static_cast<double>(k));
    const ad::Var var_real = tape.constant(population_variance(real, g.real_rows));
    const ad::Var term = ad::scale(ad::sum_all(ad::square(ad::sub(var_real, var_gen))), 1.0 / d);
    total = total ? ad::add(*total, term) : term;
  }
  return ad::scale(*total, 1.0 / static_cast<double>(groups.size()));
}

GeneratorLoss generator_loss(const ad::Matrix& z, const std::vector<Condition>& pack_conditions,
                             const ad::Matrix& real_samples, const GeneratorModel& generator,
                             const CriticModel& critic, double lambda_var) {
  const int m = critic.pack_size();
  const auto sample_conditions = expand(pack_conditions, m);
  if (z.rows() != static_cast<Eigen::Index>(sample_conditions.size())) {
    fail(ErrorCode::kShapeMismatch, "latent batch must hold pack_size rows per pack");
  }
  ad::Tape tape;
  const auto gen_params = generator.bind(tape, true);
  const auto critic_params = critic.bind(tape, false);
  const ad::Var x = generator.forward(tape, tape.constant(z), sample_conditions, gen_params);
  const ad::Var packs = ad::reshape_rows(x, static_cast<Eigen::Index>(pack_conditions.size()), critic.pack_width());
  const ad::Var scores = critic.forward(tape, packs, pack_conditions, critic_params);
  const ad::Var adversarial = ad::scale(ad::mean_all(scores), -1.0);

  GeneratorLoss out;
  out.adversarial = ad::scalar(adversarial);
  ad::Var loss = adversarial;
  if (real_samples.rows() > 0) {
    if (real_samples.rows() != z.rows()) fail(ErrorCode::kShapeMismatch, "real batch must align with latent batch");
    if (const auto lvar = variance_loss(tape, real_samples, sample_conditions, x, sample_conditions)) {
      out.l_var = ad::scalar(*lvar);
      out.variance_term_used = true;
      if (lambda_var > 0.0) loss = ad::add(loss, ad::scale(*lvar, lambda_var));
    }
  }
  out.loss = ad::scalar(loss);
  for (const auto& g : tape.gradient(loss, gen_params)) out.grads.push_back(g.value());
  return out;
}

std::vector<double> TrainingLog::wasserstein_series() const {
  std::vector<double> out;
  for (const auto& r : records) {
    if (r.kind == TrainingRecord::Kind::kCritic) out.push_back(r.wasserstein);
  }
  return out;
}

std::vector<double> TrainingLog::penalty_series() const {
  std::vector<double> out;
  for (const auto& r : records) {
    if (r.kind == TrainingRecord::Kind::kCritic) out.push_back(r.grad_penalty);
  }
  return out;
}

void write_training_log(std::ostream& out, const TrainingLog& log) {
  out << "step,kind,wasserstein,grad_penalty,l_var,adversarial\n";
  for (const auto& r : log.records) {
    if (r.kind == TrainingRecord::Kind::kCritic) {
      out << r.step << ",critic," << csv::format_double(r.wasserstein) << ',' << csv::format_double(r.grad_penalty)
          << ",,\n";
    } else {
      out << r.step << ",generator,,," << csv::format_double(r.l_var) << ',' << csv::format_double(r.adversarial)
          << '\n';
    }
  }
}

TrainedGan train(const Dataset& normalized, const GeneratorConfig& gen_cfg, const CriticConfig& critic_cfg,
                 const TrainConfig& train_cfg, const ClipRange& clip, const TrainObserver& observer) {
  train_cfg.validate();
  if (normalized.space() != FeatureSpace::kNormalized) {
    fail(ErrorCode::kInvalidArgument, "GAN training expects a normalized dataset");
  }
  if (normalized.empty()) fail(ErrorCode::kEmptyGroup, "training dataset is empty");

  const auto participants = normalized.participants();
  std::mt19937_64 rng(train_cfg.seed);
  TrainedGan out;
  out.generator = GeneratorModel(gen_cfg, normalized.schema(), participants, clip);
  out.critic = CriticModel(critic_cfg, static_cast<int>(normalized.schema().dimension()),
                           static_cast<int>(participants.size()), gen_cfg.participant_embedding,
                           gen_cfg.portion_embedding);
  out.generator.initialize(rng);
  out.critic.initialize(rng);

  std::vector<GroupData> groups;
  for (std::size_t p = 0; p < participants.size(); ++p) {
    for (const auto portion : kAllPortions) {
      if (!normalized.has_group(participants[p], portion)) continue;
      groups.push_back(GroupData{Condition{static_cast<int>(p), index_of(portion)},
                                 group(normalized, participants[p], portion)});
    }
  }
  const int m = critic_cfg.pack_size;
  const BatchSampler sampler(std::move(groups), m);
  Adam gen_opt(train_cfg.generator_learning_rate, train_cfg.beta1, train_cfg.beta2);
  Adam critic_opt(train_cfg.critic_learning_rate, train_cfg.beta1, train_cfg.beta2);
  const auto latent = gen_cfg.latent_dim;
  const auto batch = train_cfg.batch_packs;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  long critic_updates = 0;

  for (int step = 0; step < train_cfg.generator_steps; ++step) {
    for (int c = 0; c < train_cfg.critic_steps_per_gen_step; ++c) {
      const auto conds = sampler.conditions(batch, rng);
      const ad::Matrix real = sampler.real_samples(conds, rng);
      const ad::Matrix z = normal_matrix(static_cast<Eigen::Index>(batch) * m, latent, rng);
      Eigen::VectorXd t(batch);
      for (int b = 0; b < batch; ++b) t[b] = unit(rng);
      const ad::Matrix fake = out.generator.sample(z, expand(conds, m));
      const auto cl = critic_loss(pack_rows(real, m), pack_rows(fake, m), t, conds, out.critic, train_cfg.lambda_gp);
      check_finite(cl.loss, "critic loss", critic_updates);
      critic_opt.step(out.critic.parameter_refs(), cl.grads);
      out.log.records.push_back(
          TrainingRecord{critic_updates++, TrainingRecord::Kind::kCritic, cl.wasserstein, cl.penalty, 0.0, 0.0});
    }

    const auto conds = sampler.conditions(batch, rng);
    const ad::Matrix real = sampler.real_samples(conds, rng);
    const ad::Matrix z = normal_matrix(static_cast<Eigen::Index>(batch) * m, latent, rng);
    const auto gl = generator_loss(z, conds, real, out.generator, out.critic, train_cfg.lambda_var);
    check_finite(gl.loss, "generator loss", step);
    if (!gl.variance_term_used) ++out.variance_skips;
    gen_opt.step(out.generator.parameter_refs(), gl.grads);
    out.log.records.push_back(
        TrainingRecord{step, TrainingRecord::Kind::kGenerator, 0.0, 0.0, gl.adversarial, gl.l_var});

    if (train_cfg.checkpoint_every > 0 && !train_cfg.checkpoint_dir.empty() &&
        (step + 1) % train_cfg.checkpoint_every == 0) {
      save_checkpoint(train_cfg.checkpoint_dir / ("checkpoint_step_" + std::to_string(step + 1) + ".bin"),
                      out.generator, out.critic);
    }
    if (observer) observer(step, out.log);
  }
  if (out.variance_skips > 0) {
    std::clog << "warning: variance matching skipped on " << out.variance_skips
              << " generator steps (no group with two real and two generated samples)\n";
  }
  if (!train_cfg.checkpoint_dir.empty()) {
    save_checkpoint(train_cfg.checkpoint_dir / "checkpoint_final.bin", out.generator, out.critic);
  }
  return out;
}

ad::Matrix generate(const GeneratorModel& model, const std::string& participant, Portion portion, std::size_t n,
                    std::uint64_t seed) {
  const auto cond = model.condition_of(participant, portion);
  if (n == 0) return ad::Matrix(0, model.dimension());
  std::mt19937_64 rng(seed);
  const ad::Matrix z = normal_matrix(static_cast<Eigen::Index>(n), model.config().latent_dim, rng);
  return model.sample(z, std::vector<Condition>(n, cond));
}

Dataset generate_matching(const GeneratorModel& model, const Dataset& like, std::uint64_t seed) {
  Dataset out(like.schema(), FeatureSpace::kNormalized);
  const auto participants = like.participants();
  for (std::size_t p = 0; p < participants.size(); ++p) {
    for (const auto portion : kAllPortions) {
      const auto n = like.group_size(participants[p], portion);
      if (n == 0) continue;
      const auto stream = p * kNumPortions + static_cast<std::size_t>(index_of(portion));
      const ad::Matrix x = generate(model, participants[p], portion, n, derive_seed(seed, stream));
      for (Eigen::Index r = 0; r < x.rows(); ++r) out.add(Sample{participants[p], portion, x.row(r).transpose()});
    }
  }
  return out;
}

void write_checkpoint(std::ostream& out, const GeneratorModel& generator, const CriticModel& critic,
                      const std::string& config_echo) {
  out.write(kGanMagic, sizeof(kGanMagic));
  binary::write_le<std::uint32_t>(out, kGanVersion);
  binary::write_string(out, config_echo);
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(generator.schema().dimension()));
  for (const auto& n : generator.schema().names()) binary::write_string(out, n);
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(generator.participants().size()));
  for (const auto& p : generator.participants()) binary::write_string(out, p);
  binary::write_le<double>(out, generator.clip().lo);
  binary::write_le<double>(out, generator.clip().hi);

  const auto& g = generator.config();
  for (int v : {g.latent_dim, g.participant_embedding, g.portion_embedding, g.width, g.residual_blocks}) {
    binary::write_le<std::int32_t>(out, v);
  }
  binary::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(g.activation));
  binary::write_le<double>(out, g.leaky_slope);

  const auto& c = critic.config();
  binary::write_le<std::int32_t>(out, c.pack_size);
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.widths.size()));
  for (int w : c.widths) binary::write_le<std::int32_t>(out, w);
  binary::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(c.activation));
  binary::write_le<double>(out, c.leaky_slope);

  write_mlp(out, generator.trunk());
  binary::write_matrix(out, generator.participant_embedding());
  binary::write_matrix(out, generator.portion_embedding());
  write_mlp(out, critic.trunk());
  binary::write_matrix(out, critic.participant_embedding());
  binary::write_matrix(out, critic.portion_embedding());
}

void save_checkpoint(const std::filesystem::path& path, const GeneratorModel& generator, const CriticModel& critic,
                     const std::string& config_echo) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  write_checkpoint(out, generator, critic, config_echo);
}

LoadedCheckpoint read_checkpoint(std::istream& in) {
  char magic[sizeof(kGanMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kGanMagic, sizeof(magic)) != 0) fail(ErrorCode::kIoError, "not a GAN checkpoint");
  const auto version = binary::read_le<std::uint32_t>(in);
  if (version != kGanVersion) fail(ErrorCode::kIoError, "unsupported GAN checkpoint version");
  LoadedCheckpoint out;
  out.config_echo = binary::read_string(in);
  std::vector<std::string> names(binary::read_le<std::uint32_t>(in));
  for (auto& n : names) n = binary::read_string(in);
  std::vector<std::string> participants(binary::read_le<std::uint32_t>(in));
  for (auto& p : participants) p = binary::read_string(in);
  ClipRange clip;
  clip.lo = binary::read_le<double>(in);
  clip.hi = binary::read_le<double>(in);

  GeneratorConfig g;
  g.latent_dim = binary::read_le<std::int32_t>(in);
  g.participant_embedding = binary::read_le<std::int32_t>(in);
  g.portion_embedding = binary::read_le<std::int32_t>(in);
  g.width = binary::read_le<std::int32_t>(in);
  g.residual_blocks = binary::read_le<std::int32_t>(in);
  g.activation = static_cast<Activation>(binary::read_le<std::uint8_t>(in));
  g.leaky_slope = binary::read_le<double>(in);

  CriticConfig c;
  c.pack_size = binary::read_le<std::int32_t>(in);
  c.widths.resize(binary::read_le<std::uint32_t>(in));
  for (auto& w : c.widths) w = binary::read_le<std::int32_t>(in);
  c.activation = static_cast<Activation>(binary::read_le<std::uint8_t>(in));
  c.leaky_slope = binary::read_le<double>(in);

  out.generator = GeneratorModel(g, FeatureSchema(names), participants, clip);
  out.generator.trunk() = read_mlp(in);
  out.generator.participant_embedding() = binary::read_matrix(in);
  out.generator.portion_embedding() = binary::read_matrix(in);
  out.critic = CriticModel(c, static_cast<int>(names.size()), static_cast<int>(participants.size()),
                           g.participant_embedding, g.portion_embedding);
  out.critic.trunk() = read_mlp(in);
  out.critic.participant_embedding() = binary::read_matrix(in);
  out.critic.portion_embedding() = binary::read_matrix(in);
  if (!(out.generator.trunk().spec() == GeneratorModel(g, FeatureSchema(names), participants, clip).trunk().spec())) {
    fail(ErrorCode::kIoError, "generator network in checkpoint does not match its config");
  }
  return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace eegbridge

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "eegbridge/autodiff.hpp"
#include "eegbridge/dataset.hpp"
#include "eegbridge/mlp.hpp"
#include "eegbridge/normalize.hpp"

namespace eegbridge {

// Index pair into the model's participant list and the portion list.
struct Condition {
  int participant = 0;
  int portion = 0;

  friend bool operator==(const Condition&, const Condition&) = default;
  friend auto operator<=>(const Condition&, const Condition&) = default;
};

struct GeneratorConfig {
  int latent_dim = 64;
  int participant_embedding = 8;
  int portion_embedding = 8;
  int width = 128;
  int residual_blocks = 3;
  Activation activation = Activation::kLeakyRelu;
  double leaky_slope = 0.2;

  void validate() const;
};

struct CriticConfig {
  int pack_size = 4;
  std::vector<int> widths = {256, 256, 128};
  Activation activation = Activation::kLeakyRelu;
  double leaky_slope = 0.2;

  void validate() const;
};

struct TrainConfig {
  double lambda_gp = 10.0;
  double lambda_var = 1.0;
  int critic_steps_per_gen_step = 5;
  int batch_packs = 32;
  double generator_learning_rate = 1e-4;
  double critic_learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  int generator_steps = 3000;
  std::uint64_t seed = 0;
  // Write a checkpoint every K generator steps (0 disables periodic ones).
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;

  void validate() const;
};

// Conditional generator: latent noise plus participant and portion embeddings
// through a residual trunk, squashed by a scaled tanh into the clip range.
class GeneratorModel {
 public:
  GeneratorModel() = default;
  GeneratorModel(GeneratorConfig cfg, FeatureSchema schema, std::vector<std::string> participants, ClipRange clip);

  void initialize(std::mt19937_64& rng);

  const GeneratorConfig& config() const noexcept { return cfg_; }
  const FeatureSchema& schema() const noexcept { return schema_; }
  const std::vector<std::string>& participants() const noexcept { return participants_; }
  const ClipRange& clip() const noexcept { return clip_; }
  int dimension() const { return static_cast<int>(schema_.dimension()); }

  const Mlp& trunk() const noexcept { return trunk_; }
  Mlp& trunk() noexcept { return trunk_; }
  ad::Matrix& participant_embedding() noexcept { return participant_embedding_; }
  ad::Matrix& portion_embedding() noexcept { return portion_embedding_; }
  const ad::Matrix& participant_embedding() const noexcept { return participant_embedding_; }
  const ad::Matrix& portion_embedding() const noexcept { return portion_embedding_; }

  // Trunk tensors followed by the two embedding tables.
  std::vector<ad::Matrix*> parameter_refs();
  std::vector<ad::Var> bind(ad::Tape& tape, bool requires_grad) const;

  // z: n x latent_dim; one condition per row.
  ad::Var forward(ad::Tape& tape, ad::Var z, const std::vector<Condition>& conditions,
                  std::span<const ad::Var> params) const;
  ad::Matrix sample(const ad::Matrix& z, const std::vector<Condition>& conditions) const;

  Condition condition_of(const std::string& participant, Portion portion) const;

 private:
  GeneratorConfig cfg_;
  FeatureSchema schema_;
  std::vector<std::string> participants_;
  ClipRange clip_;
  Mlp trunk_;
  ad::Matrix participant_embedding_;
  ad::Matrix portion_embedding_;
};

// Packed Wasserstein critic: m samples of one condition are concatenated and
// scored jointly, with the condition embeddings appended once per pack.
class CriticModel {
 public:
  CriticModel() = default;
  CriticModel(CriticConfig cfg, int dimension, int num_participants, int participant_embedding,
              int portion_embedding);

  void initialize(std::mt19937_64& rng);

  const CriticConfig& config() const noexcept { return cfg_; }
  int pack_size() const noexcept { return cfg_.pack_size; }
  int dimension() const noexcept { return dimension_; }
  int pack_width() const noexcept { return cfg_.pack_size * dimension_; }

  const Mlp& trunk() const noexcept { return trunk_; }
  Mlp& trunk() noexcept { return trunk_; }
  ad::Matrix& participant_embedding() noexcept { return participant_embedding_; }
  ad::Matrix& portion_embedding() noexcept { return portion_embedding_; }
  const ad::Matrix& participant_embedding() const noexcept { return participant_embedding_; }
  const ad::Matrix& portion_embedding() const noexcept { return portion_embedding_; }

  std::vector<ad::Matrix*> parameter_refs();
  std::vector<ad::Var> bind(ad::Tape& tape, bool requires_grad) const;

  // packs: B x (m*d); one condition per pack. Returns B x 1 scores.
  ad::Var forward(ad::Tape& tape, ad::Var packs, const std::vector<Condition>& conditions,
                  std::span<const ad::Var> params) const;
  ad::Matrix score(const ad::Matrix& packs, const std::vector<Condition>& conditions) const;

 private:
  CriticConfig cfg_;
  int dimension_ = 0;
  Mlp trunk_;
  ad::Matrix participant_embedding_;
  ad::Matrix portion_embedding_;
};

// Concatenates m same-condition samples followed by that condition's critic
// embeddings. Throws MixedConditionPack if the conditions differ.
Eigen::VectorXd pack(const std::vector<Eigen::VectorXd>& samples, const std::vector<Condition>& conditions,
                     const CriticModel& critic);

// Groups consecutive rows of a (B*m) x d batch into B x (m*d) packs.
ad::Matrix pack_rows(const ad::Matrix& samples, int pack_size);

struct CriticLoss {
  double loss = 0.0;
  double wasserstein = 0.0;  // E[D(real)] - E[D(generated)]
  double penalty = 0.0;
  std::vector<ad::Matrix> grads;
};

// E[D(gen)] - E[D(real)] + lambda_gp * E[(||grad D(x_hat)|| - 1)^2] with
// x_hat = t * real + (1 - t) * gen, t drawn once per pack.
CriticLoss critic_loss(const ad::Matrix& real_packs, const ad::Matrix& gen_packs, const Eigen::VectorXd& t,
                       const std::vector<Condition>& conditions, const CriticModel& critic, double lambda_gp);

// Mean over eligible groups of the mean squared per-feature variance gap.
// Groups need at least two real and two generated rows.
double variance_loss(const ad::Matrix& real, const std::vector<Condition>& real_conditions, const ad::Matrix& gen,
                     const std::vector<Condition>& gen_conditions);
std::optional<ad::Var> variance_loss(ad::Tape& tape, const ad::Matrix& real,
                                     const std::vector<Condition>& real_conditions, ad::Var gen,
                                     const std::vector<Condition>& gen_conditions);

struct GeneratorLoss {
  double loss = 0.0;
  double adversarial = 0.0;  // -E[D(gen)]
  double l_var = 0.0;
  bool variance_term_used = false;
  std::vector<ad::Matrix> grads;
};

// -E[D(gen)] + lambda_var * L_var with the critic frozen. `z` has one row per
// generated sample, pack-major; `pack_conditions` has one entry per pack.
GeneratorLoss generator_loss(const ad::Matrix& z, const std::vector<Condition>& pack_conditions,
                             const ad::Matrix& real_samples, const GeneratorModel& generator,
                             const CriticModel& critic, double lambda_var);

struct TrainingRecord {
  enum class Kind { kCritic, kGenerator };
  long step = 0;
  Kind kind = Kind::kCritic;
  double wasserstein = 0.0;
  double grad_penalty = 0.0;
  double adversarial = 0.0;
  double l_var = 0.0;
};

struct TrainingLog {
  std::vector<TrainingRecord> records;

  std::vector<double> wasserstein_series() const;
  std::vector<double> penalty_series() const;
};

void write_training_log(std::ostream& out, const TrainingLog& log);

struct TrainedGan {
  GeneratorModel generator;
  CriticModel critic;
  TrainingLog log;
  long variance_skips = 0;  // generator steps with no eligible variance group
};

// Called after every generator step with (step, log so far).
using TrainObserver = std::function<void(int, const TrainingLog&)>;

TrainedGan train(const Dataset& normalized, const GeneratorConfig& gen_cfg, const CriticConfig& critic_cfg,
                 const TrainConfig& train_cfg, const ClipRange& clip = {}, const TrainObserver& observer = {});

ad::Matrix generate(const GeneratorModel& model, const std::string& participant, Portion portion, std::size_t n,
                    std::uint64_t seed);

// Synthetic dataset with exactly the group sizes of `like`.
Dataset generate_matching(const GeneratorModel& model, const Dataset& like, std::uint64_t seed);

void write_checkpoint(std::ostream& out, const GeneratorModel& generator, const CriticModel& critic,
                      const std::string& config_echo = {});
void save_checkpoint(const std::filesystem::path& path, const GeneratorModel& generator, const CriticModel& critic,
                     const std::string& config_echo = {});

struct LoadedCheckpoint {
  GeneratorModel generator;
  CriticModel critic;
  std::string config_echo;
};
LoadedCheckpoint read_checkpoint(std::istream& in);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace eegbridge

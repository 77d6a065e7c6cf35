#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "eegbridge/autodiff.hpp"

namespace eegbridge {

enum class Activation : std::uint8_t { kLeakyRelu = 0, kTanh = 1, kIdentity = 2 };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view text);

struct LayerSpec {
  enum class Kind : std::uint8_t { kDense = 0, kResidual = 1 };

  Kind kind = Kind::kDense;
  int in = 0;
  int out = 0;
  Activation activation = Activation::kIdentity;

  static LayerSpec dense(int in, int out, Activation act) { return {Kind::kDense, in, out, act}; }
  // out = x + W2 act(W1 x + b1) + b2; width preserved.
  static LayerSpec residual(int width, Activation act) { return {Kind::kResidual, width, width, act}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct MlpSpec {
  std::vector<LayerSpec> layers;
  double leaky_slope = 0.2;

  int input_width() const;
  int output_width() const;
  void validate() const;

  // Dense stack over `widths` (input first); hidden layers use `hidden`, the
  // last layer uses `output`.
  static MlpSpec dense_stack(const std::vector<int>& widths, Activation hidden, Activation output,
                             double leaky_slope = 0.2);

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

// Fully connected network with optional residual blocks. Row-vector
// convention: a batch is an n x in matrix and a dense layer computes x W + b.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(MlpSpec spec);  // parameters zero-initialized

  const MlpSpec& spec() const noexcept { return spec_; }
  std::vector<ad::Matrix>& parameters() noexcept { return params_; }
  const std::vector<ad::Matrix>& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const;

  // Scaled-uniform (He for leaky rectifiers, Glorot otherwise) initialization.
  void initialize(std::mt19937_64& rng);

  std::vector<ad::Var> bind(ad::Tape& tape, bool requires_grad) const;
  ad::Var forward(ad::Tape& tape, ad::Var input, std::span<const ad::Var> params) const;
  // Value-only evaluation.
  ad::Matrix predict(const ad::Matrix& input) const;

 private:
  ad::Var activate(ad::Var x, Activation act) const;

  MlpSpec spec_;
  std::vector<ad::Matrix> params_;
};

struct ForwardPass {
  std::unique_ptr<ad::Tape> tape;
  ad::Var input;
  std::vector<ad::Var> params;
  ad::Var output;

  const ad::Matrix& value() const { return output.value(); }
};

struct Gradients {
  std::vector<ad::Matrix> params;
  ad::Matrix input;
};

ForwardPass forward(const Mlp& model, const ad::Matrix& input);
Gradients backward(ForwardPass& pass, const ad::Matrix& seed);

// Per-row gradient of a scalar-output network with respect to its input.
ad::Matrix input_gradient(const Mlp& model, const ad::Matrix& x);

// mean over rows of (||grad_x D(x_hat_r)||_2 - 1)^2, built on the tape so it
// can be differentiated with respect to the network parameters.
ad::Var gradient_penalty(ad::Tape& tape, ad::Var critic_output, ad::Var x_hat);

struct PenaltyGradients {
  double penalty = 0.0;
  std::vector<ad::Matrix> params;
};

PenaltyGradients grad_penalty_backward(const Mlp& model, const ad::Matrix& x_hat);

// Adaptive-moment optimizer over a fixed list of parameter tensors.
class Adam {
 public:
  Adam() = default;
  Adam(double learning_rate, double beta1, double beta2, double epsilon = 1e-8);

  void step(std::span<ad::Matrix* const> params, const std::vector<ad::Matrix>& grads);
  void step(std::vector<ad::Matrix>& params, const std::vector<ad::Matrix>& grads);
  long steps() const noexcept { return t_; }

 private:
  double lr_ = 1e-4;
  double beta1_ = 0.5;
  double beta2_ = 0.9;
  double eps_ = 1e-8;
  long t_ = 0;
  std::vector<ad::Matrix> m_;
  std::vector<ad::Matrix> v_;
};

// Binary checkpoint: magic, version, spec, then parameters in layer order as
// little-endian 64-bit floats.
void write_mlp(std::ostream& out, const Mlp& model);
Mlp read_mlp(std::istream& in);

}  // namespace eegbridge

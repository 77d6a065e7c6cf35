#include "eegbridge/mlp.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "binary_io.hpp"
#include "eegbridge/error.hpp"

namespace eegbridge {

namespace {

constexpr char kMlpMagic[8] = {'E', 'G', 'B', 'R', 'M', 'L', 'P', '\0'};
constexpr std::uint32_t kMlpVersion = 1;

// Residual branches start small so a fresh block stays close to the identity.
constexpr double kResidualBranchGain = 0.1;

void fill_uniform(ad::Matrix& m, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
  }
}

double init_limit(int fan_in, int fan_out, Activation act, double slope) {
  if (act == Activation::kLeakyRelu) return std::sqrt(6.0 / ((1.0 + slope * slope) * fan_in));
  return std::sqrt(6.0 / (fan_in + fan_out));
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kTanh: return "tanh";
    case Activation::kIdentity: return "identity";
  }
  return "identity";
}

Activation parse_activation(std::string_view text) {
  if (text == "leaky_relu") return Activation::kLeakyRelu;
  if (text == "tanh") return Activation::kTanh;
  if (text == "identity") return Activation::kIdentity;
  fail(ErrorCode::kInvalidConfig, "unknown activation '" + std::string(text) + "'");
}

int MlpSpec::input_width() const { return layers.empty() ? 0 : layers.front().in; }
int MlpSpec::output_width() const { return layers.empty() ? 0 : layers.back().out; }

void MlpSpec::validate() const {
  if (layers.empty()) fail(ErrorCode::kShapeMismatch, "network has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.in <= 0 || l.out <= 0) fail(ErrorCode::kShapeMismatch, "layer widths must be positive");
    if (l.kind == LayerSpec::Kind::kResidual && l.in != l.out) {
      fail(ErrorCode::kShapeMismatch, "residual block must preserve width");
    }
    if (i > 0 && layers[i - 1].out != l.in) {
      fail(ErrorCode::kShapeMismatch, "layer " + std::to_string(i) + " input width " + std::to_string(l.in) +
                                          " does not match previous output " + std::to_string(layers[i - 1].out));
    }
  }
}

MlpSpec MlpSpec::dense_stack(const std::vector<int>& widths, Activation hidden, Activation output,
                             double leaky_slope) {
  if (widths.size() < 2) fail(ErrorCode::kShapeMismatch, "dense stack needs input and output widths");
  MlpSpec spec;
  spec.leaky_slope = leaky_slope;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    spec.layers.push_back(LayerSpec::dense(widths[i], widths[i + 1], i + 2 == widths.size() ? output : hidden));
  }
  return spec;
}

Mlp::Mlp(MlpSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  for (const auto& l : spec_.layers) {
    if (l.kind == LayerSpec::Kind::kDense) {
      params_.push_back(ad::Matrix::Zero(l.in, l.out));
      params_.push_back(ad::Matrix::Zero(1, l.out));
    } else {
      params_.push_back(ad::Matrix::Zero(l.in, l.in));
      params_.push_back(ad::Matrix::Zero(1, l.in));
      params_.push_back(ad::Matrix::Zero(l.in, l.in));
      params_.push_back(ad::Matrix::Zero(1, l.in));
    }
  }
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.size());
  return n;
}

void Mlp::initialize(std::mt19937_64& rng) {
  std::size_t k = 0;
  for (const auto& l : spec_.layers) {
    if (l.kind == LayerSpec::Kind::kDense) {
      fill_uniform(params_[k], init_limit(l.in, l.out, l.activation, spec_.leaky_slope), rng);
      params_[k + 1].setZero();
      k += 2;
    } else {
      fill_uniform(params_[k], init_limit(l.in, l.in, l.activation, spec_.leaky_slope), rng);
      params_[k + 1].setZero();
      fill_uniform(params_[k + 2], kResidualBranchGain * init_limit(l.in, l.in, Activation::kIdentity, 0.0), rng);
      params_[k + 3].setZero();
      k += 4;
    }
  }
}

std::vector<ad::Var> Mlp::bind(ad::Tape& tape, bool requires_grad) const {
  std::vector<ad::Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(tape.leaf(p, requires_grad));
  return vars;
}

ad::Var Mlp::activate(ad::Var x, Activation act) const {
  switch (act) {
    case Activation::kLeakyRelu: return ad::leaky_relu(x, spec_.leaky_slope);
    case Activation::kTanh: return ad::tanh(x);
    case Activation::kIdentity: return x;
  }
  return x;
}

ad::Var Mlp::forward(ad::Tape& tape, ad::Var input, std::span<const ad::Var> params) const {
  if (params.size() != params_.size()) fail(ErrorCode::kShapeMismatch, "parameter list does not match network");
  if (tape.value(input).cols() != spec_.input_width()) {
    fail(ErrorCode::kShapeMismatch, "input width " + std::to_string(tape.value(input).cols()) +
                                        " does not match network input " + std::to_string(spec_.input_width()));
  }
  ad::Var x = input;
  std::size_t k = 0;
  for (const auto& l : spec_.layers) {
    if (l.kind == LayerSpec::Kind::kDense) {
      x = activate(ad::add_bias(ad::matmul(x, params[k]), params[k + 1]), l.activation);
      k += 2;
    } else {
      const ad::Var h = activate(ad::add_bias(ad::matmul(x, params[k]), params[k + 1]), l.activation);
      x = ad::add(x, ad::add_bias(ad::matmul(h, params[k + 2]), params[k + 3]));
      k += 4;
    }
  }
  return x;
}

ad::Matrix Mlp::predict(const ad::Matrix& input) const {
  ad::Tape tape;
  const auto params = bind(tape, false);
  return forward(tape, tape.constant(input), params).value();
}

ForwardPass forward(const Mlp& model, const ad::Matrix& input) {
  ForwardPass pass;
  pass.tape = std::make_unique<ad::Tape>();
  pass.input = pass.tape->leaf(input, true);
  pass.params = model.bind(*pass.tape, true);
  pass.output = model.forward(*pass.tape, pass.input, pass.params);
  return pass;
}

Gradients backward(ForwardPass& pass, const ad::Matrix& seed) {
  std::vector<ad::Var> wrt = pass.params;
  wrt.push_back(pass.input);
  const auto grads = pass.tape->gradient(pass.output, wrt, seed, false);
  Gradients out;
  for (std::size_t i = 0; i + 1 < grads.size(); ++i) out.params.push_back(grads[i].value());
  out.input = grads.back().value();
  return out;
}

ad::Matrix input_gradient(const Mlp& model, const ad::Matrix& x) {
  if (model.spec().output_width() != 1) {
    fail(ErrorCode::kNonScalarOutput, "input_gradient needs a scalar-output network");
  }
  ad::Tape tape;
  const auto params = model.bind(tape, false);
  const auto input = tape.leaf(x, true);
  const auto out = model.forward(tape, input, params);
  const ad::Var wrt[] = {input};
  return tape.gradient(out, wrt).front().value();
}

ad::Var gradient_penalty(ad::Tape& tape, ad::Var critic_output, ad::Var x_hat) {
  if (tape.value(critic_output).cols() != 1) {
    fail(ErrorCode::kNonScalarOutput, "gradient penalty needs one critic score per row");
  }
  const ad::Var wrt[] = {x_hat};
  // Rows are independent, so the gradient of the summed scores holds each
  // row's input gradient.
  const ad::Var grad = tape.gradient(critic_output, wrt, std::nullopt, true).front();
  const ad::Var norms = ad::sqrt(ad::sum_cols(ad::square(grad)));
  return ad::mean_all(ad::square(ad::add_scalar(norms, -1.0)));
}

PenaltyGradients grad_penalty_backward(const Mlp& model, const ad::Matrix& x_hat) {
  if (model.spec().output_width() != 1) {
    fail(ErrorCode::kNonScalarOutput, "gradient penalty needs a scalar-output network");
  }
  ad::Tape tape;
  const auto params = model.bind(tape, true);
  const auto input = tape.leaf(x_hat, true);
  const auto out = model.forward(tape, input, params);
  const auto penalty = gradient_penalty(tape, out, input);
  const auto grads = tape.gradient(penalty, params);
  PenaltyGradients result;
  result.penalty = ad::scalar(penalty);
  for (const auto& g : grads) result.params.push_back(g.value());
  return result;
}

Adam::Adam(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

void Adam::step(std::vector<ad::Matrix>& params, const std::vector<ad::Matrix>& grads) {
  std::vector<ad::Matrix*> refs;
  for (auto& p : params) refs.push_back(&p);
  step(refs, grads);
}

void Adam::step(std::span<ad::Matrix* const> params, const std::vector<ad::Matrix>& grads) {
  if (params.size() != grads.size()) fail(ErrorCode::kShapeMismatch, "optimizer: gradient count mismatch");
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(ad::Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(ad::Matrix::Zero(p->rows(), p->cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
    if (grads[i].rows() != params[i]->rows() || grads[i].cols() != params[i]->cols()) {
      fail(ErrorCode::kShapeMismatch, "optimizer: gradient shape mismatch");
    }
    params[i]->array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

void write_mlp(std::ostream& out, const Mlp& model) {
  out.write(kMlpMagic, sizeof(kMlpMagic));
  binary::write_le<std::uint32_t>(out, kMlpVersion);
  const auto& spec = model.spec();
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(spec.layers.size()));
  binary::write_le<double>(out, spec.leaky_slope);
  for (const auto& l : spec.layers) {
    binary::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(l.kind));
    binary::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(l.activation));
    binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.in));
    binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.out));
  }
  for (const auto& p : model.parameters()) binary::write_values(out, p);
}

Mlp read_mlp(std::istream& in) {
  char magic[sizeof(kMlpMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMlpMagic, sizeof(magic)) != 0) {
    fail(ErrorCode::kIoError, "not a network checkpoint (bad magic)");
  }
  const auto version = binary::read_le<std::uint32_t>(in);
  if (version != kMlpVersion) fail(ErrorCode::kIoError, "unsupported checkpoint version " + std::to_string(version));
  MlpSpec spec;
  const auto count = binary::read_le<std::uint32_t>(in);
  spec.leaky_slope = binary::read_le<double>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    LayerSpec l;
    const auto kind = binary::read_le<std::uint8_t>(in);
    const auto act = binary::read_le<std::uint8_t>(in);
    if (kind > 1 || act > 2) fail(ErrorCode::kIoError, "corrupt layer record in checkpoint");
    l.kind = static_cast<LayerSpec::Kind>(kind);
    l.activation = static_cast<Activation>(act);
    l.in = static_cast<int>(binary::read_le<std::uint32_t>(in));
    l.out = static_cast<int>(binary::read_le<std::uint32_t>(in));
    spec.layers.push_back(l);
  }
  Mlp model(std::move(spec));
  for (auto& p : model.parameters()) binary::read_values(in, p);
  return model;
}

}  // namespace eegbridge

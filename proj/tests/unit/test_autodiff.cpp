#include <functional>
#include <sstream>

#include <gtest/gtest.h>

#include "eegbridge/autodiff.hpp"
#include "eegbridge/mlp.hpp"
#include "expect_error.hpp"
#include "oracles.hpp"

namespace eegbridge {
namespace {

using ad::Matrix;
using ad::Tape;
using ad::Var;

using UnaryOp = std::function<Var(Var)>;

std::vector<double> flat(const Matrix& m) { return {m.data(), m.data() + m.size()}; }

Matrix unflat(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

// Checks d/dx sum(w .* op(x)) against central differences, and the
// double-backward gradient of sum(grad^2) against differences of the grad.
void check_op(const std::string& name, const UnaryOp& op, Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Matrix x0 = oracle::gaussian_matrix(rows, cols, rng);
  Tape probe;
  const Matrix out_shape = op(probe.leaf(x0)).value();
  const Matrix w = oracle::gaussian_matrix(out_shape.rows(), out_shape.cols(), rng);

  const auto value = [&](const std::vector<double>& v) {
    Tape t;
    return ad::scalar(ad::sum_all(ad::hadamard(op(t.leaf(unflat(v, rows, cols))), t.constant(w))));
  };
  const auto first = [&](const Matrix& x, bool create_graph, Tape& t) {
    const Var xv = t.leaf(x);
    const Var y = ad::sum_all(ad::hadamard(op(xv), t.constant(w)));
    const std::vector<Var> wrt = {xv};
    return std::pair{xv, t.gradient(y, wrt, std::nullopt, create_graph)[0]};
  };

  Tape t1;
  const Matrix g = first(x0, false, t1).second.value();
  const auto fd = oracle::central_differences(value, flat(x0), 1e-6);
  for (std::size_t i = 0; i < fd.size(); ++i) {
    EXPECT_LT(oracle::relative_error(g.data()[i], fd[i], 1e-4), 1e-5) << name << " first order, entry " << i;
  }

  Tape t2;
  const auto [xv, gv] = first(x0, true, t2);
  const std::vector<Var> wrt = {xv};
  const Matrix gg = t2.gradient(ad::sum_all(ad::square(gv)), wrt)[0].value();
  const auto grad_sq = [&](const std::vector<double>& v) {
    Tape t;
    return first(unflat(v, rows, cols), false, t).second.value().squaredNorm();
  };
  const auto fd2 = oracle::central_differences(grad_sq, flat(x0), 1e-5);
  for (std::size_t i = 0; i < fd2.size(); ++i) {
    EXPECT_LT(oracle::relative_error(gg.data()[i], fd2[i], 1e-3), 1e-4) << name << " second order, entry " << i;
  }
}

TEST(Autodiff, SquareAtThree) {
  Tape t;
  const Var x = t.leaf(Matrix::Constant(1, 1, 3.0));
  const std::vector<Var> wrt = {x};
  EXPECT_DOUBLE_EQ(t.gradient(ad::square(x), wrt)[0].value()(0, 0), 6.0);
}

TEST(Autodiff, ConstantFunctionHasZeroGradient) {
  Tape t;
  const Var x = t.leaf(Matrix::Constant(2, 2, 1.0));
  const Var c = t.constant(Matrix::Constant(2, 2, 5.0));
  const std::vector<Var> wrt = {x};
  const Var y = ad::sum_all(ad::add(c, ad::scale(x, 0.0)));
  EXPECT_EQ(t.gradient(y, wrt)[0].value().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Autodiff, HalfSquaredNormGradientIsIdentity) {
  Tape t;
  const Matrix v = (Matrix(1, 3) << 0.5, -2.0, 1.5).finished();
  const Var x = t.leaf(v);
  const std::vector<Var> wrt = {x};
  EXPECT_EQ(t.gradient(ad::scale(ad::sum_all(ad::square(x)), 0.5), wrt)[0].value(), v);
}

TEST(Autodiff, ElementwiseOps) {
  check_op("tanh", [](Var x) { return ad::tanh(x); }, 3, 4, 1);
  check_op("leaky_relu", [](Var x) { return ad::leaky_relu(x, 0.2); }, 3, 4, 2);
  check_op("square", [](Var x) { return ad::square(x); }, 3, 4, 3);
  check_op("scale", [](Var x) { return ad::scale(ad::square(x), -1.7); }, 2, 3, 4);
  check_op("add_scalar", [](Var x) { return ad::square(ad::add_scalar(x, 0.3)); }, 2, 3, 5);
  check_op("sqrt", [](Var x) { return ad::sqrt(ad::add_scalar(ad::square(x), 0.5)); }, 3, 3, 6);
  check_op("safe_reciprocal", [](Var x) { return ad::safe_reciprocal(ad::add_scalar(ad::square(x), 1.0)); }, 3, 3, 7);
  check_op("mask_mul",
           [](Var x) { return ad::mask_mul(ad::square(x), (Matrix(2, 2) << 1, 0, 0.5, 2).finished()); }, 2, 2, 8);
  check_op("hadamard", [](Var x) { return ad::hadamard(ad::tanh(x), x); }, 3, 2, 9);
  check_op("sub", [](Var x) { return ad::sub(ad::square(x), ad::tanh(x)); }, 3, 2, 10);
}

TEST(Autodiff, LinearAlgebraOps) {
  std::mt19937_64 rng(11);
  const Matrix a = oracle::gaussian_matrix(4, 3, rng);
  const Matrix b = oracle::gaussian_matrix(1, 3, rng);
  check_op("matmul left", [&](Var x) { return ad::tanh(ad::matmul(x, x.tape->constant(a.transpose()))); }, 2, 3, 12);
  check_op("matmul right", [&](Var x) { return ad::square(ad::matmul(x.tape->constant(a), x)); }, 3, 2, 13);
  check_op("matmul self", [](Var x) { return ad::matmul(ad::transpose(x), ad::tanh(x)); }, 3, 2, 14);
  check_op("add_bias", [&](Var x) { return ad::tanh(ad::add_bias(x, x.tape->constant(b))); }, 4, 3, 15);
  check_op("bias gradient", [&](Var x) { return ad::tanh(ad::add_bias(x.tape->constant(a), x)); }, 1, 3, 16);
  check_op("sum_rows", [](Var x) { return ad::square(ad::sum_rows(ad::tanh(x))); }, 4, 3, 17);
  check_op("sum_cols", [](Var x) { return ad::square(ad::sum_cols(ad::tanh(x))); }, 4, 3, 18);
  check_op("broadcast_rows", [](Var x) { return ad::tanh(ad::broadcast_rows(x, 5)); }, 1, 3, 19);
  check_op("broadcast_cols", [](Var x) { return ad::tanh(ad::broadcast_cols(x, 5)); }, 3, 1, 20);
}

TEST(Autodiff, StructuralOps) {
  check_op("concat", [](Var x) { return ad::square(ad::concat_cols(x, ad::tanh(x))); }, 3, 2, 21);
  check_op("slice", [](Var x) { return ad::square(ad::slice_cols(x, 1, 2)); }, 3, 4, 22);
  check_op("pad", [](Var x) { return ad::tanh(ad::pad_cols(ad::square(x), 1, 5)); }, 3, 2, 23);
  check_op("gather", [](Var x) { return ad::square(ad::gather_rows(x, {2, 0, 2, 1})); }, 3, 2, 24);
  check_op("scatter", [](Var x) { return ad::tanh(ad::scatter_add_rows(x, {1, 1, 0}, 3)); }, 3, 2, 25);
  check_op("reshape", [](Var x) { return ad::tanh(ad::reshape_rows(ad::square(x), 2, 6)); }, 4, 3, 26);
  check_op("mean_all", [](Var x) { return ad::square(ad::mean_all(ad::tanh(x))); }, 3, 3, 27);
}

TEST(Autodiff, ReshapeGroupsConsecutiveRows) {
  Tape t;
  const Matrix m = (Matrix(4, 2) << 1, 2, 3, 4, 5, 6, 7, 8).finished();
  const Matrix r = ad::reshape_rows(t.leaf(m), 2, 4).value();
  EXPECT_EQ(r, (Matrix(2, 4) << 1, 2, 3, 4, 5, 6, 7, 8).finished());
}

TEST(Autodiff, SafeReciprocalOfZeroIsZero) {
  Tape t;
  const Var x = t.leaf(Matrix::Zero(1, 2));
  EXPECT_EQ(ad::safe_reciprocal(x).value(), Matrix::Zero(1, 2));
}

TEST(Autodiff, ShapeErrors) {
  Tape t;
  const Var a = t.leaf(Matrix::Zero(2, 3));
  const Var b = t.leaf(Matrix::Zero(2, 3));
  EXPECT_ERROR_CODE(ad::matmul(a, b), ErrorCode::kShapeMismatch);
  EXPECT_ERROR_CODE(ad::add(a, t.leaf(Matrix::Zero(3, 2))), ErrorCode::kShapeMismatch);
  EXPECT_ERROR_CODE(ad::slice_cols(a, 2, 2), ErrorCode::kShapeMismatch);
  EXPECT_ERROR_CODE(ad::reshape_rows(a, 4, 2), ErrorCode::kShapeMismatch);
  EXPECT_ERROR_CODE(ad::scalar(a), ErrorCode::kNonScalarOutput);
  Tape other;
  EXPECT_ERROR_CODE(ad::add(a, other.leaf(Matrix::Zero(2, 3))), ErrorCode::kInvalidArgument);
}

TEST(Autodiff, SeedWeightsTheOutput) {
  Tape t;
  const Var x = t.leaf((Matrix(1, 2) << 1.0, 2.0).finished());
  const std::vector<Var> wrt = {x};
  const Matrix seed = (Matrix(1, 2) << 3.0, -1.0).finished();
  const Matrix g = t.gradient(ad::square(x), wrt, seed)[0].value();
  EXPECT_EQ(g, (Matrix(1, 2) << 6.0, -4.0).finished());
}

TEST(Mlp, IdentityLayerIsLinearMap) {
  Mlp m(MlpSpec::dense_stack({3, 2}, Activation::kIdentity, Activation::kIdentity));
  m.parameters()[0] << 1, 2, 3, 4, 5, 6;
  const Matrix x = (Matrix(1, 3) << 1, -1, 2).finished();
  EXPECT_EQ(m.predict(x), x * m.parameters()[0]);
}

TEST(Mlp, ZeroResidualBlockIsIdentity) {
  Mlp m(MlpSpec{{LayerSpec::residual(4, Activation::kLeakyRelu)}});
  std::mt19937_64 rng(3);
  const Matrix x = oracle::gaussian_matrix(5, 4, rng);
  EXPECT_EQ(m.predict(x), x);
}

TEST(Mlp, MatchesStraightLineImplementation) {
  std::mt19937_64 rng(5);
  Mlp m(MlpSpec::dense_stack({4, 6, 3}, Activation::kTanh, Activation::kIdentity));
  m.initialize(rng);
  oracle::DenseNet ref{{4, 6, 3}, {}, {}};
  for (std::size_t l = 0; l < 2; ++l) {
    const Matrix& w = m.parameters()[2 * l];
    std::vector<double> rowmajor;
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) rowmajor.push_back(w(i, j));
    }
    ref.weights.push_back(rowmajor);
    ref.biases.push_back(flat(m.parameters()[2 * l + 1]));
  }
  const Matrix x = oracle::gaussian_matrix(7, 4, rng);
  const Matrix y = m.predict(x);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    std::vector<double> row(4);
    for (int k = 0; k < 4; ++k) row[k] = x(r, k);
    const auto expected = ref(row);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(y(r, k), expected[k], 1e-12);
  }
}

TEST(Mlp, ForwardMatchesPredict) {
  std::mt19937_64 rng(6);
  Mlp m(MlpSpec{{LayerSpec::dense(3, 5, Activation::kLeakyRelu), LayerSpec::residual(5, Activation::kTanh),
                 LayerSpec::dense(5, 2, Activation::kIdentity)}});
  m.initialize(rng);
  const Matrix x = oracle::gaussian_matrix(4, 3, rng);
  auto pass = forward(m, x);
  EXPECT_LT((pass.value() - m.predict(x)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Mlp, ParameterGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  Mlp m(MlpSpec{{LayerSpec::dense(3, 6, Activation::kTanh), LayerSpec::residual(6, Activation::kTanh),
                 LayerSpec::dense(6, 2, Activation::kIdentity)}});
  m.initialize(rng);
  const Matrix x = oracle::gaussian_matrix(5, 3, rng);
  const Matrix seed = oracle::gaussian_matrix(5, 2, rng);
  auto pass = forward(m, x);
  const auto grads = backward(pass, seed);
  for (std::size_t p = 0; p < m.parameters().size(); ++p) {
    const auto f = [&](const std::vector<double>& v) {
      Mlp copy = m;
      copy.parameters()[p] = unflat(v, m.parameters()[p].rows(), m.parameters()[p].cols());
      return (copy.predict(x).array() * seed.array()).sum();
    };
    const auto fd = oracle::central_differences(f, flat(m.parameters()[p]), 1e-4);
    for (std::size_t i = 0; i < fd.size(); ++i) {
      EXPECT_LT(oracle::relative_error(grads.params[p].data()[i], fd[i], 1e-3), 1e-5) << "tensor " << p << " entry " << i;
    }
  }
  const auto fx = [&](const std::vector<double>& v) {
    return (m.predict(unflat(v, x.rows(), x.cols())).array() * seed.array()).sum();
  };
  const auto fdx = oracle::central_differences(fx, flat(x), 1e-4);
  for (std::size_t i = 0; i < fdx.size(); ++i) {
    EXPECT_LT(oracle::relative_error(grads.input.data()[i], fdx[i], 1e-3), 1e-5);
  }
}

TEST(Mlp, SpecValidation) {
  EXPECT_ERROR_CODE(MlpSpec{}.validate(), ErrorCode::kShapeMismatch);
  EXPECT_ERROR_CODE((MlpSpec{{LayerSpec::dense(3, 4, Activation::kTanh), LayerSpec::dense(5, 1, Activation::kTanh)}}
                         .validate()),
                    ErrorCode::kShapeMismatch);
  EXPECT_ERROR_CODE(MlpSpec::dense_stack({3}, Activation::kTanh, Activation::kTanh), ErrorCode::kShapeMismatch);
  EXPECT_ERROR_CODE(parse_activation("relu6"), ErrorCode::kInvalidConfig);
}

TEST(Mlp, CheckpointRoundTrip) {
  std::mt19937_64 rng(8);
  Mlp m(MlpSpec{{LayerSpec::dense(3, 5, Activation::kLeakyRelu), LayerSpec::residual(5, Activation::kTanh),
                 LayerSpec::dense(5, 1, Activation::kIdentity)},
                0.1});
  m.initialize(rng);
  std::stringstream buf;
  write_mlp(buf, m);
  const Mlp back = read_mlp(buf);
  EXPECT_EQ(back.spec(), m.spec());
  ASSERT_EQ(back.parameters().size(), m.parameters().size());
  for (std::size_t i = 0; i < m.parameters().size(); ++i) EXPECT_EQ(back.parameters()[i], m.parameters()[i]);
  std::stringstream junk("not a network");
  EXPECT_ERROR_CODE(read_mlp(junk), ErrorCode::kIoError);
}

TEST(InputGradient, LinearCriticGivesWeightEverywhere) {
  Mlp m(MlpSpec::dense_stack({3, 1}, Activation::kIdentity, Activation::kIdentity));
  m.parameters()[0] << 0.2, -0.7, 1.1;
  m.parameters()[1](0, 0) = 4.0;
  std::mt19937_64 rng(9);
  const Matrix g = input_gradient(m, oracle::gaussian_matrix(6, 3, rng));
  for (Eigen::Index r = 0; r < g.rows(); ++r) EXPECT_EQ(g.row(r).transpose(), m.parameters()[0]);
}

TEST(InputGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  Mlp m(MlpSpec::dense_stack({4, 8, 8, 1}, Activation::kTanh, Activation::kIdentity));
  m.initialize(rng);
  const Matrix x = oracle::gaussian_matrix(3, 4, rng);
  const Matrix g = input_gradient(m, x);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto f = [&](const std::vector<double>& v) { return m.predict(unflat(v, 1, 4))(0, 0); };
    const auto fd = oracle::central_differences(f, flat(x.row(r)), 1e-5);
    for (int k = 0; k < 4; ++k) EXPECT_LT(oracle::relative_error(g(r, k), fd[k], 1e-4), 1e-5);
  }
}

TEST(InputGradient, NeedsScalarOutput) {
  Mlp m(MlpSpec::dense_stack({3, 2}, Activation::kIdentity, Activation::kIdentity));
  EXPECT_ERROR_CODE(input_gradient(m, Matrix::Zero(1, 3)), ErrorCode::kNonScalarOutput);
}

TEST(GradientPenalty, UnitNormLinearCriticIsZero) {
  Mlp m(MlpSpec::dense_stack({2, 1}, Activation::kIdentity, Activation::kIdentity));
  m.parameters()[0] << 0.6, 0.8;
  const auto res = grad_penalty_backward(m, (Matrix(2, 2) << 1, 2, -3, 0.5).finished());
  EXPECT_NEAR(res.penalty, 0.0, 1e-15);
  for (const auto& p : res.params) EXPECT_LT(p.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(GradientPenalty, OneDimensionalHandCase) {
  for (double a : {2.0, -2.0, 0.5}) {
    Mlp m(MlpSpec::dense_stack({1, 1}, Activation::kIdentity, Activation::kIdentity));
    m.parameters()[0](0, 0) = a;
    const auto res = grad_penalty_backward(m, Matrix::Constant(3, 1, 0.4));
    const double expected = (std::abs(a) - 1.0) * (std::abs(a) - 1.0);
    EXPECT_NEAR(res.penalty, expected, 1e-12);
    EXPECT_NEAR(res.params[0](0, 0), 2.0 * (std::abs(a) - 1.0) * (a > 0 ? 1.0 : -1.0), 1e-12);
    EXPECT_EQ(res.params[1](0, 0), 0.0);
  }
}

TEST(GradientPenalty, ParameterGradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(100 + seed);
    Mlp m(MlpSpec::dense_stack({3, 6, 5, 1}, Activation::kTanh, Activation::kIdentity));
    m.initialize(rng);
    const Matrix x = oracle::gaussian_matrix(4, 3, rng);
    const auto res = grad_penalty_backward(m, x);
    for (std::size_t p = 0; p < m.parameters().size(); ++p) {
      const auto f = [&](const std::vector<double>& v) {
        Mlp copy = m;
        copy.parameters()[p] = unflat(v, m.parameters()[p].rows(), m.parameters()[p].cols());
        const Matrix g = input_gradient(copy, x);
        return (g.rowwise().norm().array() - 1.0).square().mean();
      };
      const auto fd = oracle::central_differences(f, flat(m.parameters()[p]), 1e-5);
      for (std::size_t i = 0; i < fd.size(); ++i) {
        EXPECT_LT(oracle::relative_error(res.params[p].data()[i], fd[i], 1e-4), 1e-4)
            << "seed " << seed << " tensor " << p << " entry " << i;
      }
    }
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<Matrix> params = {Matrix::Constant(2, 2, 1.0)};
  const std::vector<Matrix> grads = {(Matrix(2, 2) << 3.0, -0.5, 1e-3, -200.0).finished()};
  Adam opt(0.01, 0.9, 0.999);
  opt.step(params, grads);
  // Bias-corrected first step is lr * g / (|g| + eps') = lr * sign(g) up to eps.
  EXPECT_NEAR(params[0](0, 0), 0.99, 1e-8);
  EXPECT_NEAR(params[0](0, 1), 1.01, 1e-8);
  EXPECT_NEAR(params[0](1, 0), 0.99, 1e-7);
  EXPECT_NEAR(params[0](1, 1), 1.01, 1e-8);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, MinimizesQuadratic) {
  std::vector<Matrix> params = {Matrix::Constant(1, 3, 5.0)};
  Adam opt(0.05, 0.9, 0.999);
  for (int i = 0; i < 2000; ++i) opt.step(params, {2.0 * (params[0].array() - 1.0).matrix()});
  EXPECT_LT((params[0].array() - 1.0).abs().maxCoeff(), 1e-2);
}

}  // namespace
}  // namespace eegbridge

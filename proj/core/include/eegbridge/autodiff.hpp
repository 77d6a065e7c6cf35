#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape is a Wengert list: every operation appends a node holding its value
// and parent ids. Vector-Jacobian products are themselves expressed as tape
// operations, so a backward pass recorded with create_graph = true can be
// differentiated again (double backpropagation).
namespace eegbridge::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

enum class Op : std::uint8_t {
  kLeaf,
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kHadamard,
  kScale,
  kAddScalar,
  kAddBias,
  kSumRows,
  kSumCols,
  kBroadcastRows,
  kBroadcastCols,
  kTanh,
  kLeakyRelu,
  kMaskMul,
  kSqrt,
  kSafeReciprocal,
  kConcatCols,
  kSliceCols,
  kPadCols,
  kGatherRows,
  kScatterAddRows,
  kReshapeRows,
};

// Per-node constants needed by the backward rule of some ops.
struct TapeAux {
  double scalar = 0.0;
  Eigen::Index i0 = 0;
  Eigen::Index i1 = 0;
  std::vector<Eigen::Index> index;
  Matrix mask;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, bool requires_grad = true);
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  const Matrix& value(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradients of sum(seed .* output) with respect to each of `wrt`; the seed
  // defaults to all ones. With create_graph the backward pass is recorded on
  // this tape and the returned Vars are differentiable.
  std::vector<Var> gradient(Var output, std::span<const Var> wrt, const std::optional<Matrix>& seed = std::nullopt,
                            bool create_graph = false);

  using Aux = TapeAux;

  Var record(Op op, Matrix value, int a, int b, Aux aux = {});

 private:
  struct Node {
    Op op = Op::kLeaf;
    int a = -1;
    int b = -1;
    bool requires_grad = false;
    Matrix value;
    Aux aux;
  };

  void accumulate(std::vector<std::optional<Var>>& grads, int id, Var contribution);
  void backprop_node(int id, Var g, std::vector<std::optional<Var>>& grads);

  std::vector<Node> nodes_;
  bool grad_mode_ = true;
};

// Elementwise and linear-algebra primitives. All operands must share a tape.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var add_bias(Var x, Var bias);  // x: n x k, bias: 1 x k
Var sum_rows(Var x);            // n x k -> 1 x k
Var sum_cols(Var x);            // n x k -> n x 1
Var broadcast_rows(Var x, Eigen::Index rows);  // 1 x k -> rows x k
Var broadcast_cols(Var x, Eigen::Index cols);  // n x 1 -> n x cols
Var tanh(Var x);
Var leaky_relu(Var x, double slope);
Var mask_mul(Var x, const Matrix& mask);
Var sqrt(Var x);
// 1/x, with the convention 1/0 = 0 so that norms are differentiable at zero.
Var safe_reciprocal(Var x);
Var concat_cols(Var a, Var b);
Var slice_cols(Var x, Eigen::Index start, Eigen::Index width);
Var pad_cols(Var x, Eigen::Index start, Eigen::Index total);
Var gather_rows(Var x, std::vector<Eigen::Index> index);
Var scatter_add_rows(Var x, std::vector<Eigen::Index> index, Eigen::Index rows);
// Row-major reshape, e.g. (B*m) x d -> B x (m*d) groups consecutive rows.
Var reshape_rows(Var x, Eigen::Index rows, Eigen::Index cols);

Var square(Var x);
Var sum_all(Var x);   // -> 1 x 1
Var mean_all(Var x);  // -> 1 x 1
double scalar(Var x);

}  // namespace eegbridge::ad

#include "eegbridge/autodiff.hpp"

#include <cmath>
#include <string>

#include "eegbridge/error.hpp"

namespace eegbridge::ad {

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) fail(ErrorCode::kInvalidArgument, "use of an unbound Var");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (!a.valid() || !b.valid()) fail(ErrorCode::kInvalidArgument, "use of an unbound Var");
  if (a.tape != b.tape) fail(ErrorCode::kInvalidArgument, "operands live on different tapes");
  return *a.tape;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorCode::kShapeMismatch, std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                        std::to_string(b.cols()));
  }
}

}  // namespace

const Matrix& Var::value() const { return tape_of(*this).value(*this); }

Var Tape::leaf(Matrix value, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.requires_grad = requires_grad;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Tape::value(Var v) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    fail(ErrorCode::kInvalidArgument, "Var does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

bool Tape::requires_grad(Var v) const {
  value(v);
  return nodes_[static_cast<std::size_t>(v.id)].requires_grad;
}

Var Tape::record(Op op, Matrix value, int a, int b, Aux aux) {
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  n.value = std::move(value);
  n.aux = std::move(aux);
  n.requires_grad = grad_mode_ && ((a >= 0 && nodes_[static_cast<std::size_t>(a)].requires_grad) ||
                                   (b >= 0 && nodes_[static_cast<std::size_t>(b)].requires_grad));
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(std::vector<std::optional<Var>>& grads, int id, Var contribution) {
  if (id < 0 || !nodes_[static_cast<std::size_t>(id)].requires_grad) return;
  auto& slot = grads[static_cast<std::size_t>(id)];
  slot = slot ? add(*slot, contribution) : contribution;
}

void Tape::backprop_node(int id, Var g, std::vector<std::optional<Var>>& grads) {
  // Copy what we need: recording new nodes may reallocate nodes_.
  const Op op = nodes_[static_cast<std::size_t>(id)].op;
  const int ia = nodes_[static_cast<std::size_t>(id)].a;
  const int ib = nodes_[static_cast<std::size_t>(id)].b;
  const Var a{this, ia};
  const Var b{this, ib};
  const Var self{this, id};
  const auto aux = [&]() -> const Aux& { return nodes_[static_cast<std::size_t>(id)].aux; };

  switch (op) {
    case Op::kLeaf:
      return;
    case Op::kMatMul:
      accumulate(grads, ia, matmul(g, transpose(b)));
      accumulate(grads, ib, matmul(transpose(a), g));
      return;
    case Op::kTranspose:
      accumulate(grads, ia, transpose(g));
      return;
    case Op::kAdd:
      accumulate(grads, ia, g);
      accumulate(grads, ib, g);
      return;
    case Op::kSub:
      accumulate(grads, ia, g);
      accumulate(grads, ib, scale(g, -1.0));
      return;
    case Op::kHadamard:
      accumulate(grads, ia, hadamard(g, b));
      accumulate(grads, ib, hadamard(g, a));
      return;
    case Op::kScale:
      accumulate(grads, ia, scale(g, aux().scalar));
      return;
    case Op::kAddScalar:
      accumulate(grads, ia, g);
      return;
    case Op::kAddBias:
      accumulate(grads, ia, g);
      accumulate(grads, ib, sum_rows(g));
      return;
    case Op::kSumRows:
      accumulate(grads, ia, broadcast_rows(g, value(a).rows()));
      return;
    case Op::kSumCols:
      accumulate(grads, ia, broadcast_cols(g, value(a).cols()));
      return;
    case Op::kBroadcastRows:
      accumulate(grads, ia, sum_rows(g));
      return;
    case Op::kBroadcastCols:
      accumulate(grads, ia, sum_cols(g));
      return;
    case Op::kTanh:
      // d tanh = 1 - y^2, written in terms of the output node.
      accumulate(grads, ia, hadamard(g, add_scalar(scale(hadamard(self, self), -1.0), 1.0)));
      return;
    case Op::kLeakyRelu:
    case Op::kMaskMul: {
      const Matrix mask = aux().mask;
      accumulate(grads, ia, mask_mul(g, mask));
      return;
    }
    case Op::kSqrt:
      accumulate(grads, ia, hadamard(g, scale(safe_reciprocal(self), 0.5)));
      return;
    case Op::kSafeReciprocal:
      accumulate(grads, ia, hadamard(g, scale(hadamard(self, self), -1.0)));
      return;
    case Op::kConcatCols: {
      const auto ka = value(a).cols();
      const auto kb = value(b).cols();
      accumulate(grads, ia, slice_cols(g, 0, ka));
      accumulate(grads, ib, slice_cols(g, ka, kb));
      return;
    }
    case Op::kSliceCols: {
      const auto start = aux().i0;
      accumulate(grads, ia, pad_cols(g, start, value(a).cols()));
      return;
    }
    case Op::kPadCols: {
      const auto start = aux().i0;
      accumulate(grads, ia, slice_cols(g, start, value(a).cols()));
      return;
    }
    case Op::kGatherRows: {
      auto index = aux().index;
      accumulate(grads, ia, scatter_add_rows(g, std::move(index), value(a).rows()));
      return;
    }
    case Op::kScatterAddRows: {
      auto index = aux().index;
      accumulate(grads, ia, gather_rows(g, std::move(index)));
      return;
    }
    case Op::kReshapeRows:
      accumulate(grads, ia, reshape_rows(g, value(a).rows(), value(a).cols()));
      return;
  }
}

std::vector<Var> Tape::gradient(Var output, std::span<const Var> wrt, const std::optional<Matrix>& seed,
                                bool create_graph) {
  const Matrix& out_value = value(output);
  Matrix seed_value = seed ? *seed : Matrix::Ones(out_value.rows(), out_value.cols());
  require_same_shape(seed_value, out_value, "gradient seed");
  for (const auto& w : wrt) value(w);

  const bool saved_mode = grad_mode_;
  grad_mode_ = create_graph;
  std::vector<std::optional<Var>> grads(static_cast<std::size_t>(output.id) + 1);
  grads[static_cast<std::size_t>(output.id)] = constant(std::move(seed_value));
  try {
    for (int id = output.id; id >= 0; --id) {
      const auto& slot = grads[static_cast<std::size_t>(id)];
      if (!slot || !nodes_[static_cast<std::size_t>(id)].requires_grad) continue;
      backprop_node(id, *slot, grads);
    }
  } catch (...) {
    grad_mode_ = saved_mode;
    throw;
  }
  grad_mode_ = saved_mode;

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    if (w.id <= output.id && grads[static_cast<std::size_t>(w.id)]) {
      result.push_back(*grads[static_cast<std::size_t>(w.id)]);
    } else {
      const Matrix& wv = value(w);
      result.push_back(constant(Matrix::Zero(wv.rows(), wv.cols())));
    }
  }
  return result;
}

Var matmul(Var a, Var b) {
  auto& t = tape_of(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.rows()) {
    fail(ErrorCode::kShapeMismatch, "matmul: " + std::to_string(av.rows()) + "x" + std::to_string(av.cols()) +
                                        " by " + std::to_string(bv.rows()) + "x" + std::to_string(bv.cols()));
  }
  Matrix v = av * bv;
  return t.record(Op::kMatMul, std::move(v), a.id, b.id);
}

Var transpose(Var a) {
  auto& t = tape_of(a);
  Matrix v = t.value(a).transpose();
  return t.record(Op::kTranspose, std::move(v), a.id, -1);
}

Var add(Var a, Var b) {
  auto& t = tape_of(a, b);
  require_same_shape(t.value(a), t.value(b), "add");
  Matrix v = t.value(a) + t.value(b);
  return t.record(Op::kAdd, std::move(v), a.id, b.id);
}

Var sub(Var a, Var b) {
  auto& t = tape_of(a, b);
  require_same_shape(t.value(a), t.value(b), "sub");
  Matrix v = t.value(a) - t.value(b);
  return t.record(Op::kSub, std::move(v), a.id, b.id);
}

Var hadamard(Var a, Var b) {
  auto& t = tape_of(a, b);
  require_same_shape(t.value(a), t.value(b), "hadamard");
  Matrix v = t.value(a).cwiseProduct(t.value(b));
  return t.record(Op::kHadamard, std::move(v), a.id, b.id);
}

Var scale(Var a, double c) {
  auto& t = tape_of(a);
  Matrix v = t.value(a) * c;
  Tape::Aux aux;
  aux.scalar = c;
  return t.record(Op::kScale, std::move(v), a.id, -1, std::move(aux));
}

Var add_scalar(Var a, double c) {
  auto& t = tape_of(a);
  Matrix v = t.value(a).array() + c;
  Tape::Aux aux;
  aux.scalar = c;
  return t.record(Op::kAddScalar, std::move(v), a.id, -1, std::move(aux));
}

Var add_bias(Var x, Var bias) {
  auto& t = tape_of(x, bias);
  const Matrix& xv = t.value(x);
  const Matrix& bv = t.value(bias);
  if (bv.rows() != 1 || bv.cols() != xv.cols()) fail(ErrorCode::kShapeMismatch, "add_bias: bias must be 1 x cols");
  Matrix v = xv.rowwise() + bv.row(0);
  return t.record(Op::kAddBias, std::move(v), x.id, bias.id);
}

Var sum_rows(Var x) {
  auto& t = tape_of(x);
  Matrix v = t.value(x).colwise().sum();
  return t.record(Op::kSumRows, std::move(v), x.id, -1);
}

Var sum_cols(Var x) {
  auto& t = tape_of(x);
  Matrix v = t.value(x).rowwise().sum();
  return t.record(Op::kSumCols, std::move(v), x.id, -1);
}

Var broadcast_rows(Var x, Eigen::Index rows) {
  auto& t = tape_of(x);
  const Matrix& xv = t.value(x);
  if (xv.rows() != 1) fail(ErrorCode::kShapeMismatch, "broadcast_rows expects a row vector");
  Matrix v = xv.replicate(rows, 1);
  return t.record(Op::kBroadcastRows, std::move(v), x.id, -1);
}

Var broadcast_cols(Var x, Eigen::Index cols) {
  auto& t = tape_of(x);
  const Matrix& xv = t.value(x);
  if (xv.cols() != 1) fail(ErrorCode::kShapeMismatch, "broadcast_cols expects a column vector");
  Matrix v = xv.replicate(1, cols);
  return t.record(Op::kBroadcastCols, std::move(v), x.id, -1);
}

Var tanh(Var x) {
  auto& t = tape_of(x);
  Matrix v = t.value(x).array().tanh();
  return t.record(Op::kTanh, std::move(v), x.id, -1);
}

Var leaky_relu(Var x, double slope) {
  auto& t = tape_of(x);
  const Matrix& xv = t.value(x);
  Tape::Aux aux;
  aux.scalar = slope;
  aux.mask = (xv.array() > 0.0).select(Matrix::Ones(xv.rows(), xv.cols()),
                                       Matrix::Constant(xv.rows(), xv.cols(), slope));
  Matrix v = xv.cwiseProduct(aux.mask);
  return t.record(Op::kLeakyRelu, std::move(v), x.id, -1, std::move(aux));
}

Var mask_mul(Var x, const Matrix& mask) {
  auto& t = tape_of(x);
  require_same_shape(t.value(x), mask, "mask_mul");
  Tape::Aux aux;
  aux.mask = mask;
  Matrix v = t.value(x).cwiseProduct(mask);
  return t.record(Op::kMaskMul, std::move(v), x.id, -1, std::move(aux));
}

Var sqrt(Var x) {
  auto& t = tape_of(x);
  Matrix v = t.value(x).array().sqrt();
  return t.record(Op::kSqrt, std::move(v), x.id, -1);
}

Var safe_reciprocal(Var x) {
  auto& t = tape_of(x);
  const Matrix& xv = t.value(x);
  Matrix v = (xv.array() == 0.0).select(Matrix::Zero(xv.rows(), xv.cols()), xv.array().inverse().matrix());
  return t.record(Op::kSafeReciprocal, std::move(v), x.id, -1);
}

Var concat_cols(Var a, Var b) {
  auto& t = tape_of(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != bv.rows()) fail(ErrorCode::kShapeMismatch, "concat_cols: row counts differ");
  Matrix v(av.rows(), av.cols() + bv.cols());
  v << av, bv;
  return t.record(Op::kConcatCols, std::move(v), a.id, b.id);
}

Var slice_cols(Var x, Eigen::Index start, Eigen::Index width) {
  auto& t = tape_of(x);
  const Matrix& xv = t.value(x);
  if (start < 0 || width < 0 || start + width > xv.cols()) fail(ErrorCode::kShapeMismatch, "slice_cols out of range");
  Matrix v = xv.middleCols(start, width);
  Tape::Aux aux;
  aux.i0 = start;
  return t.record(Op::kSliceCols, std::move(v), x.id, -1, std::move(aux));
}

Var pad_cols(Var x, Eigen::Index start, Eigen::Index total) {
  auto& t = tape_of(x);
  const Matrix& xv = t.value(x);
  if (start < 0 || start + xv.cols() > total) fail(ErrorCode::kShapeMismatch, "pad_cols out of range");
  Matrix v = Matrix::Zero(xv.rows(), total);
  v.middleCols(start, xv.cols()) = xv;
  Tape::Aux aux;
  aux.i0 = start;
  return t.record(Op::kPadCols, std::move(v), x.id, -1, std::move(aux));
}

Var gather_rows(Var x, std::vector<Eigen::Index> index) {
  auto& t = tape_of(x);
  const Matrix& xv = t.value(x);
  Matrix v(static_cast<Eigen::Index>(index.size()), xv.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= xv.rows()) fail(ErrorCode::kShapeMismatch, "gather_rows index out of range");
    v.row(static_cast<Eigen::Index>(r)) = xv.row(index[r]);
  }
  Tape::Aux aux;
  aux.index = std::move(index);
  return t.record(Op::kGatherRows, std::move(v), x.id, -1, std::move(aux));
}

Var scatter_add_rows(Var x, std::vector<Eigen::Index> index, Eigen::Index rows) {
  auto& t = tape_of(x);
  const Matrix& xv = t.value(x);
  if (static_cast<Eigen::Index>(index.size()) != xv.rows()) {
    fail(ErrorCode::kShapeMismatch, "scatter_add_rows: index length differs from row count");
  }
  Matrix v = Matrix::Zero(rows, xv.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= rows) fail(ErrorCode::kShapeMismatch, "scatter_add_rows index out of range");
    v.row(index[r]) += xv.row(static_cast<Eigen::Index>(r));
  }
  Tape::Aux aux;
  aux.index = std::move(index);
  return t.record(Op::kScatterAddRows, std::move(v), x.id, -1, std::move(aux));
}

Var reshape_rows(Var x, Eigen::Index rows, Eigen::Index cols) {
  auto& t = tape_of(x);
  const Matrix& xv = t.value(x);
  if (rows * cols != xv.size()) fail(ErrorCode::kShapeMismatch, "reshape_rows changes the element count");
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMajor rm = xv;
  Matrix v = Eigen::Map<const RowMajor>(rm.data(), rows, cols);
  return t.record(Op::kReshapeRows, std::move(v), x.id, -1);
}

Var square(Var x) { return hadamard(x, x); }

Var sum_all(Var x) { return sum_cols(sum_rows(x)); }

Var mean_all(Var x) {
  const auto n = static_cast<double>(x.value().size());
  return scale(sum_all(x), 1.0 / n);
}

double scalar(Var x) {
  const Matrix& v = x.value();
  if (v.size() != 1) fail(ErrorCode::kNonScalarOutput, "expected a 1x1 value");
  return v(0, 0);
}

}  // namespace eegbridge::ad

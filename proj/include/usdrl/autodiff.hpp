#pragma once

// Reverse-mode differentiation over dense double matrices.
//
// A Tape records every operation as a node holding its value and a closure that
// pushes the node's gradient into its inputs. Tapes are single-threaded; run
// independent samples on independent tapes and merge their GradientStores.

#include "usdrl/params.hpp"

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

namespace usdrl::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  explicit Tape(const ParameterSet& params) : params_(&params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  // Vars point at their tape, so a tape never moves once recorded into.
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);

  /// Leaf bound to a parameter. Repeated calls return the same node, so a
  /// parameter shared between two paths accumulates both contributions.
  /// Frozen parameters and buffers become constants.
  Var parameter(ParamId id);
  const ParameterSet& params() const { return *params_; }
  bool has_params() const { return params_ != nullptr; }

  /// Records an operation. The node requires a gradient iff any input does;
  /// otherwise the closure is dropped.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, std::span<const Var> inputs, Backward backward);

  /// Seeds d(root)/d(root) = 1 on a 1x1 root and propagates.
  void backward(Var root);
  /// Seeds arbitrary output gradients and propagates.
  void backward(std::span<const std::pair<Var, Matrix>> seeds);

  /// Adds g into the gradient of v. Called from backward closures.
  void accumulate(Var v, const Matrix& g);

  /// Adds the gradient of every parameter leaf into store.
  void collect(GradientStore& store) const;

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
    std::size_t param_index = static_cast<std::size_t>(-1);
  };

  void run_backward(std::size_t last);

  std::deque<Node> nodes_;
  const ParameterSet* params_ = nullptr;
  std::vector<std::size_t> param_nodes_;
};

// Elementwise and linear algebra.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var relu(Var a);
/// Exact GELU, x * Phi(x).
Var gelu(Var a);
Var sqrt(Var a);
/// a + row broadcast over every row; row is [1, cols].
Var add_row(Var a, Var row);
/// a * row broadcast over every row (column-wise scaling); row is [1, cols].
Var scale_cols(Var a, Var row);

// Reductions.
Var sum(Var a);
Var mean(Var a);
Var col_mean(Var a);
/// Column-wise maximum, [1, cols]. Ties route the gradient to the first maximal row.
Var col_max(Var a);
/// Euclidean norm of every row, [rows, 1]. The subgradient at a zero row is zero.
Var row_norms(Var a);
Var trace(Var a);
/// Sum of squared off-diagonal entries of a square matrix.
Var offdiag_sumsq(Var a);

// Structure.
Var concat_cols(std::span<const Var> parts);
/// Stacks [1, C] rows into [N, C].
Var stack_rows(std::span<const Var> rows);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index width);
/// Row i comes from first when i % gap == 0, otherwise from second.
Var select_rows_every(Var first, Var second, int gap);

// Normalization.
Var center_cols(Var a);
/// Column standardization with population variance: (x - mean) / sqrt(var + eps).
Var standardize_cols(Var a, double eps);
/// Row-wise layer normalization with gain and bias of shape [1, cols].
Var layer_norm(Var x, Var gain, Var bias, double eps);

// Sequence ops.
/// Same-padded depthwise 1D convolution along rows. kernel is [k, cols], k odd.
Var depthwise_conv(Var x, Var kernel);
/// Multi-head scaled dot-product attention core on already projected q, k, v.
/// Writes the per-head attention weights to weights_out when given.
Var attention(Var q, Var k, Var v, int heads, std::vector<Matrix>* weights_out = nullptr);
/// Mean cross-entropy of row-wise softmax(logits) against integer labels.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

Matrix softmax_rows(const Matrix& logits);

}  // namespace usdrl::ad

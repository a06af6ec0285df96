#include "usdrl/autodiff.hpp"

#include "usdrl/error.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace usdrl::ad {

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw ArgumentError("variables belong to different tapes");
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch [" + std::to_string(a.rows()) + "," +
                     std::to_string(a.cols()) + "] vs [" + std::to_string(b.rows()) + "," +
                     std::to_string(b.cols()) + "]");
  }
}

Matrix scalar_matrix(double v) { return Matrix::Constant(1, 1, v); }

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, static_cast<std::size_t>(-1)});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}, static_cast<std::size_t>(-1)});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(ParamId id) {
  if (params_ == nullptr) throw ArgumentError("tape has no parameter set");
  if (param_nodes_.size() < params_->size()) {
    param_nodes_.resize(params_->size(), static_cast<std::size_t>(-1));
  }
  auto& slot = param_nodes_.at(id.index);
  if (slot != static_cast<std::size_t>(-1)) return Var(this, slot);
  const Parameter& p = (*params_)[id];
  const bool trainable = p.trainable();
  nodes_.push_back(Node{p.value, {}, trainable, {}, trainable ? id.index : static_cast<std::size_t>(-1)});
  slot = nodes_.size() - 1;
  return Var(this, slot);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape() != this) throw ArgumentError("variable belongs to a different tape");
    needs = needs || nodes_[v.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{},
                        static_cast<std::size_t>(-1)});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var root) {
  if (root.rows() != 1 || root.cols() != 1) throw ShapeError("backward root must be a scalar");
  std::pair<Var, Matrix> seed{root, scalar_matrix(1.0)};
  backward(std::span<const std::pair<Var, Matrix>>(&seed, 1));
}

void Tape::backward(std::span<const std::pair<Var, Matrix>> seeds) {
  std::size_t last = 0;
  for (const auto& [v, g] : seeds) {
    require_same_shape(v.value(), g, "backward seed");
    accumulate(v, g);
    last = std::max(last, v.id());
  }
  run_backward(last);
}

void Tape::run_backward(std::size_t last) {
  for (std::size_t i = last + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
    n.backward(*this, n.grad);
  }
}

void Tape::collect(GradientStore& store) const {
  for (const Node& n : nodes_) {
    if (n.param_index != static_cast<std::size_t>(-1) && n.grad.size() > 0) {
      store.accumulate(n.param_index, n.grad);
    }
  }
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b},
                          [a, b](Tape& t, const Matrix& g) {
                            t.accumulate(a, g.cwiseProduct(b.value()));
                            t.accumulate(b, g.cwiseProduct(a.value()));
                          });
}

Var scale(Var a, double s) {
  return a.tape()->record(a.value() * s, {a},
                          [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var add_scalar(Var a, double s) {
  return a.tape()->record(a.value().array() + s, {a},
                          [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()) + " differ");
  }
  return a.tape()->record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

Var transpose(Var a) {
  return a.tape()->record(a.value().transpose(), {a},
                          [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); });
}

Var relu(Var a) {
  return a.tape()->record(a.value().cwiseMax(0.0), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
  });
}

Var gelu(Var a) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    y.data()[i] = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
  }
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, const Matrix& g) {
    const Matrix& x = a.value();
    Matrix d(x.rows(), x.cols());
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
      d.data()[i] = g.data()[i] * (cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v));
    }
    t.accumulate(a, d);
  });
}

Var sqrt(Var a) {
  Matrix y = a.value().cwiseSqrt();
  return a.tape()->record(y, {a}, [a, y](Tape& t, const Matrix& g) {
    t.accumulate(a, (g.array() / (2.0 * y.array())).matrix());
  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: row must be [1, cols]");
  Matrix y = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(y), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (row.requires_grad()) t.accumulate(row, g.colwise().sum());
  });
}

Var scale_cols(Var a, Var row) {
  require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("scale_cols: row must be [1, cols]");
  Matrix y = (a.value().array().rowwise() * row.value().row(0).array()).matrix();
  return a.tape()->record(std::move(y), {a, row}, [a, row](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, (g.array().rowwise() * row.value().row(0).array()).matrix());
    if (row.requires_grad()) t.accumulate(row, g.cwiseProduct(a.value()).colwise().sum());
  });
}

Var sum(Var a) {
  return a.tape()->record(scalar_matrix(a.value().sum()), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return a.tape()->record(scalar_matrix(a.value().sum() / n), {a},
                          [a, n](Tape& t, const Matrix& g) {
                            t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
                          });
}

Var col_mean(Var a) {
  const double n = static_cast<double>(a.rows());
  return a.tape()->record(a.value().colwise().sum() / n, {a}, [a, n](Tape& t, const Matrix& g) {
    Matrix d = g.replicate(a.rows(), 1) / n;
    t.accumulate(a, d);
  });
}

Var col_max(Var a) {
  const Matrix& x = a.value();
  if (x.rows() == 0) throw ShapeError("col_max: empty input");
  Matrix y(1, x.cols());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(x.cols()), 0);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < x.rows(); ++i) {
      if (x(i, j) > x(best, j)) best = i;
    }
    arg[static_cast<std::size_t>(j)] = best;
    y(0, j) = x(best, j);
  }
  return a.tape()->record(std::move(y), {a}, [a, arg](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (Eigen::Index j = 0; j < d.cols(); ++j) d(arg[static_cast<std::size_t>(j)], j) = g(0, j);
    t.accumulate(a, d);
  });
}

Var row_norms(Var a) {
  Matrix y = a.value().rowwise().norm();
  return a.tape()->record(y, {a}, [a, y](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      if (y(i, 0) > 0.0) d.row(i) = a.value().row(i) * (g(i, 0) / y(i, 0));
    }
    t.accumulate(a, d);
  });
}

Var trace(Var a) {
  if (a.rows() != a.cols()) throw ShapeError("trace: matrix is not square");
  return a.tape()->record(scalar_matrix(a.value().trace()), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Identity(a.rows(), a.cols()) * g(0, 0));
  });
}

Var offdiag_sumsq(Var a) {
  if (a.rows() != a.cols()) throw ShapeError("offdiag_sumsq: matrix is not square");
  const Matrix& x = a.value();
  const double total = x.squaredNorm() - x.diagonal().squaredNorm();
  return a.tape()->record(scalar_matrix(total), {a}, [a](Tape& t, const Matrix& g) {
    Matrix d = a.value() * (2.0 * g(0, 0));
    d.diagonal().setZero();
    t.accumulate(a, d);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape* tape = parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix y(rows, cols);
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    y.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape->record(std::move(y), parts, [inputs](Tape& t, const Matrix& g) {
    Eigen::Index off = 0;
    for (const Var& p : inputs) {
      if (p.requires_grad()) t.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no inputs");
  Tape* tape = rows.front().tape();
  const Eigen::Index cols = rows.front().cols();
  Matrix y(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].rows() != 1 || rows[i].cols() != cols) throw ShapeError("stack_rows: rows must be [1, C]");
    y.row(static_cast<Eigen::Index>(i)) = rows[i].value();
  }
  std::vector<Var> inputs(rows.begin(), rows.end());
  return tape->record(std::move(y), rows, [inputs](Tape& t, const Matrix& g) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].requires_grad()) t.accumulate(inputs[i], g.row(static_cast<Eigen::Index>(i)));
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index width) {
  if (start < 0 || width < 0 || start + width > a.cols()) throw ShapeError("slice_cols: out of range");
  return a.tape()->record(a.value().middleCols(start, width), {a},
                          [a, start, width](Tape& t, const Matrix& g) {
                            Matrix d = Matrix::Zero(a.rows(), a.cols());
                            d.middleCols(start, width) = g;
                            t.accumulate(a, d);
                          });
}

Var select_rows_every(Var first, Var second, int gap) {
  require_same_tape(first, second);
  require_same_shape(first.value(), second.value(), "dense_shift");
  if (gap < 1) throw ConfigError("dense_shift: gap must be >= 1");
  Matrix y = second.value();
  for (Eigen::Index i = 0; i < y.rows(); i += gap) y.row(i) = first.value().row(i);
  return first.tape()->record(std::move(y), {first, second},
                              [first, second, gap](Tape& t, const Matrix& g) {
                                Matrix g_first = Matrix::Zero(g.rows(), g.cols());
                                Matrix g_second = g;
                                for (Eigen::Index i = 0; i < g.rows(); i += gap) {
                                  g_first.row(i) = g.row(i);
                                  g_second.row(i).setZero();
                                }
                                t.accumulate(first, g_first);
                                t.accumulate(second, g_second);
                              });
}

Var center_cols(Var a) {
  Matrix y = a.value().rowwise() - a.value().colwise().mean();
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, const Matrix& g) {
    Matrix d = g.rowwise() - g.colwise().mean();
    t.accumulate(a, d);
  });
}

namespace {

// Standardizes columns of x in place, returning 1/sigma per column.
RowVector standardize_in_place(Matrix& x, double eps) {
  const double n = static_cast<double>(x.rows());
  RowVector mu = x.colwise().sum() / n;
  x.rowwise() -= mu;
  RowVector inv_sigma = ((x.array().square().colwise().sum() / n) + eps).sqrt().inverse();
  x.array().rowwise() *= inv_sigma.array();
  return inv_sigma;
}

// Backward of column standardization given the normalized output and 1/sigma.
Matrix standardize_backward(const Matrix& g, const Matrix& xhat, const RowVector& inv_sigma) {
  const double n = static_cast<double>(g.rows());
  RowVector g_mean = g.colwise().sum() / n;
  RowVector gx_mean = g.cwiseProduct(xhat).colwise().sum() / n;
  Matrix d = g;
  d.rowwise() -= g_mean;
  d -= (xhat.array().rowwise() * gx_mean.array()).matrix();
  d.array().rowwise() *= inv_sigma.array();
  return d;
}

}  // namespace

Var standardize_cols(Var a, double eps) {
  Matrix xhat = a.value();
  RowVector inv_sigma = standardize_in_place(xhat, eps);
  Matrix out = xhat;
  return a.tape()->record(std::move(out), {a}, [a, xhat, inv_sigma](Tape& t, const Matrix& g) {
    t.accumulate(a, standardize_backward(g, xhat, inv_sigma));
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  const Eigen::Index c = x.cols();
  if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c) {
    throw ShapeError("layer_norm: gain/bias must be [1, cols]");
  }
  // Row-wise normalization is column standardization of the transpose.
  Matrix xhat_t = x.value().transpose();
  RowVector inv_sigma = standardize_in_place(xhat_t, eps);
  Matrix xhat = xhat_t.transpose();
  Matrix y = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  y.rowwise() += bias.value().row(0);
  return x.tape()->record(std::move(y), {x, gain, bias},
                          [x, gain, bias, xhat, xhat_t, inv_sigma](Tape& t, const Matrix& g) {
                            if (gain.requires_grad()) t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
                            if (bias.requires_grad()) t.accumulate(bias, g.colwise().sum());
                            if (x.requires_grad()) {
                              Matrix gx = (g.array().rowwise() * gain.value().row(0).array()).matrix();
                              Matrix gt = gx.transpose();
                              t.accumulate(x, standardize_backward(gt, xhat_t, inv_sigma).transpose());
                            }
                          });
}

Var depthwise_conv(Var x, Var kernel) {
  require_same_tape(x, kernel);
  const Eigen::Index k = kernel.rows();
  if (k % 2 == 0) throw ConfigError("depthwise_conv: kernel size must be odd");
  if (kernel.cols() != x.cols()) throw ShapeError("depthwise_conv: kernel must be [k, channels]");
  const Eigen::Index r = (k - 1) / 2;
  const Eigen::Index len = x.rows();
  const Matrix& xv = x.value();
  const Matrix& kv = kernel.value();
  Matrix y = Matrix::Zero(len, x.cols());
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Index shift = j - r;
    const Eigen::Index lo = std::max<Eigen::Index>(0, -shift);
    const Eigen::Index hi = std::min<Eigen::Index>(len, len - shift);
    if (hi <= lo) continue;
    y.middleRows(lo, hi - lo).array() +=
        xv.middleRows(lo + shift, hi - lo).array().rowwise() * kv.row(j).array();
  }
  return x.tape()->record(std::move(y), {x, kernel}, [x, kernel, k, r, len](Tape& t, const Matrix& g) {
    const Matrix& xv = x.value();
    const Matrix& kv = kernel.value();
    Matrix gx = Matrix::Zero(xv.rows(), xv.cols());
    Matrix gk = Matrix::Zero(kv.rows(), kv.cols());
    for (Eigen::Index j = 0; j < k; ++j) {
      const Eigen::Index shift = j - r;
      const Eigen::Index lo = std::max<Eigen::Index>(0, -shift);
      const Eigen::Index hi = std::min<Eigen::Index>(len, len - shift);
      if (hi <= lo) continue;
      gx.middleRows(lo + shift, hi - lo).array() +=
          g.middleRows(lo, hi - lo).array().rowwise() * kv.row(j).array();
      gk.row(j) += g.middleRows(lo, hi - lo).cwiseProduct(xv.middleRows(lo + shift, hi - lo)).colwise().sum();
    }
    t.accumulate(x, gx);
    t.accumulate(kernel, gk);
  });
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double m = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Var attention(Var q, Var k, Var v, int heads, std::vector<Matrix>* weights_out) {
  require_same_tape(q, k);
  require_same_tape(q, v);
  require_same_shape(q.value(), k.value(), "attention q/k");
  require_same_shape(q.value(), v.value(), "attention q/v");
  if (heads < 1 || q.cols() % heads != 0) {
    throw ConfigError("attention: channels " + std::to_string(q.cols()) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const Eigen::Index d = q.cols() / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Matrix> probs(static_cast<std::size_t>(heads));
  Matrix out(q.rows(), q.cols());
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.value().middleCols(h * d, d);
    const auto kh = k.value().middleCols(h * d, d);
    const auto vh = v.value().middleCols(h * d, d);
    Matrix& p = probs[static_cast<std::size_t>(h)];
    p = softmax_rows((qh * kh.transpose()) * inv_sqrt_d);
    out.middleCols(h * d, d) = p * vh;
  }
  if (weights_out != nullptr) *weights_out = probs;
  return q.tape()->record(std::move(out), {q, k, v},
                          [q, k, v, heads, d, inv_sqrt_d, probs](Tape& t, const Matrix& g) {
                            Matrix gq = Matrix::Zero(q.rows(), q.cols());
                            Matrix gk = Matrix::Zero(k.rows(), k.cols());
                            Matrix gv = Matrix::Zero(v.rows(), v.cols());
                            for (int h = 0; h < heads; ++h) {
                              const Matrix& p = probs[static_cast<std::size_t>(h)];
                              const auto gh = g.middleCols(h * d, d);
                              const auto qh = q.value().middleCols(h * d, d);
                              const auto kh = k.value().middleCols(h * d, d);
                              const auto vh = v.value().middleCols(h * d, d);
                              gv.middleCols(h * d, d) = p.transpose() * gh;
                              Matrix gp = gh * vh.transpose();
                              Eigen::VectorXd row_dot = gp.cwiseProduct(p).rowwise().sum();
                              Matrix gs = p.cwiseProduct(gp.colwise() - row_dot) * inv_sqrt_d;
                              gq.middleCols(h * d, d) = gs * kh;
                              gk.middleCols(h * d, d) = gs.transpose() * qh;
                            }
                            t.accumulate(q, gq);
                            t.accumulate(k, gk);
                            t.accumulate(v, gv);
                          });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Matrix& z = logits.value();
  if (static_cast<Eigen::Index>(labels.size()) != z.rows()) {
    throw ShapeError("softmax_cross_entropy: one label per row required");
  }
  Matrix p = softmax_rows(z);
  double loss = 0.0;
  std::vector<int> lab(labels.begin(), labels.end());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int c = lab[static_cast<std::size_t>(i)];
    if (c < 0 || c >= z.cols()) throw ArgumentError("softmax_cross_entropy: label out of range");
    loss -= std::log(std::max(p(i, c), 1e-300));
  }
  const double n = static_cast<double>(z.rows());
  return logits.tape()->record(scalar_matrix(loss / n), {logits},
                               [logits, p, lab, n](Tape& t, const Matrix& g) {
                                 Matrix d = p;
                                 for (std::size_t i = 0; i < lab.size(); ++i) {
                                   d(static_cast<Eigen::Index>(i), lab[i]) -= 1.0;
                                 }
                                 t.accumulate(logits, d * (g(0, 0) / n));
                               });
}

}  // namespace usdrl::ad

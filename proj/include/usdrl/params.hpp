#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <random>
#include <string>
#include <vector>

namespace usdrl {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// Index of a tensor inside a ParameterSet. Stable for the lifetime of the set.
struct ParamId {
  std::size_t index = static_cast<std::size_t>(-1);
  bool valid() const { return index != static_cast<std::size_t>(-1); }
};

enum class ParamKind {
  kWeight,  // trainable, subject to weight decay
  kBias,    // trainable, no decay
  kBuffer,  // running statistics; never receives gradients
};

struct Parameter {
  std::string name;
  Matrix value;
  ParamKind kind = ParamKind::kWeight;
  bool frozen = false;

  bool trainable() const { return kind != ParamKind::kBuffer && !frozen; }
};

/// Named tensors in declaration order. Declaration order is the checkpoint order.
class ParameterSet {
 public:
  ParamId add(std::string name, Matrix value, ParamKind kind = ParamKind::kWeight);

  Parameter& operator[](ParamId id) { return params_.at(id.index); }
  const Parameter& operator[](ParamId id) const { return params_.at(id.index); }
  Parameter& at(std::size_t i) { return params_.at(i); }
  const Parameter& at(std::size_t i) const { return params_.at(i); }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  ParamId find(const std::string& name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Rounds every value to the nearest float32. Parameters live on the float32
  /// grid so that checkpoints round-trip exactly.
  void round_to_float();

  bool bitwise_equal(const ParameterSet& other) const;

 private:
  std::vector<Parameter> params_;
};

/// One gradient matrix per parameter, indexed like the owning ParameterSet.
/// Entries for parameters that received no gradient stay empty (0x0).
struct GradientStore {
  std::vector<Matrix> grads;

  explicit GradientStore(std::size_t n = 0) : grads(n) {}
  void accumulate(std::size_t index, const Matrix& g);
  void add(const GradientStore& other);
};

/// Truncated normal at two standard deviations, the usual transformer init.
Matrix truncated_normal(Eigen::Index rows, Eigen::Index cols, double std, std::mt19937_64& rng);

}  // namespace usdrl

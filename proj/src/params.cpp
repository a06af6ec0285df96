#include "usdrl/params.hpp"

#include "usdrl/error.hpp"

#include <cstring>

namespace usdrl {

ParamId ParameterSet::add(std::string name, Matrix value, ParamKind kind) {
  if (find(name).valid()) {
    throw ArgumentError("duplicate parameter name: " + name);
  }
  params_.push_back(Parameter{std::move(name), std::move(value), kind, false});
  return ParamId{params_.size() - 1};
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

ParamId ParameterSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return ParamId{i};
  }
  return ParamId{};
}

void ParameterSet::round_to_float() {
  for (auto& p : params_) {
    p.value = p.value.cast<float>().cast<double>();
  }
}

bool ParameterSet::bitwise_equal(const ParameterSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i].value;
    const auto& b = other.params_[i].value;
    if (params_[i].name != other.params_[i].name) return false;
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (a.size() > 0 &&
        std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) != 0) {
      return false;
    }
  }
  return true;
}

void GradientStore::accumulate(std::size_t index, const Matrix& g) {
  if (index >= grads.size()) grads.resize(index + 1);
  if (grads[index].size() == 0) {
    grads[index] = g;
  } else {
    grads[index] += g;
  }
}

void GradientStore::add(const GradientStore& other) {
  for (std::size_t i = 0; i < other.grads.size(); ++i) {
    if (other.grads[i].size() > 0) accumulate(i, other.grads[i]);
  }
}

Matrix truncated_normal(Eigen::Index rows, Eigen::Index cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      double x = normal(rng);
      while (x < -2.0 || x > 2.0) x = normal(rng);
      m(i, j) = x * std;
    }
  }
  return m;
}

}  // namespace usdrl

#pragma once

// Analytic gradients against central finite differences, in double precision,
// on tiny instances of each differentiable component.

#include "usdrl/params.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace usdrl {

struct TensorCheck {
  std::string name;
  bool expects_gradient = true;  // false for frozen tensors and buffers
  double max_rel_error = 0.0;
  Eigen::Index worst_row = 0, worst_col = 0;
  double analytic = 0.0, numeric = 0.0;
};

struct GradCheckReport {
  std::string component;
  double tolerance = 0.0;
  std::vector<TensorCheck> tensors;

  bool passed() const;
  double max_rel_error() const;
  std::string to_string() const;
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  /// Central differences at step 1e-5 carry about 1e-10 of roundoff, which the
  /// floor keeps from dominating analytically zero gradients.
  double floor = 1e-5;
  std::uint64_t seed = 7;
  /// Tensor names to freeze before checking.
  std::vector<std::string> frozen;
};

/// dsa_hidden, dense_shift, self_attention, ca_forward, layer_forward, projector, total_loss.
const std::vector<std::string>& gradient_check_components();

/// Throws ArgumentError for an unknown component.
GradCheckReport gradient_check(const std::string& component, const GradCheckOptions& options = {});

}  // namespace usdrl

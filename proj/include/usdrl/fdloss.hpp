#pragma once

// Multi-grained feature-decorrelation objective.
//
// For each domain (instance, spatial, temporal) the loss over K views Z_1..Z_K
// of shape [N, D] is
//
//   consistency  = (1/K) sum_a ( kappa * S(z_a, zbar)
//                               + eta * sum_{b != a} sum_j (1 - C_jj(a, b)) )
//   separability = sum_a ( mu * V(Z_a) + AC(Z_a) + lambda * sum_{b > a} XC(Z_a, Z_b) )
//
// with C(a, b) = Zhat_a^T Zhat_b / N on column-standardized views,
// V the variance hinge, AC the off-diagonal auto-covariance energy and XC the
// off-diagonal cross-correlation energy. S is the mean squared error over the
// batch and dimensions, or optionally the batch mean of the unsquared norm
// |z_an - zbar_n|. The total is
// L(instance) + tau * (L(spatial) + L(temporal)).

#include "usdrl/autodiff.hpp"
#include "usdrl/config.hpp"
#include "usdrl/projection.hpp"

#include <array>
#include <iosfwd>
#include <span>
#include <vector>

namespace usdrl {

/// Floor under the square root when standardizing columns.
inline constexpr double kStandardizeEps = 1e-8;

ad::Var standardize_columns(ad::Var z);

struct ConsistencyVars {
  ad::Var similarity;  // kappa-weighted addend
  ad::Var invariance;  // eta-weighted addend
};

enum class Similarity { kMeanSquared, kNorm };

Similarity parse_similarity(const std::string& name);

ConsistencyVars consistency_loss(std::span<const ad::Var> views, double kappa, double eta,
                                 Similarity similarity = Similarity::kMeanSquared);

/// (1/D) sum_j ReLU(gamma - sqrt(Var(Z_:j) + epsilon)), population variance.
ad::Var variance_term(ad::Var z, double gamma, double epsilon);
/// (1/D) sum_{i != j} Cov(Z)_ij^2 with the (N - 1) divisor.
ad::Var autocov_term(ad::Var z);
/// sum_{i != j} Xcorr(Z_a, Z_b)_ij^2, no 1/D prefactor.
ad::Var xcorr_term(ad::Var za, ad::Var zb);

struct SeparabilityVars {
  ad::Var variance;  // mu-weighted, summed over views
  ad::Var autocov;
  ad::Var xcorr;     // lambda-weighted, summed over unordered pairs
};

SeparabilityVars separability_loss(std::span<const ad::Var> views, double mu, double lambda, double gamma,
                                   double epsilon);

struct DomainLossVars {
  ad::Var similarity, invariance, variance, autocov, xcorr;
  ad::Var total;
};

DomainLossVars fd_loss(std::span<const ad::Var> views, const LossConfig& cfg);

struct TotalLossVars {
  DomainLossVars instance, spatial, temporal;
  ad::Var total;
};

TotalLossVars total_loss(std::span<const ad::Var> instance_views, std::span<const ad::Var> spatial_views,
                         std::span<const ad::Var> temporal_views, const LossConfig& cfg);

/// Weighted addends of one domain. total is their sum.
struct DomainLoss {
  double similarity = 0.0;
  double invariance = 0.0;
  double variance = 0.0;
  double autocov = 0.0;
  double xcorr = 0.0;
  double total = 0.0;
};

struct LossBreakdown {
  DomainLoss instance, spatial, temporal;
  double total = 0.0;

  const DomainLoss& operator[](Domain d) const;
};

DomainLoss to_domain_loss(const DomainLossVars& v);
LossBreakdown to_breakdown(const TotalLossVars& v);

// Matrix conveniences that evaluate the same graph without gradients.
Matrix standardize_columns(const Matrix& z);
double variance_term(const Matrix& z, double gamma, double epsilon);
double autocov_term(const Matrix& z);
double xcorr_term(const Matrix& za, const Matrix& zb);
DomainLoss fd_loss(const std::vector<Matrix>& views, const LossConfig& cfg);
LossBreakdown total_loss(const std::vector<Matrix>& instance_views, const std::vector<Matrix>& spatial_views,
                         const std::vector<Matrix>& temporal_views, const LossConfig& cfg);

/// Appends "step=<s> domain=<d> term=<t> value=<v>" lines for every term.
void write_loss_record(std::ostream& out, long step, const LossBreakdown& b);

}  // namespace usdrl

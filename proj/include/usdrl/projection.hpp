#pragma once

#include "usdrl/dste.hpp"

#include <array>
#include <string>

namespace usdrl {

enum class Domain { kInstance, kSpatial, kTemporal };

std::string to_string(Domain d);

enum class NormMode { kTrain, kEval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct BatchNormParams {
  ParamId gain, bias;
  ParamId running_mean, running_var;  // buffers
};

/// linear -> BN -> ReLU -> linear -> BN -> ReLU -> linear. Hidden width equals
/// the output width.
struct ProjectorParams {
  Domain domain = Domain::kInstance;
  int in_dim = 0;
  int out_dim = 0;
  bool normalize = true;
  LinearParams first, second, third;
  BatchNormParams norm1, norm2;
};

struct ProjectorSet {
  ProjectorParams instance, spatial, temporal;

  const ProjectorParams& operator[](Domain d) const;
};

ProjectorParams declare_projector(ParameterSet& params, Domain domain, int in_dim, int out_dim, bool normalize,
                                  double std, std::mt19937_64& rng);
/// Instance: 2 C_r -> 2 C_p; spatial and temporal: C_r -> C_p.
ProjectorSet declare_projectors(ParameterSet& params, const ModelConfig& cfg, std::mt19937_64& rng);

/// Batch statistics of one normalization call, recorded in training mode so the
/// caller can fold them into the running estimates.
struct NormStatistics {
  ParamId running_mean, running_var;
  RowVector batch_mean;
  RowVector batch_var_unbiased;
};

/// Projects a batch [N, in] on a tape. Training mode normalizes with batch
/// statistics (requires N >= 2) and appends them to stats when given.
ad::Var project_batch(ad::Tape& tape, ad::Var x, const ProjectorParams& p, NormMode mode,
                      std::vector<NormStatistics>* stats = nullptr);

/// Folds recorded batch statistics into the running buffers.
void update_running_statistics(ParameterSet& params, const std::vector<NormStatistics>& stats,
                               double momentum = kBatchNormMomentum);

/// An N x D matrix of projections for one view and one domain.
struct ProjectionBatch {
  Matrix z;
  Domain domain = Domain::kInstance;
  int view_index = 0;
};

ProjectionBatch batch_project(const ParameterSet& params, const ProjectorParams& p, const Matrix& x, NormMode mode,
                              int view_index = 0);
/// Single vector in eval mode.
RowVector project(const ParameterSet& params, const ProjectorParams& p, const RowVector& v);

}  // namespace usdrl

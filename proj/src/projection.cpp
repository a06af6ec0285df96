#include "usdrl/projection.hpp"

#include "usdrl/error.hpp"

#include <cmath>

namespace usdrl {

std::string to_string(Domain d) {
  switch (d) {
    case Domain::kInstance: return "instance";
    case Domain::kSpatial: return "spatial";
    case Domain::kTemporal: return "temporal";
  }
  return "instance";
}

const ProjectorParams& ProjectorSet::operator[](Domain d) const {
  switch (d) {
    case Domain::kInstance: return instance;
    case Domain::kSpatial: return spatial;
    case Domain::kTemporal: return temporal;
  }
  return instance;
}

namespace {

BatchNormParams declare_batch_norm(ParameterSet& params, const std::string& name, int dim) {
  BatchNormParams p;
  p.gain = params.add(name + ".gain", Matrix::Ones(1, dim), ParamKind::kBias);
  p.bias = params.add(name + ".bias", Matrix::Zero(1, dim), ParamKind::kBias);
  p.running_mean = params.add(name + ".running_mean", Matrix::Zero(1, dim), ParamKind::kBuffer);
  p.running_var = params.add(name + ".running_var", Matrix::Ones(1, dim), ParamKind::kBuffer);
  return p;
}

ad::Var batch_norm(ad::Tape& tape, ad::Var x, const BatchNormParams& p, NormMode mode,
                   std::vector<NormStatistics>* stats) {
  ad::Var normalized;
  if (mode == NormMode::kTrain) {
    if (x.rows() < 2) throw BatchSizeError("batch normalization needs at least 2 rows in training mode");
    normalized = ad::standardize_cols(x, kBatchNormEps);
    if (stats != nullptr) {
      const Matrix& v = x.value();
      const double n = static_cast<double>(v.rows());
      RowVector mu = v.colwise().mean();
      RowVector var = (v.rowwise() - mu).array().square().colwise().sum() / (n - 1.0);
      stats->push_back({p.running_mean, p.running_var, mu, var});
    }
  } else {
    const Matrix& mean = tape.params()[p.running_mean].value;
    const Matrix& var = tape.params()[p.running_var].value;
    Matrix inv_std = (var.array() + kBatchNormEps).sqrt().inverse().matrix();
    normalized = ad::scale_cols(ad::add_row(x, tape.constant(-mean)), tape.constant(inv_std));
  }
  return ad::add_row(ad::scale_cols(normalized, tape.parameter(p.gain)), tape.parameter(p.bias));
}

}  // namespace

ProjectorParams declare_projector(ParameterSet& params, Domain domain, int in_dim, int out_dim, bool normalize,
                                  double std, std::mt19937_64& rng) {
  const std::string name = "projector." + to_string(domain);
  ProjectorParams p;
  p.domain = domain;
  p.in_dim = in_dim;
  p.out_dim = out_dim;
  p.normalize = normalize;
  // std <= 0 selects He scaling, sqrt(2 / fan_in), per layer.
  auto scale = [std](int fan_in) { return std > 0.0 ? std : std::sqrt(2.0 / fan_in); };
  p.first = declare_linear(params, name + ".first", in_dim, out_dim, scale(in_dim), rng);
  p.norm1 = declare_batch_norm(params, name + ".norm1", out_dim);
  p.second = declare_linear(params, name + ".second", out_dim, out_dim, scale(out_dim), rng);
  p.norm2 = declare_batch_norm(params, name + ".norm2", out_dim);
  p.third = declare_linear(params, name + ".third", out_dim, out_dim, scale(out_dim), rng);
  return p;
}

ProjectorSet declare_projectors(ParameterSet& params, const ModelConfig& cfg, std::mt19937_64& rng) {
  ProjectorSet s;
  s.instance = declare_projector(params, Domain::kInstance, 2 * cfg.repr_dim, 2 * cfg.proj_dim, cfg.projector_norm,
                                 cfg.projector_init_std, rng);
  s.spatial = declare_projector(params, Domain::kSpatial, cfg.repr_dim, cfg.proj_dim, cfg.projector_norm,
                                cfg.projector_init_std, rng);
  s.temporal = declare_projector(params, Domain::kTemporal, cfg.repr_dim, cfg.proj_dim, cfg.projector_norm,
                                 cfg.projector_init_std, rng);
  return s;
}

ad::Var project_batch(ad::Tape& tape, ad::Var x, const ProjectorParams& p, NormMode mode,
                      std::vector<NormStatistics>* stats) {
  if (x.cols() != p.in_dim) {
    throw ShapeError("projector " + to_string(p.domain) + ": expected input dim " + std::to_string(p.in_dim) +
                     ", got " + std::to_string(x.cols()));
  }
  if (mode == NormMode::kTrain && x.rows() < 2) throw BatchSizeError("training-mode projection needs N >= 2");
  ad::Var h = linear(tape, x, p.first);
  if (p.normalize) h = batch_norm(tape, h, p.norm1, mode, stats);
  h = linear(tape, ad::relu(h), p.second);
  if (p.normalize) h = batch_norm(tape, h, p.norm2, mode, stats);
  return linear(tape, ad::relu(h), p.third);
}

void update_running_statistics(ParameterSet& params, const std::vector<NormStatistics>& stats, double momentum) {
  for (const auto& s : stats) {
    Matrix& mean = params[s.running_mean].value;
    Matrix& var = params[s.running_var].value;
    mean = (1.0 - momentum) * mean + momentum * Matrix(s.batch_mean);
    var = (1.0 - momentum) * var + momentum * Matrix(s.batch_var_unbiased);
  }
}

ProjectionBatch batch_project(const ParameterSet& params, const ProjectorParams& p, const Matrix& x, NormMode mode,
                              int view_index) {
  ad::Tape tape(params);
  ad::Var out = project_batch(tape, tape.constant(x), p, mode);
  return ProjectionBatch{out.value(), p.domain, view_index};
}

RowVector project(const ParameterSet& params, const ProjectorParams& p, const RowVector& v) {
  return batch_project(params, p, Matrix(v), NormMode::kEval).z.row(0);
}

}  // namespace usdrl

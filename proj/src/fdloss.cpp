#include "usdrl/fdloss.hpp"

#include "usdrl/error.hpp"

#include <cstdio>
#include <ostream>

namespace usdrl {

namespace {

void require_views(std::span<const ad::Var> views) {
  if (views.size() < 2) throw ArgumentError("decorrelation loss needs at least two views");
  const auto rows = views.front().rows();
  const auto cols = views.front().cols();
  for (const auto& v : views) {
    if (v.rows() != rows || v.cols() != cols) throw ShapeError("all views must share one [N, D] shape");
  }
  if (rows < 2) throw BatchSizeError("decorrelation loss needs N >= 2");
}

ad::Var zero_like(ad::Var anchor) { return anchor.tape()->constant(Matrix::Zero(1, 1)); }

ad::Var accumulate_sum(ad::Var acc, ad::Var term) { return acc.valid() ? ad::add(acc, term) : term; }

}  // namespace

ad::Var standardize_columns(ad::Var z) {
  if (z.rows() < 2) throw BatchSizeError("standardize_columns needs N >= 2");
  return ad::standardize_cols(z, kStandardizeEps);
}

Similarity parse_similarity(const std::string& name) {
  if (name == "mse") return Similarity::kMeanSquared;
  if (name == "l2") return Similarity::kNorm;
  throw ConfigError("unknown similarity '" + name + "'");
}

ConsistencyVars consistency_loss(std::span<const ad::Var> views, double kappa, double eta, Similarity similarity) {
  require_views(views);
  const double k = static_cast<double>(views.size());
  const double n = static_cast<double>(views.front().rows());
  const double d = static_cast<double>(views.front().cols());
  ConsistencyVars out;

  if (kappa != 0.0) {
    ad::Var centre = views.front();
    for (std::size_t a = 1; a < views.size(); ++a) centre = ad::add(centre, views[a]);
    centre = ad::scale(centre, 1.0 / k);
    ad::Var acc;
    for (const auto& za : views) {
      ad::Var diff = ad::sub(za, centre);
      ad::Var term = similarity == Similarity::kMeanSquared ? ad::mean(ad::mul(diff, diff)) : ad::mean(ad::row_norms(diff));
      acc = accumulate_sum(acc, term);
    }
    out.similarity = ad::scale(acc, kappa / k);
  } else {
    out.similarity = zero_like(views.front());
  }

  if (eta != 0.0) {
    std::vector<ad::Var> hat;
    for (const auto& za : views) hat.push_back(standardize_columns(za));
    ad::Var acc;
    for (std::size_t a = 0; a < hat.size(); ++a) {
      for (std::size_t b = 0; b < hat.size(); ++b) {
        if (a == b) continue;
        ad::Var corr = ad::scale(ad::matmul(ad::transpose(hat[a]), hat[b]), 1.0 / n);
        acc = accumulate_sum(acc, ad::add_scalar(ad::scale(ad::trace(corr), -1.0), d));
      }
    }
    out.invariance = ad::scale(acc, eta / k);
  } else {
    out.invariance = zero_like(views.front());
  }
  return out;
}

ad::Var variance_term(ad::Var z, double gamma, double epsilon) {
  if (z.rows() < 2) throw BatchSizeError("variance_term needs N >= 2");
  ad::Var c = ad::center_cols(z);
  ad::Var var = ad::col_mean(ad::mul(c, c));
  ad::Var std = ad::sqrt(ad::add_scalar(var, epsilon));
  return ad::mean(ad::relu(ad::add_scalar(ad::scale(std, -1.0), gamma)));
}

ad::Var autocov_term(ad::Var z) {
  if (z.rows() < 2) throw BatchSizeError("autocov_term needs N >= 2");
  const double n = static_cast<double>(z.rows());
  const double d = static_cast<double>(z.cols());
  ad::Var c = ad::center_cols(z);
  ad::Var cov = ad::scale(ad::matmul(ad::transpose(c), c), 1.0 / (n - 1.0));
  return ad::scale(ad::offdiag_sumsq(cov), 1.0 / d);
}

ad::Var xcorr_term(ad::Var za, ad::Var zb) {
  if (za.rows() != zb.rows() || za.cols() != zb.cols()) throw ShapeError("xcorr_term: views differ in shape");
  const double n = static_cast<double>(za.rows());
  ad::Var corr = ad::scale(ad::matmul(ad::transpose(standardize_columns(za)), standardize_columns(zb)), 1.0 / n);
  return ad::offdiag_sumsq(corr);
}

SeparabilityVars separability_loss(std::span<const ad::Var> views, double mu, double lambda, double gamma,
                                   double epsilon) {
  require_views(views);
  SeparabilityVars out;
  ad::Var var_acc, cov_acc, xc_acc;
  for (std::size_t a = 0; a < views.size(); ++a) {
    if (mu != 0.0) var_acc = accumulate_sum(var_acc, variance_term(views[a], gamma, epsilon));
    cov_acc = accumulate_sum(cov_acc, autocov_term(views[a]));
    if (lambda != 0.0) {
      for (std::size_t b = a + 1; b < views.size(); ++b) {
        xc_acc = accumulate_sum(xc_acc, xcorr_term(views[a], views[b]));
      }
    }
  }
  out.variance = var_acc.valid() ? ad::scale(var_acc, mu) : zero_like(views.front());
  out.autocov = cov_acc;
  out.xcorr = xc_acc.valid() ? ad::scale(xc_acc, lambda) : zero_like(views.front());
  return out;
}

DomainLossVars fd_loss(std::span<const ad::Var> views, const LossConfig& cfg) {
  auto con = consistency_loss(views, cfg.kappa, cfg.eta, parse_similarity(cfg.similarity));
  auto sep = separability_loss(views, cfg.mu, cfg.lambda, cfg.gamma, cfg.epsilon);
  DomainLossVars v{con.similarity, con.invariance, sep.variance, sep.autocov, sep.xcorr, {}};
  v.total = ad::add(ad::add(ad::add(v.similarity, v.invariance), ad::add(v.variance, v.autocov)), v.xcorr);
  return v;
}

TotalLossVars total_loss(std::span<const ad::Var> instance_views, std::span<const ad::Var> spatial_views,
                         std::span<const ad::Var> temporal_views, const LossConfig& cfg) {
  if (instance_views.size() != spatial_views.size() || instance_views.size() != temporal_views.size()) {
    throw ArgumentError("total_loss: every domain needs the same number of views");
  }
  if (instance_views.empty() || spatial_views.front().rows() != instance_views.front().rows() ||
      temporal_views.front().rows() != instance_views.front().rows()) {
    throw ShapeError("total_loss: domains disagree on the batch size");
  }
  TotalLossVars t;
  t.instance = fd_loss(instance_views, cfg);
  t.spatial = fd_loss(spatial_views, cfg);
  t.temporal = fd_loss(temporal_views, cfg);
  t.total = ad::add(t.instance.total, ad::scale(ad::add(t.spatial.total, t.temporal.total), cfg.tau));
  return t;
}

const DomainLoss& LossBreakdown::operator[](Domain d) const {
  switch (d) {
    case Domain::kInstance: return instance;
    case Domain::kSpatial: return spatial;
    case Domain::kTemporal: return temporal;
  }
  return instance;
}

DomainLoss to_domain_loss(const DomainLossVars& v) {
  return {v.similarity.scalar(), v.invariance.scalar(), v.variance.scalar(),
          v.autocov.scalar(),    v.xcorr.scalar(),      v.total.scalar()};
}

LossBreakdown to_breakdown(const TotalLossVars& v) {
  return {to_domain_loss(v.instance), to_domain_loss(v.spatial), to_domain_loss(v.temporal), v.total.scalar()};
}

Matrix standardize_columns(const Matrix& z) {
  ad::Tape tape;
  return standardize_columns(tape.constant(z)).value();
}

double variance_term(const Matrix& z, double gamma, double epsilon) {
  ad::Tape tape;
  return variance_term(tape.constant(z), gamma, epsilon).scalar();
}

double autocov_term(const Matrix& z) {
  ad::Tape tape;
  return autocov_term(tape.constant(z)).scalar();
}

double xcorr_term(const Matrix& za, const Matrix& zb) {
  ad::Tape tape;
  return xcorr_term(tape.constant(za), tape.constant(zb)).scalar();
}

namespace {

std::vector<ad::Var> constants(ad::Tape& tape, const std::vector<Matrix>& views) {
  std::vector<ad::Var> out;
  for (const auto& v : views) out.push_back(tape.constant(v));
  return out;
}

}  // namespace

DomainLoss fd_loss(const std::vector<Matrix>& views, const LossConfig& cfg) {
  ad::Tape tape;
  return to_domain_loss(fd_loss(constants(tape, views), cfg));
}

LossBreakdown total_loss(const std::vector<Matrix>& instance_views, const std::vector<Matrix>& spatial_views,
                         const std::vector<Matrix>& temporal_views, const LossConfig& cfg) {
  ad::Tape tape;
  auto i = constants(tape, instance_views);
  auto s = constants(tape, spatial_views);
  auto t = constants(tape, temporal_views);
  return to_breakdown(total_loss(i, s, t, cfg));
}

void write_loss_record(std::ostream& out, long step, const LossBreakdown& b) {
  char buf[160];
  auto line = [&](const char* domain, const char* term, double value) {
    std::snprintf(buf, sizeof buf, "step=%ld domain=%s term=%s value=%.10g\n", step, domain, term, value);
    out << buf;
  };
  for (Domain d : {Domain::kInstance, Domain::kSpatial, Domain::kTemporal}) {
    const DomainLoss& l = b[d];
    const std::string name = to_string(d);
    line(name.c_str(), "similarity", l.similarity);
    line(name.c_str(), "invariance", l.invariance);
    line(name.c_str(), "variance", l.variance);
    line(name.c_str(), "autocov", l.autocov);
    line(name.c_str(), "xcorr", l.xcorr);
    line(name.c_str(), "total", l.total);
  }
  line("all", "total", b.total);
}

}  // namespace usdrl

#include "usdrl/gradcheck.hpp"

#include "usdrl/autodiff.hpp"
#include "usdrl/dste.hpp"
#include "usdrl/error.hpp"
#include "usdrl/fdloss.hpp"
#include "usdrl/projection.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

namespace usdrl {

bool GradCheckReport::passed() const { return max_rel_error() < tolerance; }

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& t : tensors) {
    if (t.expects_gradient) m = std::max(m, t.max_rel_error);
  }
  return m;
}

std::string GradCheckReport::to_string() const {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s: %s (max rel. error %.3e, tolerance %.1e)\n", component.c_str(),
                passed() ? "PASS" : "FAIL", max_rel_error(), tolerance);
  out << buf;
  for (const auto& t : tensors) {
    if (!t.expects_gradient) {
      out << "  " << t.name << ": no gradient expected\n";
      continue;
    }
    std::snprintf(buf, sizeof buf, "  %s: max rel. error %.3e at [%ld,%ld] (analytic %.8e, numeric %.8e)%s\n",
                  t.name.c_str(), t.max_rel_error, static_cast<long>(t.worst_row), static_cast<long>(t.worst_col),
                  t.analytic, t.numeric, t.max_rel_error < tolerance ? "" : " FAIL");
    out << buf;
  }
  return out.str();
}

namespace {

using Forward = std::function<ad::Var(ad::Tape&)>;

struct Problem {
  ParameterSet params;
  Forward forward;
  std::string skip_prefix;  // declared alongside but outside the component
};

constexpr double kInitStd = 0.5;

Matrix gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Moves every trainable tensor off its structured initial value (unit gains,
// zero biases) so no check sits on a symmetric point.
void jitter(ParameterSet& params, std::mt19937_64& rng) {
  for (auto& p : params) {
    if (p.kind != ParamKind::kBuffer) p.value += 0.1 * gaussian(p.value.rows(), p.value.cols(), rng);
  }
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.num_heads = 2;
  cfg.conv_kernel = 3;
  cfg.gap = 2;
  cfg.alpha = 0.5;
  cfg.beta = 0.5;
  return cfg;
}

Problem make_problem(const std::string& component, std::mt19937_64& rng) {
  Problem pr;
  auto& ps = pr.params;
  if (component == "dsa_hidden") {
    // L = 3 tokens, C_e = 2 channels.
    const ParamId f = ps.add("input.f", gaussian(3, 2, rng));
    const ParamId w1 = ps.add("dsa.w1", gaussian(3, 3, rng));
    const ParamId w2 = ps.add("dsa.w2", gaussian(3, 3, rng));
    pr.forward = [=](ad::Tape& t) { return dsa_hidden(t.parameter(f), t.parameter(w1), t.parameter(w2)); };
  } else if (component == "dense_shift") {
    const ParamId h = ps.add("input.f_hidden", gaussian(5, 3, rng));
    const ParamId f = ps.add("input.f", gaussian(5, 3, rng));
    pr.forward = [=](ad::Tape& t) { return dense_shift(t.parameter(h), t.parameter(f), 2); };
  } else if (component == "self_attention") {
    const ParamId f = ps.add("input.f", gaussian(4, 4, rng));
    const AttentionParams a = declare_attention(ps, "attn", 4, kInitStd, rng);
    pr.forward = [=](ad::Tape& t) { return self_attention(t, t.parameter(f), a, 2); };
  } else if (component == "ca_forward") {
    ModelConfig cfg = tiny_config();
    cfg.init_std = kInitStd;
    const ParamId f = ps.add("input.f", gaussian(5, 4, rng));
    const EncoderLayerParams layer = declare_encoder_layer(ps, "layer", 5, 4, 4, cfg, rng);
    pr.forward = [=](ad::Tape& t) { return ca_forward(t, t.parameter(f), layer.ca, cfg); };
    pr.skip_prefix = "layer.dsa.";
  } else if (component == "layer_forward") {
    ModelConfig cfg = tiny_config();
    cfg.init_std = kInitStd;
    const ParamId f = ps.add("input.f", gaussian(4, 4, rng));
    // in != out exercises the residual projection.
    const EncoderLayerParams layer = declare_encoder_layer(ps, "layer", 4, 4, 6, cfg, rng);
    pr.forward = [=](ad::Tape& t) { return layer_forward(t, t.parameter(f), layer, cfg); };
  } else if (component == "projector") {
    const ParamId x = ps.add("input.x", gaussian(6, 3, rng));
    const ProjectorParams p = declare_projector(ps, Domain::kInstance, 3, 5, true, kInitStd, rng);
    pr.forward = [=](ad::Tape& t) { return project_batch(t, t.parameter(x), p, NormMode::kTrain); };
  } else if (component == "total_loss") {
    std::vector<ParamId> ids;
    for (const char* d : {"instance", "spatial", "temporal"}) {
      for (int v = 0; v < 2; ++v) ids.push_back(ps.add(std::string(d) + ".view" + std::to_string(v), gaussian(8, 6, rng)));
    }
    pr.forward = [=](ad::Tape& t) {
      std::vector<ad::Var> v;
      for (ParamId id : ids) v.push_back(t.parameter(id));
      const std::vector<ad::Var> inst{v[0], v[1]}, spat{v[2], v[3]}, temp{v[4], v[5]};
      return total_loss(inst, spat, temp, LossConfig{}).total;
    };
  } else {
    throw ArgumentError("unknown gradient-check component '" + component + "'");
  }
  if (component != "dsa_hidden" && component != "dense_shift" && component != "total_loss") jitter(ps, rng);
  return pr;
}

// Scalarizes the output with a fixed random weighting. A plain sum would
// vanish identically behind a layer norm.
double evaluate(const Problem& pr, const Matrix& weights, GradientStore* grads) {
  ad::Tape tape(pr.params);
  ad::Var out = pr.forward(tape);
  ad::Var s = out.rows() == 1 && out.cols() == 1 ? out : ad::sum(ad::mul(out, tape.constant(weights)));
  if (grads != nullptr) {
    tape.backward(s);
    tape.collect(*grads);
  }
  return s.scalar();
}

}  // namespace

const std::vector<std::string>& gradient_check_components() {
  static const std::vector<std::string> names{"dsa_hidden",    "dense_shift", "self_attention", "ca_forward",
                                              "layer_forward", "projector",   "total_loss"};
  return names;
}

GradCheckReport gradient_check(const std::string& component, const GradCheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  Problem pr = make_problem(component, rng);
  for (const auto& name : options.frozen) {
    const ParamId id = pr.params.find(name);
    if (!id.valid()) throw ArgumentError("gradient check: no tensor named '" + name + "' in " + component);
    pr.params[id].frozen = true;
  }

  Matrix weights;
  {
    ad::Tape probe(pr.params);
    const ad::Var out = pr.forward(probe);
    weights = gaussian(out.rows(), out.cols(), rng);
  }
  GradientStore analytic(pr.params.size());
  evaluate(pr, weights, &analytic);

  GradCheckReport report;
  report.component = component;
  report.tolerance = options.tolerance;
  for (std::size_t i = 0; i < pr.params.size(); ++i) {
    Parameter& p = pr.params.at(i);
    if (!pr.skip_prefix.empty() && p.name.rfind(pr.skip_prefix, 0) == 0) continue;
    TensorCheck check;
    check.name = p.name;
    check.expects_gradient = p.trainable();
    if (!check.expects_gradient) {
      report.tensors.push_back(check);
      continue;
    }
    const Matrix a = analytic.grads[i].size() == 0 ? Matrix(Matrix::Zero(p.value.rows(), p.value.cols()))
                                                   : analytic.grads[i];
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        const double x0 = p.value(r, c);
        p.value(r, c) = x0 + options.step;
        const double up = evaluate(pr, weights, nullptr);
        p.value(r, c) = x0 - options.step;
        const double down = evaluate(pr, weights, nullptr);
        p.value(r, c) = x0;
        const double n = (up - down) / (2.0 * options.step);
        const double err = std::abs(a(r, c) - n) / std::max({std::abs(a(r, c)), std::abs(n), options.floor});
        if (err >= check.max_rel_error) {
          check.max_rel_error = err;
          check.worst_row = r;
          check.worst_col = c;
          check.analytic = a(r, c);
          check.numeric = n;
        }
      }
    }
    report.tensors.push_back(check);
  }
  return report;
}

}  // namespace usdrl

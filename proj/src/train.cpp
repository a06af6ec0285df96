#include "usdrl/train.hpp"

#include "usdrl/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>

namespace usdrl {

double scheduled_lr(const TrainConfig& cfg, long step, long total_steps) {
  if (cfg.schedule == "constant" || total_steps <= 1) return cfg.lr;
  const double progress = static_cast<double>(std::clamp(step - 1, 0L, total_steps)) / static_cast<double>(total_steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(ParameterSet& params, const GradientStore& grads, TrainState& state, double lr,
                double weight_decay) {
  if (grads.grads.size() != params.size()) throw ArgumentError("gradient store does not match the parameter set");
  state.adam_m.resize(params.size());
  state.adam_v.resize(params.size());
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params.at(i);
    const Matrix& g = grads.grads[i];
    if (!p.trainable() || g.size() == 0) continue;
    Matrix& m = state.adam_m[i];
    Matrix& v = state.adam_v[i];
    if (m.size() == 0) {
      m = Matrix::Zero(g.rows(), g.cols());
      v = Matrix::Zero(g.rows(), g.cols());
    }
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
    v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g.cwiseProduct(g);
    Matrix update = (m / c1).array() / ((v / c2).array().sqrt() + kAdamEps);
    if (p.kind == ParamKind::kWeight) update += weight_decay * p.value;
    p.value -= lr * update;
  }
}

namespace {

struct SampleTape {
  std::unique_ptr<ad::Tape> tape;
  SampleForward forward;
};

Matrix stack(const std::vector<SampleTape>& samples, std::size_t first, std::size_t count, bool temporal) {
  const auto& probe = temporal ? samples[first].forward.condensed.temporal : samples[first].forward.condensed.spatial;
  Matrix out(static_cast<Eigen::Index>(count), probe.cols());
  for (std::size_t n = 0; n < count; ++n) {
    const auto& c = samples[first + n].forward.condensed;
    out.row(static_cast<Eigen::Index>(n)) = (temporal ? c.temporal : c.spatial).value();
  }
  return out;
}

void require_views(const std::vector<std::vector<SkeletonSequence>>& views) {
  if (views.size() < 2) throw ArgumentError("training step needs at least two views");
  for (const auto& v : views) {
    if (v.size() != views.front().size()) throw ShapeError("every view batch must hold the same slots");
  }
  if (views.front().size() < 2) throw BatchSizeError("training step needs N >= 2");
}

std::string describe(const Matrix& z) {
  const RowVector mean = z.colwise().mean();
  const RowVector sd = ((z.rowwise() - mean).array().square().colwise().mean()).sqrt();
  char buf[200];
  std::snprintf(buf, sizeof buf, "mean in [%.4g, %.4g], std in [%.4g, %.4g], max |z| %.4g", mean.minCoeff(),
                mean.maxCoeff(), sd.minCoeff(), sd.maxCoeff(), z.cwiseAbs().maxCoeff());
  return buf;
}

// Runs the batch part: projectors and loss. Returns the loss breakdown and,
// when backprop is requested, fills the condensed-vector gradients.
struct BatchPass {
  LossBreakdown loss;
  std::vector<Matrix> grad_t, grad_s;  // per view, [N, C_r]
  std::array<std::vector<Matrix>, 3> projections;
};

BatchPass batch_pass(const Model& model, const std::vector<SampleTape>& samples, std::size_t k, std::size_t n,
                     GradientStore* grads, std::vector<NormStatistics>* stats, const std::vector<std::string>& ids) {
  ad::Tape tape(model.params);
  std::vector<ad::Var> t_in, s_in, zi, zs, zt;
  for (std::size_t a = 0; a < k; ++a) {
    ad::Var tv = tape.variable(stack(samples, a * n, n, true));
    ad::Var sv = tape.variable(stack(samples, a * n, n, false));
    t_in.push_back(tv);
    s_in.push_back(sv);
    const ad::Var parts[2] = {tv, sv};
    zi.push_back(project_batch(tape, ad::concat_cols(parts), model.projectors.instance, NormMode::kTrain, stats));
    zs.push_back(project_batch(tape, sv, model.projectors.spatial, NormMode::kTrain, stats));
    zt.push_back(project_batch(tape, tv, model.projectors.temporal, NormMode::kTrain, stats));
  }
  BatchPass out;
  for (std::size_t a = 0; a < k; ++a) {
    out.projections[0].push_back(zi[a].value());
    out.projections[1].push_back(zs[a].value());
    out.projections[2].push_back(zt[a].value());
  }
  TotalLossVars total = total_loss(zi, zs, zt, model.config.loss);
  out.loss = to_breakdown(total);
  if (!std::isfinite(out.loss.total)) {
    std::ostringstream msg;
    msg << "non-finite loss (" << out.loss.total << ") on batch";
    for (const auto& id : ids) msg << ' ' << id;
    msg << '\n';
    const char* names[3] = {"instance", "spatial", "temporal"};
    for (int d = 0; d < 3; ++d) {
      for (std::size_t a = 0; a < k; ++a) {
        msg << "  " << names[d] << " view " << a << ": " << describe(out.projections[static_cast<std::size_t>(d)][a])
            << '\n';
      }
    }
    for (std::size_t a = 0; a < k; ++a) {
      msg << "  condensed temporal view " << a << ": " << describe(t_in[a].value()) << '\n';
      msg << "  condensed spatial view " << a << ": " << describe(s_in[a].value()) << '\n';
    }
    throw NumericalError(msg.str());
  }
  if (grads != nullptr) {
    tape.backward(total.total);
    tape.collect(*grads);
    for (std::size_t a = 0; a < k; ++a) {
      auto grad_or_zero = [](const ad::Var& v) {
        return v.grad().size() == 0 ? Matrix(Matrix::Zero(v.rows(), v.cols())) : v.grad();
      };
      out.grad_t.push_back(grad_or_zero(t_in[a]));
      out.grad_s.push_back(grad_or_zero(s_in[a]));
    }
  }
  return out;
}

std::vector<SampleTape> forward_all(const Model& model, const std::vector<std::vector<SkeletonSequence>>& views,
                                    int threads) {
  const std::size_t k = views.size();
  const std::size_t n = views.front().size();
  std::vector<SampleTape> samples(k * n);
  parallel_for(k * n, threads, [&](std::size_t s) {
    samples[s].tape = std::make_unique<ad::Tape>(model.params);
    samples[s].forward = forward_sample(*samples[s].tape, model, views[s / n][s % n]);
  });
  return samples;
}

std::vector<std::string> slot_ids(const std::vector<std::vector<SkeletonSequence>>& views) {
  std::vector<std::string> ids;
  for (const auto& s : views.front()) ids.push_back(s.source_id);
  return ids;
}

}  // namespace

StepOutput training_step(const Model& model, const std::vector<std::vector<SkeletonSequence>>& views, int threads) {
  require_views(views);
  const std::size_t k = views.size();
  const std::size_t n = views.front().size();
  auto samples = forward_all(model, views, threads);

  StepOutput out;
  out.grads = GradientStore(model.params.size());
  BatchPass pass = batch_pass(model, samples, k, n, &out.grads, &out.norm_stats, slot_ids(views));
  out.loss = pass.loss;
  out.projections = std::move(pass.projections);

  std::vector<GradientStore> per_sample(k * n, GradientStore(model.params.size()));
  parallel_for(k * n, threads, [&](std::size_t s) {
    const auto row = static_cast<Eigen::Index>(s % n);
    const auto& c = samples[s].forward.condensed;
    const std::pair<ad::Var, Matrix> seeds[2] = {{c.temporal, pass.grad_t[s / n].row(row)},
                                                 {c.spatial, pass.grad_s[s / n].row(row)}};
    samples[s].tape->backward(seeds);
    samples[s].tape->collect(per_sample[s]);
    samples[s].tape.reset();
  });
  for (const auto& g : per_sample) out.grads.add(g);
  return out;
}

LossBreakdown evaluate_loss(const Model& model, const std::vector<std::vector<SkeletonSequence>>& views,
                            int threads) {
  require_views(views);
  auto samples = forward_all(model, views, threads);
  return batch_pass(model, samples, views.size(), views.front().size(), nullptr, nullptr, slot_ids(views)).loss;
}

long steps_per_epoch(std::size_t dataset_size, int batch_size) {
  if (batch_size < 1) throw ArgumentError("batch size must be positive");
  return static_cast<long>((dataset_size + static_cast<std::size_t>(batch_size) - 1) /
                           static_cast<std::size_t>(batch_size));
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t dataset_size, int batch_size, std::mt19937_64& rng) {
  if (dataset_size == 0) throw ArgumentError("dataset is empty");
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  const auto n = static_cast<std::size_t>(batch_size);
  for (std::size_t lo = 0; lo < dataset_size; lo += n) {
    std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(lo),
                               order.begin() + static_cast<std::ptrdiff_t>(std::min(dataset_size, lo + n)));
    if (b.size() == 1) b.push_back(order.front() == b.front() && dataset_size > 1 ? order[1] : order.front());
    batches.push_back(std::move(b));
  }
  return batches;
}

namespace {

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& text) {
  std::istringstream s(text);
  s >> rng;
  if (!s) throw FormatError("corrupt rng state in checkpoint");
}

std::string step_name(long step) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "checkpoint_step%06ld.bin", step);
  return buf;
}

}  // namespace

PretrainResult pretrain(const std::vector<SkeletonSequence>& dataset, const ExperimentConfig& config,
                        const PretrainOptions& options) {
  if (dataset.empty()) throw ArgumentError("pretrain: dataset is empty");
  config.validate();
  if (config.train.batch_size < 2) throw BatchSizeError("pretrain: batch size must be >= 2");

  PretrainResult result;
  std::mt19937_64 rng(config.train.seed);
  if (options.resume) {
    result.model = load_model(*options.resume, &result.state);
    result.model.config.train = config.train;
    if (!result.state.rng_state.empty()) rng_from_string(rng, result.state.rng_state);
  } else {
    result.model = build_model(config);
  }
  Model& model = result.model;
  TrainState& state = result.state;
  const auto data = to_model_modality(dataset, config);
  const TrainConfig& tc = config.train;
  const long per_epoch = steps_per_epoch(data.size(), tc.batch_size);
  const long total = tc.max_steps > 0 ? tc.max_steps : per_epoch * tc.epochs;

  std::ofstream log;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    std::ofstream(*options.out_dir / "config.json") << to_json(config).dump(2) << '\n';
    log.open(*options.out_dir / "metrics.log", state.step > 0 ? std::ios::app : std::ios::trunc);
  }

  const auto k = static_cast<std::size_t>(config.loss.views);
  std::string resume_rng = rng_to_string(rng);
  while (state.step < total) {
    // The permutation and per-slot seeds are drawn up front. Checkpoints taken
    // mid-epoch store the generator as it was before these draws, so a resumed
    // run replays the same epoch.
    const std::string epoch_rng = rng_to_string(rng);
    const auto batches = epoch_batches(data.size(), tc.batch_size, rng);
    std::vector<std::vector<std::uint64_t>> seeds;
    for (const auto& b : batches) {
      std::vector<std::uint64_t> s(b.size());
      for (auto& x : s) x = rng();
      seeds.push_back(std::move(s));
    }
    const long epoch_start = (state.step / per_epoch) * per_epoch;
    for (std::size_t bi = static_cast<std::size_t>(state.step - epoch_start); bi < batches.size() && state.step < total;
         ++bi) {
      resume_rng = bi + 1 == batches.size() ? std::string{} : epoch_rng;
      const auto& batch = batches[bi];
      std::vector<std::vector<SkeletonSequence>> views(k, std::vector<SkeletonSequence>(batch.size()));
      parallel_for(batch.size(), tc.threads, [&](std::size_t slot) {
        std::mt19937_64 slot_rng(seeds[bi][slot]);
        auto vs = make_views(data[batch[slot]], config.loss.views, config.augment, slot_rng);
        for (std::size_t a = 0; a < k; ++a) views[a][slot] = std::move(vs[a]);
      });
      StepOutput step = training_step(model, views, tc.threads);
      const double lr = scheduled_lr(tc, state.step + 1, total);
      adamw_step(model.params, step.grads, state, lr, tc.weight_decay);
      update_running_statistics(model.params, step.norm_stats);
      model.params.round_to_float();

      if (!state.has_best || step.loss.total < state.best_loss) {
        state.best_loss = step.loss.total;
        state.has_best = true;
      }
      if (log.is_open()) write_loss_record(log, state.step, step.loss);
      if (options.metrics != nullptr) write_loss_record(*options.metrics, state.step, step.loss);
      result.history.push_back(step.loss);
      if (options.on_step) options.on_step(state.step, step.loss, model);
      if (options.out_dir && tc.checkpoint_interval > 0 && state.step % tc.checkpoint_interval == 0 &&
          state.step < total) {
        state.rng_state = bi + 1 == batches.size() ? rng_to_string(rng) : epoch_rng;
        save_model(*options.out_dir / step_name(state.step), model, &state);
      }
    }
  }
  state.rng_state = resume_rng.empty() ? rng_to_string(rng) : resume_rng;
  if (options.out_dir) {
    result.checkpoint = *options.out_dir / "checkpoint.bin";
    save_model(*result.checkpoint, model, &state);
  }
  return result;
}

}  // namespace usdrl

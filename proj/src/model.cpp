#include "usdrl/model.hpp"

#include "usdrl/error.hpp"

#include <exception>
#include <mutex>
#include <thread>

namespace usdrl {

Model build_model(const ExperimentConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  std::mt19937_64 rng(config.model.seed);
  m.encoder = declare_dste(m.params, config.model, rng);
  m.projectors = declare_projectors(m.params, config.model, rng);
  m.params.round_to_float();
  return m;
}

SampleForward forward_sample(ad::Tape& tape, const Model& model, const SkeletonSequence& seq) {
  const auto& cfg = model.config.model;
  if (!(seq.shape == cfg.input_shape())) {
    throw ShapeError("sequence " + seq.source_id + " has shape [" + std::to_string(seq.shape.channels) + "," +
                     std::to_string(seq.shape.frames) + "," + std::to_string(seq.shape.joints) + "," +
                     std::to_string(seq.shape.persons) + "], model expects [" + std::to_string(cfg.channels_in) +
                     "," + std::to_string(cfg.frames) + "," + std::to_string(cfg.joints) + "," +
                     std::to_string(cfg.persons) + "]");
  }
  DomainMatrices d = reshape_domains(seq);
  ad::Var f_t = embed(tape, tape.constant(std::move(d.temporal)), model.encoder.temporal);
  ad::Var f_s = embed(tape, tape.constant(std::move(d.spatial)), model.encoder.spatial);
  SampleForward out;
  out.dense = encode(tape, f_s, f_t, model.encoder, cfg);
  out.condensed = condense(out.dense);
  return out;
}

DenseRepresentation encode_sequence(const Model& model, const SkeletonSequence& seq) {
  ad::Tape tape(model.params);
  auto f = forward_sample(tape, model, seq);
  return {f.dense.temporal.value(), f.dense.spatial.value()};
}

Matrix extract_features(const Model& model, const std::vector<SkeletonSequence>& seqs, int threads) {
  Matrix out(static_cast<Eigen::Index>(seqs.size()), 2 * model.config.model.repr_dim);
  parallel_for(seqs.size(), threads, [&](std::size_t i) {
    ad::Tape tape(model.params);
    auto f = forward_sample(tape, model, seqs[i]);
    out.row(static_cast<Eigen::Index>(i)) = f.condensed.instance.value();
  });
  return out;
}

std::vector<SkeletonSequence> to_model_modality(const std::vector<SkeletonSequence>& seqs,
                                                const ExperimentConfig& config) {
  const Modality m = parse_modality(config.train.modality);
  if (m == Modality::kJoint) return seqs;
  const int joints = config.model.joints;
  const SkeletonEdgeSet edges = joints == 25 ? SkeletonEdgeSet::ntu25() : SkeletonEdgeSet::chain(joints);
  std::vector<SkeletonSequence> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(derive_modality(s, m, m == Modality::kBone ? &edges : nullptr));
  return out;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      const std::size_t lo = w * chunk;
      const std::size_t hi = std::min(n, lo + chunk);
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace usdrl

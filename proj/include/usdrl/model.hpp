#pragma once

#include "usdrl/config.hpp"
#include "usdrl/dste.hpp"
#include "usdrl/projection.hpp"
#include "usdrl/skdata.hpp"

#include <functional>
#include <vector>

namespace usdrl {

/// Encoder, the three projectors and the tensors backing them.
struct Model {
  ExperimentConfig config;
  ParameterSet params;
  DsteParameters encoder;
  ProjectorSet projectors;
};

/// Declares and initializes every tensor from config.model.seed. Values are
/// rounded to float32.
Model build_model(const ExperimentConfig& config);

struct SampleForward {
  DenseVars dense;
  CondensedVars condensed;
};

/// Reshape, embed, encode and pool one sequence on a tape bound to model.params.
SampleForward forward_sample(ad::Tape& tape, const Model& model, const SkeletonSequence& seq);

DenseRepresentation encode_sequence(const Model& model, const SkeletonSequence& seq);

/// Instance condensed vectors, one row per sequence.
Matrix extract_features(const Model& model, const std::vector<SkeletonSequence>& seqs, int threads = 1);

/// Converts sequences to the modality named in config.train.modality.
std::vector<SkeletonSequence> to_model_modality(const std::vector<SkeletonSequence>& seqs,
                                                const ExperimentConfig& config);

/// Calls fn(i) for i in [0, n) on up to `threads` workers. Work is split into
/// contiguous chunks; fn must only touch slot i.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace usdrl

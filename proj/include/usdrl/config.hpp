#pragma once

#include "usdrl/skdata.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace usdrl {

using Json = nlohmann::json;

/// Encoder and projector dimensions plus the fusion weights.
struct ModelConfig {
  int channels_in = 3;  // C_in
  int frames = 32;      // T
  int joints = 8;       // V
  int persons = 1;      // M
  int embed_dim = 32;   // C_e
  int repr_dim = 32;    // C_r
  int proj_dim = 32;    // C_p
  int num_layers = 2;
  int gap = 2;
  double alpha = 0.5;  // weight of the convolutional-attention branch
  double beta = 0.5;   // weight of the dense-shift-attention branch
  int num_heads = 4;
  int conv_kernel = 3;
  std::string attention = "dense";  // sparsity pattern hook; only "dense" exists
  bool projector_norm = true;
  double init_std = 0.02;
  double projector_init_std = 0.0;  // 0 selects He scaling, sqrt(2 / fan_in)
  std::uint64_t seed = 0;

  int temporal_tokens() const { return frames; }
  int spatial_tokens() const { return persons * joints; }
  int temporal_input_dim() const { return persons * joints * channels_in; }
  int spatial_input_dim() const { return frames * channels_in; }
  SkeletonShape input_shape() const { return {channels_in, frames, joints, persons}; }

  void validate() const;
};

/// Weights of the decorrelation objective.
struct LossConfig {
  int views = 2;         // K
  double tau = 0.5;      // weight of the spatial and temporal domains
  double kappa = 25.0;   // similarity
  double eta = 1.0;      // invariance
  double mu = 25.0;      // variance hinge
  double lambda = 0.005; // cross-correlation
  double gamma = 1.0;    // variance target
  double epsilon = 1e-4;
  // "mse": mean over batch and dimensions of |z_a - zbar|^2.
  // "l2": mean over batch of the unsquared norm |z_a - zbar|.
  std::string similarity = "mse";

  void validate() const;
};

struct TrainConfig {
  int epochs = 1;
  int max_steps = 0;  // > 0 stops after exactly this many steps
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  std::string optimizer = "adamw";
  std::string schedule = "cosine";
  std::uint64_t seed = 0;
  int checkpoint_interval = 0;  // steps between intermediate checkpoints; 0 = final only
  std::string modality = "joint";
  int threads = 1;

  void validate() const;
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  AugmentPolicy augment = AugmentPolicy::standard();
  LossConfig loss;

  void validate() const;
};

Json to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults; unknown keys raise ConfigError.
ExperimentConfig experiment_from_json(const Json& j);

/// Applies "section.key=value" to a config document. The key must already
/// exist and the value must keep its JSON type.
void apply_override(Json& doc, const std::string& assignment);

ExperimentConfig load_experiment(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace usdrl

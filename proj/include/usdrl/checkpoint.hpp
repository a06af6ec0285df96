#pragma once

// Checkpoint container, little-endian:
//
//   "USDRLCKP" | u32 version | u32 header length | header JSON (resolved config,
//   training state) | u32 tensor count | per tensor: u32 name length, name,
//   u32 rows, u32 cols | payload of every tensor in manifest order, each
//   tensor row-major: float32 for model tensors, float64 for "optim." tensors.
//
// Model tensors come first in declaration order; optimizer moments follow
// under "optim.m/<name>" and "optim.v/<name>".

#include "usdrl/model.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace usdrl {

inline constexpr std::uint32_t kCheckpointVersion = 2;

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct CheckpointData {
  Json header;
  std::vector<NamedTensor> tensors;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

struct AdamState;

struct TrainState {
  long step = 0;
  std::vector<Matrix> adam_m;
  std::vector<Matrix> adam_v;
  std::string rng_state;
  double best_loss = 0.0;
  bool has_best = false;
};

void save_model(const std::filesystem::path& path, const Model& model, const TrainState* state = nullptr);
/// Rebuilds the architecture from the embedded config and restores every tensor.
Model load_model(const std::filesystem::path& path, TrainState* state = nullptr);
Model model_from_checkpoint(const CheckpointData& data, TrainState* state = nullptr);
CheckpointData checkpoint_from_model(const Model& model, const TrainState* state = nullptr);

/// FNV-1a over a byte sequence, hex encoded.
std::string digest_bytes(const std::vector<std::uint8_t>& bytes);
std::string digest_file(const std::filesystem::path& path);
std::string digest_text(const std::string& text);

}  // namespace usdrl

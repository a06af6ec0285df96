#pragma once

// Dense spatio-temporal encoder. Each stream (temporal over frames, spatial over
// joints) embeds its tokens and runs a stack of layers; every layer fuses a
// convolutional-attention branch and a dense-shift-attention branch.

#include "usdrl/autodiff.hpp"
#include "usdrl/config.hpp"

#include <optional>
#include <random>
#include <vector>

namespace usdrl {

enum class StreamKind { kTemporal, kSpatial };

struct LinearParams {
  ParamId weight;  // [in, out]
  ParamId bias;    // [1, out]
};

struct LayerNormParams {
  ParamId gain;
  ParamId bias;
};

/// Multi-head self-attention with residual connection and post layer norm.
struct AttentionParams {
  LinearParams query, key, value, output;
  LayerNormParams norm;
};

/// linear -> GELU -> linear (hidden width 2 * in), residual, layer norm.
/// When in != out the residual goes through a bias-free projection.
struct FeedForwardParams {
  LinearParams up, down;
  std::optional<ParamId> skip;
  LayerNormParams norm;
};

struct DsaParams {
  ParamId w1;  // [L, L], mixes tokens
  ParamId w2;  // [L, L]
  AttentionParams attention;
  FeedForwardParams ffn;  // shared by the shifted and the original path
};

struct CaParams {
  ParamId kernel;  // [k, C], one tap column per channel
  AttentionParams attention;
  FeedForwardParams ffn;
};

struct EncoderLayerParams {
  DsaParams dsa;
  CaParams ca;
};

struct StreamParams {
  StreamKind kind = StreamKind::kTemporal;
  int tokens = 0;
  int input_dim = 0;
  ParamId embed;     // [input_dim, C_e]
  ParamId position;  // [tokens, C_e]
  std::vector<EncoderLayerParams> layers;
};

struct DsteParameters {
  StreamParams temporal;
  StreamParams spatial;
};

/// Declares linear weights drawn from a truncated normal, zero biases, unit norm gains.
LinearParams declare_linear(ParameterSet& params, const std::string& name, int in, int out, double std,
                            std::mt19937_64& rng);
LayerNormParams declare_layer_norm(ParameterSet& params, const std::string& name, int dim);
AttentionParams declare_attention(ParameterSet& params, const std::string& name, int dim, double std,
                                  std::mt19937_64& rng);
FeedForwardParams declare_feed_forward(ParameterSet& params, const std::string& name, int in, int out, double std,
                                       std::mt19937_64& rng);
EncoderLayerParams declare_encoder_layer(ParameterSet& params, const std::string& name, int tokens, int in, int out,
                                         const ModelConfig& cfg, std::mt19937_64& rng);
DsteParameters declare_dste(ParameterSet& params, const ModelConfig& cfg, std::mt19937_64& rng);

ad::Var linear(ad::Tape& tape, ad::Var x, const LinearParams& p);

/// F = X * W_embed + position table.
ad::Var embed(ad::Tape& tape, ad::Var x, const StreamParams& stream);

/// Token-axis MLP with residual on the channel-major view F1 = F^T:
/// F_h = (ReLU(F1 W1) W2 + F1)^T.
ad::Var dsa_hidden(ad::Var f, ad::Var w1, ad::Var w2);

/// Rows i with i % gap == 0 come from f_hidden, the rest from f.
ad::Var dense_shift(ad::Var f_hidden, ad::Var f, int gap);

ad::Var self_attention(ad::Tape& tape, ad::Var f, const AttentionParams& p, int heads,
                       std::vector<Matrix>* weights_out = nullptr);
ad::Var feed_forward(ad::Tape& tape, ad::Var x, const FeedForwardParams& p);

/// FFN(SA(F_m)) + FFN(SA(F)) with F_m the dense-shifted sequence.
ad::Var dsa_forward(ad::Tape& tape, ad::Var f, const DsaParams& p, const ModelConfig& cfg);
/// FFN(SA(Conv(F) + F)).
ad::Var ca_forward(ad::Tape& tape, ad::Var f, const CaParams& p, const ModelConfig& cfg);
/// alpha * CA(F) + beta * DSA(F). A zero weight skips its branch entirely.
ad::Var layer_forward(ad::Tape& tape, ad::Var f, const EncoderLayerParams& p, const ModelConfig& cfg);

/// Embedding followed by the layer stack of one stream.
ad::Var stream_forward(ad::Tape& tape, ad::Var x, const StreamParams& stream, const ModelConfig& cfg);

struct DenseVars {
  ad::Var temporal;  // y_t [T, C_r]
  ad::Var spatial;   // y_s [S, C_r]
};

/// Runs both streams on already embedded inputs.
DenseVars encode(ad::Tape& tape, ad::Var f_spatial, ad::Var f_temporal, const DsteParameters& p,
                 const ModelConfig& cfg);

struct CondensedVars {
  ad::Var temporal;  // [1, C_r]
  ad::Var spatial;   // [1, C_r]
  ad::Var instance;  // [1, 2 C_r], temporal first
};

CondensedVars condense(const DenseVars& dense);

struct DenseRepresentation {
  Matrix y_t;
  Matrix y_s;
};

struct CondensedVector {
  RowVector t_pool;
  RowVector s_pool;
  RowVector instance;
};

CondensedVector condense(const DenseRepresentation& rep);

}  // namespace usdrl

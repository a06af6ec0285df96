#include "usdrl/dste.hpp"

#include "usdrl/error.hpp"

namespace usdrl {

namespace {

constexpr double kLayerNormEps = 1e-5;

std::string stream_name(StreamKind k) { return k == StreamKind::kTemporal ? "temporal" : "spatial"; }

}  // namespace

LinearParams declare_linear(ParameterSet& params, const std::string& name, int in, int out, double std,
                            std::mt19937_64& rng) {
  LinearParams p;
  p.weight = params.add(name + ".weight", truncated_normal(in, out, std, rng), ParamKind::kWeight);
  p.bias = params.add(name + ".bias", Matrix::Zero(1, out), ParamKind::kBias);
  return p;
}

LayerNormParams declare_layer_norm(ParameterSet& params, const std::string& name, int dim) {
  return {params.add(name + ".gain", Matrix::Ones(1, dim), ParamKind::kBias),
          params.add(name + ".bias", Matrix::Zero(1, dim), ParamKind::kBias)};
}

AttentionParams declare_attention(ParameterSet& params, const std::string& name, int dim, double std,
                                  std::mt19937_64& rng) {
  AttentionParams p;
  p.query = declare_linear(params, name + ".query", dim, dim, std, rng);
  p.key = declare_linear(params, name + ".key", dim, dim, std, rng);
  p.value = declare_linear(params, name + ".value", dim, dim, std, rng);
  p.output = declare_linear(params, name + ".output", dim, dim, std, rng);
  p.norm = declare_layer_norm(params, name + ".norm", dim);
  return p;
}

FeedForwardParams declare_feed_forward(ParameterSet& params, const std::string& name, int in, int out, double std,
                                       std::mt19937_64& rng) {
  FeedForwardParams p;
  p.up = declare_linear(params, name + ".up", in, 2 * in, std, rng);
  p.down = declare_linear(params, name + ".down", 2 * in, out, std, rng);
  if (in != out) p.skip = params.add(name + ".skip", truncated_normal(in, out, std, rng), ParamKind::kWeight);
  p.norm = declare_layer_norm(params, name + ".norm", out);
  return p;
}

EncoderLayerParams declare_encoder_layer(ParameterSet& params, const std::string& name, int tokens, int in, int out,
                                         const ModelConfig& cfg, std::mt19937_64& rng) {
  const double std = cfg.init_std;
  EncoderLayerParams p;
  p.dsa.w1 = params.add(name + ".dsa.w1", truncated_normal(tokens, tokens, std, rng));
  p.dsa.w2 = params.add(name + ".dsa.w2", truncated_normal(tokens, tokens, std, rng));
  p.dsa.attention = declare_attention(params, name + ".dsa.attn", in, std, rng);
  p.dsa.ffn = declare_feed_forward(params, name + ".dsa.ffn", in, out, std, rng);
  p.ca.kernel = params.add(name + ".ca.kernel", truncated_normal(cfg.conv_kernel, in, std, rng));
  p.ca.attention = declare_attention(params, name + ".ca.attn", in, std, rng);
  p.ca.ffn = declare_feed_forward(params, name + ".ca.ffn", in, out, std, rng);
  return p;
}

DsteParameters declare_dste(ParameterSet& params, const ModelConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  DsteParameters d;
  for (StreamKind kind : {StreamKind::kTemporal, StreamKind::kSpatial}) {
    StreamParams& s = kind == StreamKind::kTemporal ? d.temporal : d.spatial;
    const std::string name = stream_name(kind);
    s.kind = kind;
    s.tokens = kind == StreamKind::kTemporal ? cfg.temporal_tokens() : cfg.spatial_tokens();
    s.input_dim = kind == StreamKind::kTemporal ? cfg.temporal_input_dim() : cfg.spatial_input_dim();
    s.embed = params.add(name + ".embed", truncated_normal(s.input_dim, cfg.embed_dim, cfg.init_std, rng));
    s.position = params.add(name + ".position", truncated_normal(s.tokens, cfg.embed_dim, cfg.init_std, rng));
    for (int l = 0; l < cfg.num_layers; ++l) {
      const int in = l == 0 ? cfg.embed_dim : cfg.repr_dim;
      s.layers.push_back(declare_encoder_layer(params, name + ".layer" + std::to_string(l), s.tokens, in,
                                               cfg.repr_dim, cfg, rng));
    }
  }
  return d;
}

ad::Var linear(ad::Tape& tape, ad::Var x, const LinearParams& p) {
  return ad::add_row(ad::matmul(x, tape.parameter(p.weight)), tape.parameter(p.bias));
}

ad::Var embed(ad::Tape& tape, ad::Var x, const StreamParams& stream) {
  if (x.rows() != stream.tokens || x.cols() != stream.input_dim) {
    throw ShapeError("embed: expected [" + std::to_string(stream.tokens) + "," + std::to_string(stream.input_dim) +
                     "] input, got [" + std::to_string(x.rows()) + "," + std::to_string(x.cols()) + "]");
  }
  return ad::add(ad::matmul(x, tape.parameter(stream.embed)), tape.parameter(stream.position));
}

ad::Var dsa_hidden(ad::Var f, ad::Var w1, ad::Var w2) {
  const Eigen::Index len = f.rows();
  if (w1.rows() != len || w1.cols() != len || w2.rows() != len || w2.cols() != len) {
    throw ShapeError("dsa_hidden: W1 and W2 must be [" + std::to_string(len) + "," + std::to_string(len) + "]");
  }
  ad::Var f1 = ad::transpose(f);
  ad::Var h = ad::add(ad::matmul(ad::relu(ad::matmul(f1, w1)), w2), f1);
  return ad::transpose(h);
}

ad::Var dense_shift(ad::Var f_hidden, ad::Var f, int gap) { return ad::select_rows_every(f_hidden, f, gap); }

ad::Var self_attention(ad::Tape& tape, ad::Var f, const AttentionParams& p, int heads,
                       std::vector<Matrix>* weights_out) {
  if (heads < 1 || f.cols() % heads != 0) {
    throw ConfigError("self_attention: " + std::to_string(f.cols()) + " channels not divisible by " +
                      std::to_string(heads) + " heads");
  }
  ad::Var q = linear(tape, f, p.query);
  ad::Var k = linear(tape, f, p.key);
  ad::Var v = linear(tape, f, p.value);
  ad::Var mixed = linear(tape, ad::attention(q, k, v, heads, weights_out), p.output);
  return ad::layer_norm(ad::add(f, mixed), tape.parameter(p.norm.gain), tape.parameter(p.norm.bias), kLayerNormEps);
}

ad::Var feed_forward(ad::Tape& tape, ad::Var x, const FeedForwardParams& p) {
  ad::Var h = linear(tape, ad::gelu(linear(tape, x, p.up)), p.down);
  ad::Var residual = p.skip ? ad::matmul(x, tape.parameter(*p.skip)) : x;
  return ad::layer_norm(ad::add(residual, h), tape.parameter(p.norm.gain), tape.parameter(p.norm.bias),
                        kLayerNormEps);
}

ad::Var dsa_forward(ad::Tape& tape, ad::Var f, const DsaParams& p, const ModelConfig& cfg) {
  ad::Var hidden = dsa_hidden(f, tape.parameter(p.w1), tape.parameter(p.w2));
  ad::Var shifted = dense_shift(hidden, f, cfg.gap);
  ad::Var a = feed_forward(tape, self_attention(tape, shifted, p.attention, cfg.num_heads), p.ffn);
  ad::Var b = feed_forward(tape, self_attention(tape, f, p.attention, cfg.num_heads), p.ffn);
  return ad::add(a, b);
}

ad::Var ca_forward(ad::Tape& tape, ad::Var f, const CaParams& p, const ModelConfig& cfg) {
  ad::Var conv = ad::depthwise_conv(f, tape.parameter(p.kernel));
  return feed_forward(tape, self_attention(tape, ad::add(conv, f), p.attention, cfg.num_heads), p.ffn);
}

ad::Var layer_forward(ad::Tape& tape, ad::Var f, const EncoderLayerParams& p, const ModelConfig& cfg) {
  if (cfg.alpha < 0.0 || cfg.beta < 0.0 || std::abs(cfg.alpha + cfg.beta - 1.0) > 1e-12) {
    throw ConfigError("layer_forward: alpha + beta must equal 1");
  }
  if (cfg.beta == 0.0) return ca_forward(tape, f, p.ca, cfg);
  if (cfg.alpha == 0.0) return dsa_forward(tape, f, p.dsa, cfg);
  return ad::add(ad::scale(ca_forward(tape, f, p.ca, cfg), cfg.alpha),
                 ad::scale(dsa_forward(tape, f, p.dsa, cfg), cfg.beta));
}

ad::Var stream_forward(ad::Tape& tape, ad::Var x, const StreamParams& stream, const ModelConfig& cfg) {
  ad::Var h = embed(tape, x, stream);
  for (const auto& layer : stream.layers) h = layer_forward(tape, h, layer, cfg);
  return h;
}

DenseVars encode(ad::Tape& tape, ad::Var f_spatial, ad::Var f_temporal, const DsteParameters& p,
                 const ModelConfig& cfg) {
  if (p.temporal.layers.empty() || p.spatial.layers.empty()) throw ConfigError("encode: num_layers must be >= 1");
  DenseVars out;
  out.temporal = f_temporal;
  for (const auto& layer : p.temporal.layers) out.temporal = layer_forward(tape, out.temporal, layer, cfg);
  out.spatial = f_spatial;
  for (const auto& layer : p.spatial.layers) out.spatial = layer_forward(tape, out.spatial, layer, cfg);
  return out;
}

CondensedVars condense(const DenseVars& dense) {
  CondensedVars c;
  c.temporal = ad::col_max(dense.temporal);
  c.spatial = ad::col_max(dense.spatial);
  const ad::Var parts[] = {c.temporal, c.spatial};
  c.instance = ad::concat_cols(parts);
  return c;
}

CondensedVector condense(const DenseRepresentation& rep) {
  CondensedVector c;
  c.t_pool = rep.y_t.colwise().maxCoeff();
  c.s_pool = rep.y_s.colwise().maxCoeff();
  c.instance.resize(c.t_pool.size() + c.s_pool.size());
  c.instance << c.t_pool, c.s_pool;
  return c;
}

}  // namespace usdrl

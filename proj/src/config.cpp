#include "usdrl/config.hpp"

#include "usdrl/error.hpp"

#include <cmath>
#include <fstream>

namespace usdrl {

void ModelConfig::validate() const {
  if (channels_in < 1 || frames < 1 || joints < 1 || persons < 1) throw ConfigError("model: input dims must be >= 1");
  if (embed_dim < 1 || repr_dim < 1 || proj_dim < 1) throw ConfigError("model: channel counts must be >= 1");
  if (num_layers < 1) throw ConfigError("model: num_layers must be >= 1");
  if (gap < 1) throw ConfigError("model: gap must be >= 1");
  if (alpha < 0.0 || alpha > 1.0 || beta < 0.0) throw ConfigError("model: alpha must lie in [0,1], beta >= 0");
  if (std::abs(alpha + beta - 1.0) > 1e-12) throw ConfigError("model: alpha + beta must equal 1");
  if (num_heads < 1 || embed_dim % num_heads != 0 || repr_dim % num_heads != 0) {
    throw ConfigError("model: embed_dim and repr_dim must be divisible by num_heads");
  }
  if (conv_kernel < 1 || conv_kernel % 2 == 0) throw ConfigError("model: conv_kernel must be odd");
  if (attention != "dense") throw ConfigError("model: unsupported attention pattern '" + attention + "'");
  if (!(init_std > 0.0)) throw ConfigError("model: init_std must be positive");
  if (!(projector_init_std >= 0.0)) throw ConfigError("model: projector_init_std must be >= 0");
}

void LossConfig::validate() const {
  if (views < 2) throw ConfigError("loss: views (K) must be >= 2");
  if (!(gamma > 0.0) || !(epsilon > 0.0)) throw ConfigError("loss: gamma and epsilon must be positive");
  if (tau < 0.0 || kappa < 0.0 || eta < 0.0 || mu < 0.0 || lambda < 0.0) {
    throw ConfigError("loss: weights must be non-negative");
  }
  if (similarity != "mse" && similarity != "l2") throw ConfigError("loss: similarity must be 'mse' or 'l2'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (max_steps < 0) throw ConfigError("train: max_steps must be >= 0");
  if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
  if (lr < 0.0) throw ConfigError("train: lr must be non-negative");
  if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be non-negative");
  if (optimizer != "adamw") throw ConfigError("train: unsupported optimizer '" + optimizer + "'");
  if (schedule != "cosine" && schedule != "constant") throw ConfigError("train: unsupported schedule '" + schedule + "'");
  if (checkpoint_interval < 0) throw ConfigError("train: checkpoint_interval must be >= 0");
  if (threads < 1) throw ConfigError("train: threads must be >= 1");
  parse_modality(modality);
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  loss.validate();
}

Json to_json(const ExperimentConfig& c) {
  Json j;
  const auto& m = c.model;
  j["model"] = {{"channels_in", m.channels_in}, {"frames", m.frames},         {"joints", m.joints},
                {"persons", m.persons},         {"embed_dim", m.embed_dim},   {"repr_dim", m.repr_dim},
                {"proj_dim", m.proj_dim},       {"num_layers", m.num_layers}, {"gap", m.gap},
                {"alpha", m.alpha},             {"beta", m.beta},             {"num_heads", m.num_heads},
                {"conv_kernel", m.conv_kernel}, {"attention", m.attention},   {"projector_norm", m.projector_norm},
                {"init_std", m.init_std}, {"projector_init_std", m.projector_init_std},       {"seed", m.seed}};
  const auto& t = c.train;
  j["train"] = {{"epochs", t.epochs},
                {"max_steps", t.max_steps},
                {"batch_size", t.batch_size},
                {"lr", t.lr},
                {"weight_decay", t.weight_decay},
                {"optimizer", t.optimizer},
                {"schedule", t.schedule},
                {"seed", t.seed},
                {"checkpoint_interval", t.checkpoint_interval},
                {"modality", t.modality},
                {"threads", t.threads}};
  const auto& a = c.augment;
  j["augment"] = {{"rotation", a.rotation},         {"rotation_deg", a.rotation_deg}, {"shear", a.shear},
                  {"shear_amount", a.shear_amount}, {"temporal_crop", a.temporal_crop}, {"crop_min", a.crop_min},
                  {"crop_max", a.crop_max},         {"jitter", a.jitter},             {"jitter_sigma", a.jitter_sigma},
                  {"joint_dropout", a.joint_dropout}, {"dropout_p", a.dropout_p}};
  const auto& l = c.loss;
  j["loss"] = {{"views", l.views}, {"tau", l.tau},       {"kappa", l.kappa}, {"eta", l.eta},
               {"mu", l.mu},       {"lambda", l.lambda}, {"gamma", l.gamma}, {"epsilon", l.epsilon},
               {"similarity", l.similarity}};
  return j;
}

namespace {

bool same_kind(const Json& a, const Json& b) {
  if (a.is_boolean() || b.is_boolean()) return a.is_boolean() && b.is_boolean();
  if (a.is_number() || b.is_number()) {
    if (!(a.is_number() && b.is_number())) return false;
    // An integer slot cannot take a fractional value.
    return !(a.is_number_integer() && b.is_number_float());
  }
  return a.type() == b.type();
}

// Copies src into dst recursively; every key in src must exist in dst.
void merge_checked(Json& dst, const Json& src, const std::string& path) {
  if (!src.is_object()) throw ConfigError("config: expected an object at '" + path + "'");
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!dst.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
    Json& slot = dst[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, it.value(), key);
    } else {
      if (!same_kind(slot, it.value())) throw ConfigError("config: wrong value type for '" + key + "'");
      if (slot.is_number_unsigned() && it.value().is_number_integer() && it.value().get<long long>() < 0) {
        throw ConfigError("config: '" + key + "' must be non-negative");
      }
      slot = it.value();
    }
  }
}

}  // namespace

ExperimentConfig experiment_from_json(const Json& j) {
  Json doc = to_json(ExperimentConfig{});
  merge_checked(doc, j, "");
  ExperimentConfig c;
  const auto& m = doc["model"];
  c.model.channels_in = m["channels_in"];
  c.model.frames = m["frames"];
  c.model.joints = m["joints"];
  c.model.persons = m["persons"];
  c.model.embed_dim = m["embed_dim"];
  c.model.repr_dim = m["repr_dim"];
  c.model.proj_dim = m["proj_dim"];
  c.model.num_layers = m["num_layers"];
  c.model.gap = m["gap"];
  c.model.alpha = m["alpha"];
  c.model.beta = m["beta"];
  c.model.num_heads = m["num_heads"];
  c.model.conv_kernel = m["conv_kernel"];
  c.model.attention = m["attention"];
  c.model.projector_norm = m["projector_norm"];
  c.model.init_std = m["init_std"];
  c.model.projector_init_std = m["projector_init_std"];
  c.model.seed = m["seed"];
  const auto& t = doc["train"];
  c.train.epochs = t["epochs"];
  c.train.max_steps = t["max_steps"];
  c.train.batch_size = t["batch_size"];
  c.train.lr = t["lr"];
  c.train.weight_decay = t["weight_decay"];
  c.train.optimizer = t["optimizer"];
  c.train.schedule = t["schedule"];
  c.train.seed = t["seed"];
  c.train.checkpoint_interval = t["checkpoint_interval"];
  c.train.modality = t["modality"];
  c.train.threads = t["threads"];
  const auto& a = doc["augment"];
  c.augment.rotation = a["rotation"];
  c.augment.rotation_deg = a["rotation_deg"];
  c.augment.shear = a["shear"];
  c.augment.shear_amount = a["shear_amount"];
  c.augment.temporal_crop = a["temporal_crop"];
  c.augment.crop_min = a["crop_min"];
  c.augment.crop_max = a["crop_max"];
  c.augment.jitter = a["jitter"];
  c.augment.jitter_sigma = a["jitter_sigma"];
  c.augment.joint_dropout = a["joint_dropout"];
  c.augment.dropout_p = a["dropout_p"];
  const auto& l = doc["loss"];
  c.loss.views = l["views"];
  c.loss.tau = l["tau"];
  c.loss.kappa = l["kappa"];
  c.loss.similarity = l["similarity"];
  c.loss.eta = l["eta"];
  c.loss.mu = l["mu"];
  c.loss.lambda = l["lambda"];
  c.loss.gamma = l["gamma"];
  c.loss.epsilon = l["epsilon"];
  c.validate();
  return c;
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like section.key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;  // bare strings need no quotes
  }

  // Build a nested patch and merge it with the same checks as file loading.
  Json patch = value;
  std::string rest = path;
  std::vector<std::string> keys;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
    keys.push_back(rest.substr(0, pos));
  }
  keys.push_back(rest);
  for (auto it = keys.rbegin(); it != keys.rend(); ++it) patch = Json{{*it, patch}};

  Json defaults = to_json(ExperimentConfig{});
  merge_checked(defaults, doc, "");
  merge_checked(defaults, patch, "");
  doc = defaults;
}

ExperimentConfig load_experiment(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  Json doc = Json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    try {
      doc = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw ConfigError(std::string("config parse error: ") + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return experiment_from_json(doc);
}

}  // namespace usdrl

#include "usdrl/checkpoint.hpp"

#include "usdrl/error.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

namespace usdrl {

namespace {

constexpr char kMagic[8] = {'U', 'S', 'D', 'R', 'L', 'C', 'K', 'P'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

// Optimizer moments keep full precision so a resumed run continues bit-exactly.
bool wide_payload(const std::string& name) { return name.rfind("optim.", 0) == 0; }

void put_bytes(std::vector<std::uint8_t>& out, const std::string& s) { out.insert(out.end(), s.begin(), s.end()); }

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  double f64() {
    const std::uint64_t bits = std::uint64_t(u32()) | (std::uint64_t(u32()) << 32);
    double d = 0;
    std::memcpy(&d, &bits, sizeof d);
    return d;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f = 0;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw FormatError("checkpoint truncated");
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  const std::string header = data.header.dump();
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  put_bytes(out, header);
  put_u32(out, static_cast<std::uint32_t>(data.tensors.size()));
  for (const auto& t : data.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    put_bytes(out, t.name);
    put_u32(out, static_cast<std::uint32_t>(t.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.value.cols()));
  }
  for (const auto& t : data.tensors) {
    const bool wide = wide_payload(t.name);
    for (Eigen::Index i = 0; i < t.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.value.cols(); ++j) {
        if (wide) {
          std::uint64_t bits = 0;
          std::memcpy(&bits, &t.value(i, j), sizeof bits);
          put_u64(out, bits);
          continue;
        }
        const float f = static_cast<float>(t.value(i, j));
        std::uint32_t bits = 0;
        std::memcpy(&bits, &f, sizeof bits);
        put_u32(out, bits);
      }
    }
  }
  return out;
}

CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  std::vector<std::uint8_t> body(bytes.begin() + sizeof kMagic, bytes.end());
  Reader r(body);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  CheckpointData data;
  try {
    data.header = Json::parse(r.bytes(r.u32()));
  } catch (const Json::parse_error& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes(r.u32());
    const auto rows = r.u32();
    const auto cols = r.u32();
    t.value.resize(rows, cols);
    data.tensors.push_back(std::move(t));
  }
  for (auto& t : data.tensors) {
    const bool wide = wide_payload(t.name);
    for (Eigen::Index i = 0; i < t.value.rows(); ++i)
      for (Eigen::Index j = 0; j < t.value.cols(); ++j) t.value(i, j) = wide ? r.f64() : r.f32();
  }
  if (!r.done()) throw FormatError("trailing bytes in checkpoint");
  return data;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  const auto bytes = encode_checkpoint(data);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

CheckpointData read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(slurp(path)); }

CheckpointData checkpoint_from_model(const Model& model, const TrainState* state) {
  CheckpointData data;
  data.header["config"] = to_json(model.config);
  for (const auto& p : model.params) data.tensors.push_back({p.name, p.value});
  if (state != nullptr) {
    Json s;
    s["step"] = state->step;
    s["rng"] = state->rng_state;
    if (state->has_best) s["best_loss"] = state->best_loss;
    data.header["state"] = s;
    for (std::size_t i = 0; i < state->adam_m.size() && i < model.params.size(); ++i) {
      if (state->adam_m[i].size() == 0) continue;
      data.tensors.push_back({"optim.m/" + model.params.at(i).name, state->adam_m[i]});
      data.tensors.push_back({"optim.v/" + model.params.at(i).name, state->adam_v[i]});
    }
  }
  return data;
}

Model model_from_checkpoint(const CheckpointData& data, TrainState* state) {
  if (!data.header.contains("config")) throw FormatError("checkpoint header lacks a config");
  Model model = build_model(experiment_from_json(data.header["config"]));
  std::vector<bool> seen(model.params.size(), false);
  if (state != nullptr) {
    *state = TrainState{};
    state->adam_m.resize(model.params.size());
    state->adam_v.resize(model.params.size());
  }
  for (const auto& t : data.tensors) {
    std::string name = t.name;
    std::vector<Matrix>* slot_vec = nullptr;
    if (name.rfind("optim.m/", 0) == 0) {
      name = name.substr(8);
      if (state != nullptr) slot_vec = &state->adam_m;
      else continue;
    } else if (name.rfind("optim.v/", 0) == 0) {
      name = name.substr(8);
      if (state != nullptr) slot_vec = &state->adam_v;
      else continue;
    }
    const ParamId id = model.params.find(name);
    if (!id.valid()) throw FormatError("checkpoint tensor '" + t.name + "' does not exist in the model");
    Parameter& p = model.params[id];
    if (p.value.rows() != t.value.rows() || p.value.cols() != t.value.cols()) {
      throw FormatError("checkpoint tensor '" + t.name + "' has the wrong shape");
    }
    if (slot_vec != nullptr) {
      (*slot_vec)[id.index] = t.value;
    } else {
      p.value = t.value;
      seen[id.index] = true;
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw FormatError("checkpoint is missing tensor '" + model.params.at(i).name + "'");
  }
  if (state != nullptr && data.header.contains("state")) {
    const auto& s = data.header["state"];
    state->step = s.value("step", 0L);
    state->rng_state = s.value("rng", std::string{});
    if (s.contains("best_loss")) {
      state->best_loss = s["best_loss"];
      state->has_best = true;
    }
  }
  return model;
}

void save_model(const std::filesystem::path& path, const Model& model, const TrainState* state) {
  write_checkpoint(path, checkpoint_from_model(model, state));
}

Model load_model(const std::filesystem::path& path, TrainState* state) {
  return model_from_checkpoint(read_checkpoint(path), state);
}

std::string digest_bytes(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string digest_file(const std::filesystem::path& path) { return digest_bytes(slurp(path)); }

std::string digest_text(const std::string& text) {
  return digest_bytes(std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace usdrl

#include "usdrl/skdata.hpp"

#include "usdrl/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

namespace usdrl {

namespace fs = std::filesystem;

void SkeletonSequence::validate() const {
  if (shape.channels < 1 || shape.frames < 1 || shape.joints < 1 || shape.persons < 1) {
    throw ShapeError("skeleton dimensions must all be >= 1");
  }
  if (data.size() != shape.size()) throw ShapeError("skeleton payload size does not match its shape");
  for (double x : data) {
    if (!std::isfinite(x)) throw ArgumentError("skeleton " + source_id + " has a non-finite coordinate");
  }
  if (frame_labels && static_cast<int>(frame_labels->size()) != shape.frames) {
    throw ShapeError("frame label count differs from frame count");
  }
}

void SkeletonEdgeSet::validate(int joints) const {
  std::vector<int> parent(static_cast<std::size_t>(joints), -1);
  for (auto [child, par] : edges) {
    if (child < 0 || child >= joints || par < 0 || par >= joints) {
      throw ArgumentError("edge index out of range");
    }
    if (parent[static_cast<std::size_t>(child)] != -1) throw ArgumentError("joint has two parents");
    parent[static_cast<std::size_t>(child)] = par;
  }
  for (int v = 0; v < joints; ++v) {
    int cur = v;
    for (int steps = 0; cur != -1; ++steps) {
      if (steps > joints) throw ArgumentError("edge set contains a cycle");
      cur = parent[static_cast<std::size_t>(cur)];
    }
  }
}

SkeletonEdgeSet SkeletonEdgeSet::ntu25() {
  // 1-based NTU pairs (child, parent); joint 21 (spine) is the root.
  static constexpr std::array<std::pair<int, int>, 24> kPairs{{
      {1, 2},   {2, 21},  {3, 21},  {4, 3},   {5, 21},  {6, 5},   {7, 6},   {8, 7},
      {9, 21},  {10, 9},  {11, 10}, {12, 11}, {13, 1},  {14, 13}, {15, 14}, {16, 15},
      {17, 1},  {18, 17}, {19, 18}, {20, 19}, {22, 23}, {23, 8},  {24, 25}, {25, 12},
  }};
  SkeletonEdgeSet set;
  for (auto [c, p] : kPairs) set.edges.emplace_back(c - 1, p - 1);
  return set;
}

SkeletonEdgeSet SkeletonEdgeSet::chain(int joints) {
  SkeletonEdgeSet set;
  for (int v = 1; v < joints; ++v) set.edges.emplace_back(v, v - 1);
  return set;
}

Modality parse_modality(const std::string& name) {
  if (name == "joint") return Modality::kJoint;
  if (name == "bone") return Modality::kBone;
  if (name == "motion") return Modality::kMotion;
  throw ArgumentError("unknown modality: " + name);
}

std::string to_string(Modality m) {
  switch (m) {
    case Modality::kJoint: return "joint";
    case Modality::kBone: return "bone";
    case Modality::kMotion: return "motion";
  }
  return "joint";
}

// ---------------------------------------------------------------------------
// NTU text format

namespace {

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  std::vector<std::string> fields(const char* what) {
    std::string line;
    while (true) {
      if (!std::getline(in_, line)) throw ParseError("unexpected end of file, expected " + std::string(what), line_ + 1);
      ++line_;
      if (line.find_first_not_of(" \t\r") != std::string::npos) break;
    }
    std::istringstream ss(line);
    std::vector<std::string> out{std::istream_iterator<std::string>(ss), std::istream_iterator<std::string>()};
    return out;
  }

  long integer(const char* what) {
    auto f = fields(what);
    if (f.size() != 1) throw ParseError(std::string("expected a single integer for ") + what, line_);
    try {
      std::size_t pos = 0;
      long v = std::stol(f[0], &pos);
      if (pos != f[0].size() || v < 0) throw std::invalid_argument("bad");
      return v;
    } catch (const std::exception&) {
      throw ParseError(std::string("malformed ") + what + ": '" + f[0] + "'", line_);
    }
  }

  std::size_t line() const { return line_; }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

double parse_real(const std::string& s, std::size_t line) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError("malformed number '" + s + "'", line);
  }
}

}  // namespace

SkeletonSequence load_ntu_skeleton(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  LineReader reader(in);
  constexpr int kJoints = 25;

  const long frames = reader.integer("frame count");
  if (frames < 1) throw ParseError("frame count must be >= 1", reader.line());

  // frame -> body -> joint xyz
  std::vector<std::vector<std::array<std::array<double, 3>, kJoints>>> bodies(static_cast<std::size_t>(frames));
  std::size_t max_bodies = 1;
  for (long t = 0; t < frames; ++t) {
    const long count = reader.integer("body count");
    for (long b = 0; b < count; ++b) {
      auto meta = reader.fields("body metadata");
      if (meta.size() != 10) throw ParseError("body metadata must have 10 fields", reader.line());
      const long joints = reader.integer("joint count");
      if (joints != kJoints) {
        throw FormatError("line " + std::to_string(reader.line()) + ": joint count " + std::to_string(joints) +
                          " != 25");
      }
      std::array<std::array<double, 3>, kJoints> pose{};
      for (int v = 0; v < kJoints; ++v) {
        auto f = reader.fields("joint record");
        if (f.size() != 12) throw ParseError("joint record must have 12 fields", reader.line());
        for (int c = 0; c < 3; ++c) pose[static_cast<std::size_t>(v)][static_cast<std::size_t>(c)] = parse_real(f[static_cast<std::size_t>(c)], reader.line());
        for (std::size_t k = 3; k < 12; ++k) parse_real(f[k], reader.line());
      }
      bodies[static_cast<std::size_t>(t)].push_back(pose);
    }
    max_bodies = std::max(max_bodies, bodies[static_cast<std::size_t>(t)].size());
  }

  SkeletonSequence seq(SkeletonShape{3, static_cast<int>(frames), kJoints, static_cast<int>(max_bodies)});
  seq.source_id = path.stem().string();
  for (int t = 0; t < seq.shape.frames; ++t) {
    const auto& frame = bodies[static_cast<std::size_t>(t)];
    for (std::size_t m = 0; m < frame.size(); ++m) {
      for (int v = 0; v < kJoints; ++v) {
        for (int c = 0; c < 3; ++c) {
          seq.at(c, t, v, static_cast<int>(m)) = frame[m][static_cast<std::size_t>(v)][static_cast<std::size_t>(c)];
        }
      }
    }
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Binary container

namespace {

constexpr char kSkelMagic[5] = {'S', 'K', 'E', 'L', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits = 0;
  std::memcpy(&bits, &f, sizeof bits);
  put_u32(out, bits);
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float f = 0;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  bool done() const { return pos_ == bytes_.size(); }
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("skeleton container truncated");
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

std::vector<std::uint8_t> encode_skel(const SkeletonSequence& seq) {
  seq.validate();
  std::vector<std::uint8_t> out(std::begin(kSkelMagic), std::end(kSkelMagic));
  put_u32(out, static_cast<std::uint32_t>(seq.shape.channels));
  put_u32(out, static_cast<std::uint32_t>(seq.shape.frames));
  put_u32(out, static_cast<std::uint32_t>(seq.shape.joints));
  put_u32(out, static_cast<std::uint32_t>(seq.shape.persons));
  out.push_back(seq.label ? 1 : 0);
  if (seq.label) put_u32(out, static_cast<std::uint32_t>(*seq.label));
  for (double x : seq.data) put_f32(out, static_cast<float>(x));
  if (seq.frame_labels) {
    out.push_back(1);
    for (int l : *seq.frame_labels) put_u32(out, static_cast<std::uint32_t>(l));
  }
  return out;
}

SkeletonSequence decode_skel(const std::vector<std::uint8_t>& bytes, const std::string& source_id) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kSkelMagic, 5) != 0) {
    throw FormatError("missing SKEL1 magic");
  }
  std::vector<std::uint8_t> body(bytes.begin() + 5, bytes.end());
  ByteReader r(body);
  SkeletonShape shape;
  shape.channels = static_cast<int>(r.u32());
  shape.frames = static_cast<int>(r.u32());
  shape.joints = static_cast<int>(r.u32());
  shape.persons = static_cast<int>(r.u32());
  SkeletonSequence seq(shape);
  seq.source_id = source_id;
  const std::uint8_t flag = r.u8();
  if (flag > 1) throw FormatError("invalid label flag");
  if (flag == 1) seq.label = static_cast<int>(r.u32());
  for (double& x : seq.data) x = r.f32();
  if (!r.done()) {
    if (r.u8() != 1) throw FormatError("invalid frame-label trailer");
    std::vector<int> fl(static_cast<std::size_t>(shape.frames));
    for (int& l : fl) l = static_cast<int>(r.u32());
    seq.frame_labels = std::move(fl);
    if (!r.done()) throw FormatError("trailing bytes after skeleton container");
  }
  seq.validate();
  return seq;
}

void save_skel(const SkeletonSequence& seq, const fs::path& path) { write_file(path, encode_skel(seq)); }

SkeletonSequence load_skel(const fs::path& path) { return decode_skel(read_file(path), path.stem().string()); }

void save_dataset(const std::vector<SkeletonSequence>& seqs, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& s : seqs) {
    if (s.source_id.empty()) throw ArgumentError("sequence without source_id cannot be saved");
    save_skel(s, dir / (s.source_id + ".skel"));
  }
}

std::vector<SkeletonSequence> load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("not a dataset directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".skel") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.stem().string() < b.stem().string(); });
  std::vector<SkeletonSequence> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_skel(f));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

using Vec3 = std::array<double, 3>;

struct ClassFamily {
  double frequency = 1.0;  // cycles per 32 frames
  std::vector<Vec3> direction;
  std::vector<double> phase;
  std::vector<double> amplitude;
};

constexpr std::uint64_t kFamilySeed = 0x5ca1ab1e;
constexpr double kReferenceFrames = 32.0;
constexpr double kClassFrequency = 2.0;

Vec3 unit_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v{n(rng), n(rng), n(rng)};
  const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  for (double& x : v) x /= len;
  return v;
}

std::vector<Vec3> rest_pose(int joints) {
  std::vector<Vec3> pose(static_cast<std::size_t>(joints));
  for (int v = 0; v < joints; ++v) {
    const double a = 1.3 * v;
    pose[static_cast<std::size_t>(v)] = {0.2 * std::sin(a), 0.12 * v, 0.2 * std::cos(a)};
  }
  return pose;
}

ClassFamily random_family(std::uint64_t key, int joints) {
  std::mt19937_64 rng(kFamilySeed + key * 7919u + static_cast<std::uint64_t>(joints));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ClassFamily f;
  f.frequency = kClassFrequency;
  for (int v = 0; v < joints; ++v) {
    f.direction.push_back(unit_vector(rng));
    f.phase.push_back(2.0 * std::numbers::pi * u(rng));
    f.amplitude.push_back(0.08 + 0.12 * u(rng));
  }
  return f;
}

// Class c depends only on c, the joint count and the separation; two datasets
// with different seeds share the same families. Each family blends a motion
// pattern shared by all classes with a class-specific one.
ClassFamily class_family(int c, int joints, double separation) {
  const ClassFamily shared = random_family(1000003u, joints);
  const ClassFamily own = random_family(static_cast<std::uint64_t>(c), joints);
  ClassFamily f = shared;
  for (std::size_t v = 0; v < static_cast<std::size_t>(joints); ++v) {
    Vec3 d;
    for (std::size_t k = 0; k < 3; ++k) d[k] = (1.0 - separation) * shared.direction[v][k] + separation * own.direction[v][k];
    const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    for (double& x : d) x /= len > 0.0 ? len : 1.0;
    f.direction[v] = d;
    f.phase[v] = shared.phase[v] + separation * (own.phase[v] - shared.phase[v]);
    f.amplitude[v] = (1.0 - separation) * shared.amplitude[v] + separation * own.amplitude[v];
  }
  return f;
}

ClassFamily idle_family(int joints) {
  ClassFamily f = random_family(10007, joints);
  f.frequency = 0.5;
  for (double& a : f.amplitude) a *= 0.25;
  return f;
}

std::array<std::array<double, 3>, 3> rotation_matrix(const Vec3& axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle), k = 1.0 - c;
  const double x = axis[0], y = axis[1], z = axis[2];
  return {{{c + x * x * k, x * y * k - z * s, x * z * k + y * s},
           {y * x * k + z * s, c + y * y * k, y * z * k - x * s},
           {z * x * k - y * s, z * y * k + x * s, c + z * z * k}}};
}

Vec3 rotate_point(const std::array<std::array<double, 3>, 3>& r, const Vec3& p) {
  return {r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2], r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
          r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2]};
}

struct Nuisance {
  std::array<std::array<double, 3>, 3> shear{{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};
  double phase = 0.0;
  double speed = 1.0;
  double amplitude = 1.0;
  std::array<std::array<double, 3>, 3> rotation{};
  Vec3 offset{};
};

Nuisance draw_nuisance(const SynthOptions& o, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  Nuisance z;
  z.phase = o.phase_jitter * u(rng);
  z.speed = 1.0 + o.speed_jitter * u(rng);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j) z.shear[i][j] = o.shear_jitter * u(rng);
  z.amplitude = 1.0 + o.amplitude_jitter * u(rng);
  z.rotation = rotation_matrix({0.0, 1.0, 0.0}, o.rotation_deg * std::numbers::pi / 180.0 * u(rng));
  z.offset = {o.offset_scale * n(rng), o.offset_scale * n(rng), o.offset_scale * n(rng)};
  return z;
}

// Writes frames [t0, t1) of a family's motion into seq for person m.
void write_motion(SkeletonSequence& seq, const ClassFamily& fam, const Nuisance& z, int m, int t0, int t1,
                  const std::vector<Vec3>& rest) {
  const double omega = 2.0 * std::numbers::pi * fam.frequency * z.speed / kReferenceFrames;
  for (int t = t0; t < t1; ++t) {
    for (int v = 0; v < seq.shape.joints; ++v) {
      const auto vi = static_cast<std::size_t>(v);
      const double s = z.amplitude * fam.amplitude[vi] * std::sin(omega * t + fam.phase[vi] + z.phase);
      Vec3 p{rest[vi][0] + s * fam.direction[vi][0] + 0.8 * m, rest[vi][1] + s * fam.direction[vi][1],
             rest[vi][2] + s * fam.direction[vi][2]};
      p = rotate_point(z.rotation, rotate_point(z.shear, p));
      for (int c = 0; c < 3; ++c) seq.at(c, t, v, m) = p[static_cast<std::size_t>(c)] + z.offset[static_cast<std::size_t>(c)];
    }
  }
}

void add_noise(SkeletonSequence& seq, double sigma, std::mt19937_64& rng) {
  if (sigma <= 0.0) return;
  std::normal_distribution<double> n(0.0, sigma);
  for (double& x : seq.data) x += n(rng);
}

std::string padded(const std::string& prefix, int i) {
  std::string num = std::to_string(i);
  return prefix + std::string(num.size() < 6 ? 6 - num.size() : 0, '0') + num;
}

}  // namespace

std::vector<SkeletonSequence> generate_synthetic_dataset(int num_classes, int samples_per_class, int frames,
                                                         int joints, int persons, std::uint64_t seed,
                                                         const SynthOptions& options) {
  if (num_classes < 1 || samples_per_class < 1 || frames < 1 || joints < 1 || persons < 1) {
    throw ArgumentError("synthetic dataset counts must all be >= 1");
  }
  std::mt19937_64 rng(seed);
  const auto rest = rest_pose(joints);
  std::vector<SkeletonSequence> out;
  out.reserve(static_cast<std::size_t>(num_classes * samples_per_class));
  std::vector<ClassFamily> families;
  for (int c = 0; c < num_classes; ++c) families.push_back(class_family(c, joints, options.class_separation));
  int index = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (int i = 0; i < samples_per_class; ++i) {
      SkeletonSequence seq(SkeletonShape{3, frames, joints, persons});
      seq.label = c;
      seq.source_id = padded("s", index++);
      for (int m = 0; m < persons; ++m) {
        const Nuisance z = draw_nuisance(options, rng);
        write_motion(seq, families[static_cast<std::size_t>(c)], z, m, 0, frames, rest);
      }
      add_noise(seq, options.noise, rng);
      out.push_back(std::move(seq));
    }
  }
  return out;
}

std::vector<SkeletonSequence> generate_detection_clips(int num_classes, int num_clips, int frames, int joints,
                                                       std::uint64_t seed, const SynthDetectionOptions& options) {
  if (num_classes < 1 || num_clips < 1 || frames < 1 || joints < 1) {
    throw ArgumentError("detection clip counts must all be >= 1");
  }
  const int needed = options.segments_per_clip * (options.max_segment + 1) + 1;
  if (needed > frames) throw ArgumentError("clip too short for the requested segments");
  std::mt19937_64 rng(seed);
  const auto rest = rest_pose(joints);
  const ClassFamily idle = idle_family(joints);
  std::vector<ClassFamily> families;
  for (int c = 0; c < num_classes; ++c) families.push_back(class_family(c, joints, options.motion.class_separation));

  std::vector<SkeletonSequence> out;
  for (int n = 0; n < num_clips; ++n) {
    SkeletonSequence seq(SkeletonShape{3, frames, joints, 1});
    seq.source_id = padded("clip", n);
    std::vector<int> labels(static_cast<std::size_t>(frames), num_classes);
    const Nuisance z = draw_nuisance(options.motion, rng);
    write_motion(seq, idle, z, 0, 0, frames, rest);

    // Segments are laid out left to right with at least one background frame between them.
    std::uniform_int_distribution<int> len_dist(options.min_segment, options.max_segment);
    std::uniform_int_distribution<int> cls_dist(0, num_classes - 1);
    std::vector<int> lengths;
    int total = 0;
    for (int s = 0; s < options.segments_per_clip; ++s) {
      lengths.push_back(len_dist(rng));
      total += lengths.back();
    }
    int slack = frames - total - options.segments_per_clip;
    int cursor = 1;
    for (int s = 0; s < options.segments_per_clip; ++s) {
      std::uniform_int_distribution<int> gap_dist(0, std::max(0, slack / (options.segments_per_clip - s)));
      const int gap = gap_dist(rng);
      slack -= gap;
      const int start = cursor + gap;
      const int end = start + lengths[static_cast<std::size_t>(s)];
      const int c = cls_dist(rng);
      write_motion(seq, families[static_cast<std::size_t>(c)], z, 0, start, end, rest);
      std::fill(labels.begin() + start, labels.begin() + end, c);
      cursor = end + 1;
    }
    add_noise(seq, options.motion.noise, rng);
    seq.frame_labels = std::move(labels);
    out.push_back(std::move(seq));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Modalities

SkeletonSequence derive_modality(const SkeletonSequence& seq, Modality modality, const SkeletonEdgeSet* edges) {
  if (modality == Modality::kBone && edges == nullptr) throw ArgumentError("bone modality requires an edge set");
  if (modality != Modality::kBone && edges != nullptr) throw ArgumentError("edge set only applies to bone modality");
  SkeletonSequence out = seq;
  const auto& s = seq.shape;
  switch (modality) {
    case Modality::kJoint:
      break;
    case Modality::kBone: {
      edges->validate(s.joints);
      std::fill(out.data.begin(), out.data.end(), 0.0);
      for (auto [child, parent] : edges->edges) {
        for (int c = 0; c < s.channels; ++c)
          for (int t = 0; t < s.frames; ++t)
            for (int m = 0; m < s.persons; ++m)
              out.at(c, t, child, m) = seq.at(c, t, child, m) - seq.at(c, t, parent, m);
      }
      break;
    }
    case Modality::kMotion: {
      for (int c = 0; c < s.channels; ++c)
        for (int t = 0; t < s.frames; ++t)
          for (int v = 0; v < s.joints; ++v)
            for (int m = 0; m < s.persons; ++m)
              out.at(c, t, v, m) = t + 1 < s.frames ? seq.at(c, t + 1, v, m) - seq.at(c, t, v, m) : 0.0;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

AugmentPolicy AugmentPolicy::standard() {
  AugmentPolicy p;
  p.rotation = p.shear = p.temporal_crop = p.jitter = p.joint_dropout = true;
  return p;
}

namespace {

void require_xyz(const SkeletonSequence& seq, const char* what) {
  if (seq.shape.channels != 3) throw ArgumentError(std::string(what) + " requires 3 coordinate channels");
}

SkeletonSequence linear_map(const SkeletonSequence& seq, const std::array<std::array<double, 3>, 3>& a) {
  require_xyz(seq, "spatial transform");
  SkeletonSequence out = seq;
  const auto& s = seq.shape;
  for (int t = 0; t < s.frames; ++t)
    for (int v = 0; v < s.joints; ++v)
      for (int m = 0; m < s.persons; ++m) {
        const Vec3 p{seq.at(0, t, v, m), seq.at(1, t, v, m), seq.at(2, t, v, m)};
        const Vec3 q = rotate_point(a, p);
        for (int c = 0; c < 3; ++c) out.at(c, t, v, m) = q[static_cast<std::size_t>(c)];
      }
  return out;
}

}  // namespace

SkeletonSequence rotate(const SkeletonSequence& seq, const std::array<double, 3>& axis, double angle_rad) {
  const double len = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  if (len == 0.0) throw ArgumentError("rotation axis must be non-zero");
  return linear_map(seq, rotation_matrix({axis[0] / len, axis[1] / len, axis[2] / len}, angle_rad));
}

SkeletonSequence crop_resize(const SkeletonSequence& seq, double start, double length) {
  const auto& s = seq.shape;
  SkeletonSequence out = seq;
  if (s.frames == 1) return out;
  const double last = static_cast<double>(s.frames - 1);
  const double span = length;
  if (start < 0.0 || span < 0.0 || start + span > last + 1e-12) throw ArgumentError("crop window out of range");
  for (int t = 0; t < s.frames; ++t) {
    const double src = start + span * static_cast<double>(t) / last;
    const int lo = std::min(static_cast<int>(std::floor(src)), s.frames - 1);
    const int hi = std::min(lo + 1, s.frames - 1);
    const double w = src - lo;
    for (int c = 0; c < s.channels; ++c)
      for (int v = 0; v < s.joints; ++v)
        for (int m = 0; m < s.persons; ++m) {
          const double a = seq.at(c, lo, v, m);
          out.at(c, t, v, m) = w == 0.0 ? a : a * (1.0 - w) + seq.at(c, hi, v, m) * w;
        }
  }
  return out;
}

SkeletonSequence augment(const SkeletonSequence& seq, const AugmentPolicy& policy, std::mt19937_64& rng) {
  SkeletonSequence out = seq;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  if (policy.temporal_crop && seq.shape.frames > 1) {
    const double last = static_cast<double>(seq.shape.frames - 1);
    const double ratio = policy.crop_min + (policy.crop_max - policy.crop_min) * unit(rng);
    const double span = ratio * last;
    const double start = (last - span) * unit(rng);
    out = crop_resize(out, start, span);
  }
  if (policy.rotation) {
    const Vec3 axis = unit_vector(rng);
    const double angle = policy.rotation_deg * std::numbers::pi / 180.0 * sym(rng);
    out = linear_map(out, rotation_matrix(axis, angle));
  }
  if (policy.shear) {
    std::array<std::array<double, 3>, 3> a{{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (i != j) a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = policy.shear_amount * sym(rng);
    out = linear_map(out, a);
  }
  if (policy.jitter) add_noise(out, policy.jitter_sigma, rng);
  if (policy.joint_dropout && unit(rng) < policy.dropout_p) {
    std::uniform_int_distribution<int> pick(0, seq.shape.joints - 1);
    const int v = pick(rng);
    for (int c = 0; c < seq.shape.channels; ++c)
      for (int t = 0; t < seq.shape.frames; ++t)
        for (int m = 0; m < seq.shape.persons; ++m) out.at(c, t, v, m) = 0.0;
  }
  return out;
}

std::vector<SkeletonSequence> make_views(const SkeletonSequence& seq, int k, const AugmentPolicy& policy,
                                         std::mt19937_64& rng) {
  if (k < 2) throw ArgumentError("at least two views are required");
  std::vector<SkeletonSequence> views;
  views.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) views.push_back(augment(seq, policy, rng));
  return views;
}

// ---------------------------------------------------------------------------
// Domain reshaping

DomainMatrices reshape_domains(const SkeletonSequence& seq) {
  const auto& s = seq.shape;
  DomainMatrices d;
  d.temporal.resize(s.frames, static_cast<Eigen::Index>(s.persons) * s.joints * s.channels);
  d.spatial.resize(static_cast<Eigen::Index>(s.persons) * s.joints, static_cast<Eigen::Index>(s.frames) * s.channels);
  for (int c = 0; c < s.channels; ++c)
    for (int t = 0; t < s.frames; ++t)
      for (int v = 0; v < s.joints; ++v)
        for (int m = 0; m < s.persons; ++m) {
          const double x = seq.at(c, t, v, m);
          const Eigen::Index token = static_cast<Eigen::Index>(m) * s.joints + v;
          d.temporal(t, token * s.channels + c) = x;
          d.spatial(token, static_cast<Eigen::Index>(t) * s.channels + c) = x;
        }
  return d;
}

SkeletonSequence unreshape_temporal(const Matrix& temporal, SkeletonShape s) {
  if (temporal.rows() != s.frames || temporal.cols() != static_cast<Eigen::Index>(s.persons) * s.joints * s.channels) {
    throw ShapeError("temporal matrix does not match the skeleton shape");
  }
  SkeletonSequence out(s);
  for (int c = 0; c < s.channels; ++c)
    for (int t = 0; t < s.frames; ++t)
      for (int v = 0; v < s.joints; ++v)
        for (int m = 0; m < s.persons; ++m)
          out.at(c, t, v, m) = temporal(t, (static_cast<Eigen::Index>(m) * s.joints + v) * s.channels + c);
  return out;
}

SkeletonSequence unreshape_spatial(const Matrix& spatial, SkeletonShape s) {
  if (spatial.rows() != static_cast<Eigen::Index>(s.persons) * s.joints ||
      spatial.cols() != static_cast<Eigen::Index>(s.frames) * s.channels) {
    throw ShapeError("spatial matrix does not match the skeleton shape");
  }
  SkeletonSequence out(s);
  for (int c = 0; c < s.channels; ++c)
    for (int t = 0; t < s.frames; ++t)
      for (int v = 0; v < s.joints; ++v)
        for (int m = 0; m < s.persons; ++m)
          out.at(c, t, v, m) = spatial(static_cast<Eigen::Index>(m) * s.joints + v, static_cast<Eigen::Index>(t) * s.channels + c);
  return out;
}

}  // namespace usdrl

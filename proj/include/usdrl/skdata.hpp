#pragma once

#include "usdrl/params.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace usdrl {

/// Shape of a pose tensor: channels, frames, joints, persons.
struct SkeletonShape {
  int channels = 3;
  int frames = 1;
  int joints = 1;
  int persons = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * frames * joints * persons;
  }
  bool operator==(const SkeletonShape&) const = default;
};

/// A 3D pose sequence stored as a dense [C, T, V, M] tensor in row-major order.
struct SkeletonSequence {
  SkeletonShape shape;
  std::vector<double> data;
  std::optional<int> label;
  std::optional<std::vector<int>> frame_labels;
  std::string source_id;

  SkeletonSequence() = default;
  explicit SkeletonSequence(SkeletonShape s) : shape(s), data(s.size(), 0.0) {}

  std::size_t offset(int c, int t, int v, int m) const {
    return ((static_cast<std::size_t>(c) * shape.frames + t) * shape.joints + v) * shape.persons + m;
  }
  double& at(int c, int t, int v, int m) { return data[offset(c, t, v, m)]; }
  double at(int c, int t, int v, int m) const { return data[offset(c, t, v, m)]; }

  /// Throws ShapeError/ArgumentError when an invariant does not hold.
  void validate() const;
};

/// Parent links over V joints, one (child, parent) pair per non-root joint.
struct SkeletonEdgeSet {
  std::vector<std::pair<int, int>> edges;

  void validate(int joints) const;
  /// The 25-joint NTU RGB+D kinematic tree (0-based).
  static SkeletonEdgeSet ntu25();
  /// Joints 0..V-1 as a single chain rooted at joint 0.
  static SkeletonEdgeSet chain(int joints);
};

enum class Modality { kJoint, kBone, kMotion };

Modality parse_modality(const std::string& name);
std::string to_string(Modality m);

/// Parses the NTU RGB+D `.skeleton` text layout.
SkeletonSequence load_ntu_skeleton(const std::filesystem::path& path);

/// Binary container: "SKEL1", u32 C,T,V,M, label flag byte (+ i32 label when set),
/// float32 payload in (c,t,v,m) order, then an optional frame-label trailer.
void save_skel(const SkeletonSequence& seq, const std::filesystem::path& path);
SkeletonSequence load_skel(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_skel(const SkeletonSequence& seq);
SkeletonSequence decode_skel(const std::vector<std::uint8_t>& bytes, const std::string& source_id = {});

/// Writes one .skel file per sequence named after its source_id.
void save_dataset(const std::vector<SkeletonSequence>& seqs, const std::filesystem::path& dir);
/// Loads every .skel file in dir, sorted by source_id.
std::vector<SkeletonSequence> load_dataset(const std::filesystem::path& dir);

struct SynthOptions {
  double noise = 0.01;           // per-coordinate Gaussian noise
  double phase_jitter = 3.14159;  // uniform half-range of the per-sample phase offset (radians)
  double amplitude_jitter = 0.2;  // per-sample amplitude scale in [1-a, 1+a]
  double speed_jitter = 0.4;      // per-sample tempo scale in [1-s, 1+s]
  double rotation_deg = 30.0;     // per-sample rotation about the vertical axis
  double offset_scale = 0.0;      // per-sample global translation scale
  double shear_jitter = 0.0;      // per-sample shear, off-diagonal entries in [-s, s]
  double class_separation = 1.0;  // 0: every class shares one motion pattern; 1: independent patterns
};

/// One motion family per class: per-joint sinusoidal trajectories at a shared
/// base tempo whose direction, amplitude and phase pattern depend only on the
/// class index. Per-sample nuisance (tempo, phase, amplitude, orientation,
/// noise) depends on seed.
std::vector<SkeletonSequence> generate_synthetic_dataset(int num_classes, int samples_per_class, int frames,
                                                         int joints, int persons, std::uint64_t seed,
                                                         const SynthOptions& options = {});

struct SynthDetectionOptions {
  int segments_per_clip = 2;
  int min_segment = 6;
  int max_segment = 10;
  SynthOptions motion;
};

/// Clips of idle background motion with planted action segments. Frame labels
/// use num_classes as the background index.
std::vector<SkeletonSequence> generate_detection_clips(int num_classes, int num_clips, int frames, int joints,
                                                       std::uint64_t seed, const SynthDetectionOptions& options = {});

SkeletonSequence derive_modality(const SkeletonSequence& seq, Modality modality,
                                 const SkeletonEdgeSet* edges = nullptr);

struct AugmentPolicy {
  bool rotation = false;
  double rotation_deg = 30.0;
  bool shear = false;
  double shear_amount = 0.3;
  bool temporal_crop = false;
  double crop_min = 0.5;
  double crop_max = 1.0;
  bool jitter = false;
  double jitter_sigma = 0.01;
  bool joint_dropout = false;
  double dropout_p = 0.1;

  bool empty() const { return !rotation && !shear && !temporal_crop && !jitter && !joint_dropout; }
  /// Every transform enabled at its default range.
  static AugmentPolicy standard();
};

/// Applies the enabled transforms in the order crop, rotation, shear, jitter, dropout.
SkeletonSequence augment(const SkeletonSequence& seq, const AugmentPolicy& policy, std::mt19937_64& rng);

/// Rotation by an explicit axis-angle, exposed for testing.
SkeletonSequence rotate(const SkeletonSequence& seq, const std::array<double, 3>& axis, double angle_rad);
/// Resamples the continuous frame window [start, start + length] back to T frames
/// with linear interpolation. The full sequence is start 0, length T - 1.
SkeletonSequence crop_resize(const SkeletonSequence& seq, double start, double length);

std::vector<SkeletonSequence> make_views(const SkeletonSequence& seq, int k, const AugmentPolicy& policy,
                                         std::mt19937_64& rng);

/// Temporal-domain [T, M*V*C] and spatial-domain [M*V, T*C] matrices.
struct DomainMatrices {
  Matrix temporal;
  Matrix spatial;
};

DomainMatrices reshape_domains(const SkeletonSequence& seq);
/// Inverse of the temporal reshape.
SkeletonSequence unreshape_temporal(const Matrix& temporal, SkeletonShape shape);
/// Inverse of the spatial reshape.
SkeletonSequence unreshape_spatial(const Matrix& spatial, SkeletonShape shape);

}  // namespace usdrl

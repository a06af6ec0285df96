#pragma once

// Downstream evaluation on top of a pretrained encoder: linear probe, cosine
// kNN retrieval, semi-supervised fine-tuning, frame-wise detection with
// segment mAP, score ensembling and the effective-rank collapse diagnostic.

#include "usdrl/checkpoint.hpp"
#include "usdrl/model.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace usdrl {

struct EvalReport {
  std::string task;
  std::map<std::string, double> metrics;
  std::string config_digest;
  std::string checkpoint_digest;
  /// Task-specific payload (subset ids, warnings, per-class AP, ...).
  Json extra = Json::object();

  Json to_json() const;
  static EvalReport from_json(const Json& j);
  void write(const std::filesystem::path& path) const;
};

std::string config_digest(const ExperimentConfig& config);
/// Digest of the model's checkpoint encoding without optimizer state.
std::string model_digest(const Model& model);

/// Sorted label set of a dataset. Throws ArgumentError on unlabeled sequences.
std::vector<int> label_set(const std::vector<SkeletonSequence>& seqs);

struct ProbeOptions {
  int epochs = 300;  // full-batch optimizer steps
  double lr = 0.05;
  double weight_decay = 0.0;
  int threads = 1;
};

/// Softmax regression on standardized, frozen instance condensed vectors.
/// Test labels must all occur in the training set. test_scores, when given,
/// receives the softmax scores [test size, classes] for ensembling.
EvalReport linear_probe(const Model& model, const std::vector<SkeletonSequence>& train,
                        const std::vector<SkeletonSequence>& test, const ProbeOptions& options = {},
                        Matrix* test_scores = nullptr);

/// Gallery indices of the k most cosine-similar items for every query row,
/// best first. Ties keep the lower gallery index. Zero vectors have similarity 0.
std::vector<std::vector<std::size_t>> cosine_neighbors(const Matrix& gallery, const Matrix& queries, int k);

struct KnnOptions {
  int k = 1;
  std::uint64_t seed = 0;  // label permutation of the baseline
  int threads = 1;
};

/// Metrics: top1, vote@k (majority among the k nearest, ties to the nearer
/// item) and permuted_top1, the same retrieval against shuffled gallery labels.
EvalReport knn_retrieve(const Model& model, const std::vector<SkeletonSequence>& gallery,
                        const std::vector<SkeletonSequence>& queries, const KnnOptions& options = {});

struct FinetuneOptions {
  int epochs = 40;
  int batch_size = 8;
  double lr = 3e-3;
  double weight_decay = 1e-5;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Seeded uniform subset of max(1, round(fraction * n)) indices, ascending.
std::vector<std::size_t> sample_subset(std::size_t n, double fraction, std::uint64_t seed);

/// Fine-tunes encoder and a linear classifier end to end on a labeled subset of
/// train and reports top-1 accuracy on test.
EvalReport semi_supervised_finetune(const Model& model, double fraction, const std::vector<SkeletonSequence>& train,
                                    const std::vector<SkeletonSequence>& test, const FinetuneOptions& options = {});

/// Encoder plus a per-frame linear head on the dense temporal representation.
struct Detector {
  Model model;
  LinearParams head;  // [C_r, num_classes + 1], "detector.weight" / "detector.bias"
  int num_classes = 0;

  int background() const { return num_classes; }
};

/// Adds a zero-initialized head to a copy of model.
Detector attach_detector(const Model& model, int num_classes);

/// Per-frame cross-entropy over every frame of every clip. Clips without
/// frame_labels raise ArgumentError.
Detector finetune_detector(const Model& model, int num_classes, const std::vector<SkeletonSequence>& clips,
                           const FinetuneOptions& options = {});

/// Row-stochastic scores [T, num_classes + 1].
Matrix detect_frames(const Detector& detector, const SkeletonSequence& seq);

void save_detector(const std::filesystem::path& path, const Detector& detector);
Detector load_detector(const std::filesystem::path& path);

struct DetectionSegment {
  int start = 0;  // inclusive
  int end = 0;    // inclusive
  int label = 0;
  double confidence = 1.0;
  std::string video;
};

/// Maximal runs of equal non-background argmax labels. Confidence is the mean
/// probability of the winning class over the run.
std::vector<DetectionSegment> segments_from_frames(const Matrix& scores, int background,
                                                   const std::string& video = {});
/// Ground-truth segments from per-frame labels, confidence 1.
std::vector<DetectionSegment> segments_from_labels(const std::vector<int>& labels, int background,
                                                   const std::string& video = {});

/// Intersection frames over union frames of two inclusive ranges.
double temporal_iou(const DetectionSegment& a, const DetectionSegment& b);

/// Area under the precision-recall curve with all-point interpolation, from
/// true-positive flags in ranked order and the number of ground-truth items.
double average_precision(const std::vector<bool>& true_positive, std::size_t num_ground_truth);

struct MapResult {
  double map_a = 0.0;  // mean over classes, videos pooled
  double map_v = 0.0;  // mean over videos, classes pooled
  std::map<int, double> class_ap;
  std::map<std::string, double> video_ap;
};

/// Greedy matching by descending confidence (ties broken by video, label,
/// start, end): each prediction takes the unmatched ground truth of the same
/// video and class with the highest IoU at or above the threshold.
MapResult compute_map(const std::vector<DetectionSegment>& predictions,
                      const std::vector<DetectionSegment>& ground_truth, double iou_threshold = 0.5);

/// One line per segment: "video_id class start end confidence".
void write_segments(std::ostream& out, const std::vector<DetectionSegment>& segments);

/// Unweighted mean of equally shaped score matrices.
Matrix ensemble_scores(const std::vector<Matrix>& scores);

/// exp of the Shannon entropy of the normalized singular values of the
/// column-centered Z. An all-zero spectrum has rank 0.
double effective_rank(const Matrix& z);

}  // namespace usdrl

#include "usdrl/eval.hpp"

#include "usdrl/error.hpp"
#include "usdrl/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <tuple>

namespace usdrl {

Json EvalReport::to_json() const {
  Json j;
  j["task"] = task;
  j["metrics"] = metrics;
  j["config_digest"] = config_digest;
  j["checkpoint_digest"] = checkpoint_digest;
  j["extra"] = extra;
  return j;
}

EvalReport EvalReport::from_json(const Json& j) {
  EvalReport r;
  r.task = j.at("task").get<std::string>();
  r.metrics = j.at("metrics").get<std::map<std::string, double>>();
  r.config_digest = j.at("config_digest").get<std::string>();
  r.checkpoint_digest = j.at("checkpoint_digest").get<std::string>();
  r.extra = j.value("extra", Json::object());
  return r;
}

void EvalReport::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json().dump(2) << "\n";
}

std::string config_digest(const ExperimentConfig& config) { return digest_text(to_json(config).dump()); }

std::string model_digest(const Model& model) { return digest_bytes(encode_checkpoint(checkpoint_from_model(model))); }

namespace {

EvalReport start_report(const std::string& task, const Model& model) {
  EvalReport r;
  r.task = task;
  r.config_digest = config_digest(model.config);
  r.checkpoint_digest = model_digest(model);
  return r;
}

int label_of(const SkeletonSequence& s) {
  if (!s.label) throw ArgumentError("sequence " + s.source_id + " has no label");
  return *s.label;
}

// Maps labels to dense class indices; test labels must be known.
struct LabelIndex {
  std::vector<int> labels;

  explicit LabelIndex(const std::vector<SkeletonSequence>& train) : labels(label_set(train)) {}
  int classes() const { return static_cast<int>(labels.size()); }
  int index(int label) const {
    auto it = std::lower_bound(labels.begin(), labels.end(), label);
    if (it == labels.end() || *it != label) {
      throw ArgumentError("label set mismatch: label " + std::to_string(label) + " does not occur in training data");
    }
    return static_cast<int>(it - labels.begin());
  }
  std::vector<int> indices(const std::vector<SkeletonSequence>& seqs) const {
    std::vector<int> out;
    out.reserve(seqs.size());
    for (const auto& s : seqs) out.push_back(index(label_of(s)));
    return out;
  }
};

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index best = 0;
    m.row(i).maxCoeff(&best);  // first maximum on ties
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

// Sums per-sample gradients in sample order.
GradientStore merge(const std::vector<GradientStore>& parts, std::size_t n) {
  GradientStore total(n);
  for (const auto& g : parts) total.add(g);
  return total;
}

}  // namespace

std::vector<int> label_set(const std::vector<SkeletonSequence>& seqs) {
  std::set<int> s;
  for (const auto& q : seqs) s.insert(label_of(q));
  return {s.begin(), s.end()};
}

EvalReport linear_probe(const Model& model, const std::vector<SkeletonSequence>& train,
                        const std::vector<SkeletonSequence>& test, const ProbeOptions& options,
                        Matrix* test_scores) {
  if (train.empty() || test.empty()) throw ArgumentError("linear_probe: train and test sets must be non-empty");
  if (options.epochs < 0 || options.lr < 0.0) throw ArgumentError("linear_probe: epochs and lr must be non-negative");
  const LabelIndex index(train);
  const std::vector<int> y_train = index.indices(train);
  const std::vector<int> y_test = index.indices(test);

  Matrix x_train = extract_features(model, to_model_modality(train, model.config), options.threads);
  Matrix x_test = extract_features(model, to_model_modality(test, model.config), options.threads);
  const RowVector mean = x_train.colwise().mean();
  RowVector sd = ((x_train.rowwise() - mean).array().square().colwise().mean()).sqrt().matrix();
  for (Eigen::Index j = 0; j < sd.size(); ++j) sd(j) = sd(j) > 1e-8 ? sd(j) : 1.0;
  auto standardize = [&](Matrix& x) { x = (x.rowwise() - mean).array().rowwise() / sd.array(); };
  standardize(x_train);
  standardize(x_test);

  ParameterSet head;
  const ParamId w = head.add("probe.weight", Matrix::Zero(x_train.cols(), index.classes()));
  const ParamId b = head.add("probe.bias", Matrix::Zero(1, index.classes()), ParamKind::kBias);
  TrainState state;
  for (int e = 0; e < options.epochs; ++e) {
    ad::Tape tape(head);
    ad::Var logits = ad::add_row(ad::matmul(tape.constant(x_train), tape.parameter(w)), tape.parameter(b));
    ad::Var loss = ad::softmax_cross_entropy(logits, y_train);
    tape.backward(loss);
    GradientStore g(head.size());
    tape.collect(g);
    adamw_step(head, g, state, options.lr, options.weight_decay);
  }
  const Matrix logits = (x_test * head[w].value).rowwise() + RowVector(head[b].value.row(0));
  const Matrix train_logits = (x_train * head[w].value).rowwise() + RowVector(head[b].value.row(0));

  if (test_scores != nullptr) *test_scores = ad::softmax_rows(logits);
  EvalReport r = start_report("linear_probe", model);
  r.metrics["top1"] = accuracy(argmax_rows(logits), y_test);
  r.metrics["train_top1"] = accuracy(argmax_rows(train_logits), y_train);
  r.extra["epochs"] = options.epochs;
  r.extra["classes"] = index.labels;
  return r;
}

std::vector<std::vector<std::size_t>> cosine_neighbors(const Matrix& gallery, const Matrix& queries, int k) {
  if (gallery.rows() == 0) throw ArgumentError("knn: gallery is empty");
  if (k < 1) throw ArgumentError("knn: k must be >= 1");
  if (gallery.cols() != queries.cols()) throw ShapeError("knn: gallery and query dimensions differ");
  auto unit = [](const Matrix& m) {
    Matrix u = m;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      const double n = u.row(i).norm();
      if (n > 0.0) u.row(i) /= n;
    }
    return u;
  };
  const Matrix sim = unit(queries) * unit(gallery).transpose();
  const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), static_cast<std::size_t>(gallery.rows()));
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(queries.rows()));
  for (Eigen::Index q = 0; q < sim.rows(); ++q) {
    std::vector<std::size_t> order(static_cast<std::size_t>(gallery.rows()));
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double sa = sim(q, static_cast<Eigen::Index>(a));
                        const double sb = sim(q, static_cast<Eigen::Index>(b));
                        return sa != sb ? sa > sb : a < b;
                      });
    order.resize(keep);
    out[static_cast<std::size_t>(q)] = std::move(order);
  }
  return out;
}

namespace {

int vote(const std::vector<std::size_t>& neighbors, const std::vector<int>& labels) {
  std::map<int, int> counts;
  for (std::size_t i : neighbors) ++counts[labels[i]];
  int best = labels[neighbors.front()];
  for (std::size_t i : neighbors) {
    if (counts[labels[i]] > counts[best]) best = labels[i];
  }
  return best;
}

}  // namespace

EvalReport knn_retrieve(const Model& model, const std::vector<SkeletonSequence>& gallery,
                        const std::vector<SkeletonSequence>& queries, const KnnOptions& options) {
  if (gallery.empty()) throw ArgumentError("knn: gallery is empty");
  std::vector<int> g_labels, q_labels;
  for (const auto& s : gallery) g_labels.push_back(label_of(s));
  for (const auto& s : queries) q_labels.push_back(label_of(s));
  const Matrix g = extract_features(model, to_model_modality(gallery, model.config), options.threads);
  const Matrix q = extract_features(model, to_model_modality(queries, model.config), options.threads);
  const auto neighbors = cosine_neighbors(g, q, options.k);

  std::vector<int> permuted = g_labels;
  std::mt19937_64 rng(options.seed);
  std::shuffle(permuted.begin(), permuted.end(), rng);

  std::vector<int> top1, voted, baseline;
  for (const auto& n : neighbors) {
    top1.push_back(g_labels[n.front()]);
    voted.push_back(vote(n, g_labels));
    baseline.push_back(permuted[n.front()]);
  }
  EvalReport r = start_report("knn_retrieve", model);
  r.metrics["top1"] = accuracy(top1, q_labels);
  r.metrics["vote@" + std::to_string(options.k)] = accuracy(voted, q_labels);
  r.metrics["permuted_top1"] = accuracy(baseline, q_labels);
  r.extra["k"] = options.k;
  return r;
}

std::vector<std::size_t> sample_subset(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ArgumentError("fraction must lie in (0, 1]");
  if (n == 0) throw ArgumentError("cannot sample from an empty dataset");
  const std::size_t m =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(m);
  std::sort(order.begin(), order.end());
  return order;
}

namespace {

// Minibatch AdamW over samples, with loss(tape, i) giving sample i's loss.
// Each sample's gradient is scaled by 1/B and merged in sample order.
void fit(ParameterSet& params, std::size_t n, const FinetuneOptions& options,
         const std::function<ad::Var(ad::Tape&, std::size_t)>& loss) {
  if (options.epochs < 0 || options.batch_size < 1) throw ArgumentError("finetune: invalid epochs or batch size");
  TrainState state;
  std::mt19937_64 rng(options.seed);
  for (int e = 0; e < options.epochs; ++e) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < n; lo += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(options.batch_size));
      const double inv = 1.0 / static_cast<double>(hi - lo);
      std::vector<GradientStore> parts(hi - lo);
      parallel_for(hi - lo, options.threads, [&](std::size_t k) {
        ad::Tape tape(params);
        ad::Var l = ad::scale(loss(tape, order[lo + k]), inv);
        tape.backward(l);
        parts[k] = GradientStore(params.size());
        tape.collect(parts[k]);
      });
      adamw_step(params, merge(parts, params.size()), state, options.lr, options.weight_decay);
      params.round_to_float();
    }
  }
}

}  // namespace

EvalReport semi_supervised_finetune(const Model& model, double fraction, const std::vector<SkeletonSequence>& train,
                                    const std::vector<SkeletonSequence>& test, const FinetuneOptions& options) {
  if (train.empty() || test.empty()) throw ArgumentError("finetune: train and test sets must be non-empty");
  const LabelIndex index(train);
  const std::vector<int> y_test = index.indices(test);
  const std::vector<std::size_t> subset = sample_subset(train.size(), fraction, options.seed);

  std::vector<SkeletonSequence> picked;
  for (std::size_t i : subset) picked.push_back(train[i]);
  const std::vector<int> y_sub = index.indices(picked);
  picked = to_model_modality(picked, model.config);

  Model m = model;
  std::mt19937_64 init(options.seed);
  const LinearParams cls = declare_linear(m.params, "classifier", 2 * m.config.model.repr_dim, index.classes(), 0.0, init);
  auto logits = [&](ad::Tape& tape, const SkeletonSequence& s) {
    return linear(tape, forward_sample(tape, m, s).condensed.instance, cls);
  };
  fit(m.params, picked.size(), options, [&](ad::Tape& tape, std::size_t i) {
    const int y = y_sub[i];
    return ad::softmax_cross_entropy(logits(tape, picked[i]), std::span<const int>(&y, 1));
  });

  const std::vector<SkeletonSequence> test_in = to_model_modality(test, model.config);
  std::vector<int> predicted(test_in.size());
  parallel_for(test_in.size(), options.threads, [&](std::size_t i) {
    ad::Tape tape(m.params);
    predicted[i] = argmax_rows(logits(tape, test_in[i]).value()).front();
  });

  EvalReport r = start_report("semi_supervised_finetune", model);
  r.metrics["top1"] = accuracy(predicted, y_test);
  r.metrics["fraction"] = fraction;
  r.metrics["subset_size"] = static_cast<double>(subset.size());
  Json ids = Json::array();
  for (std::size_t i : subset) ids.push_back(train[i].source_id);
  r.extra["subset_ids"] = ids;
  const std::set<int> present(y_sub.begin(), y_sub.end());
  if (static_cast<int>(present.size()) < index.classes()) {
    r.extra["warning"] = "labeled subset covers " + std::to_string(present.size()) + " of " +
                         std::to_string(index.classes()) + " classes";
  }
  return r;
}

Detector attach_detector(const Model& model, int num_classes) {
  if (num_classes < 1) throw ArgumentError("detector: num_classes must be >= 1");
  Detector d;
  d.model = model;
  d.num_classes = num_classes;
  std::mt19937_64 init(0);
  d.head = declare_linear(d.model.params, "detector", d.model.config.model.repr_dim, num_classes + 1, 0.0, init);
  return d;
}

namespace {

ad::Var frame_logits(ad::Tape& tape, const Detector& d, const SkeletonSequence& seq) {
  return linear(tape, forward_sample(tape, d.model, seq).dense.temporal, d.head);
}

}  // namespace

Detector finetune_detector(const Model& model, int num_classes, const std::vector<SkeletonSequence>& clips,
                           const FinetuneOptions& options) {
  if (clips.empty()) throw ArgumentError("detector: no training clips");
  for (const auto& c : clips) {
    if (!c.frame_labels) throw ArgumentError("detector: clip " + c.source_id + " has no frame labels");
    if (static_cast<int>(c.frame_labels->size()) != c.shape.frames) {
      throw ShapeError("detector: clip " + c.source_id + " has a frame-label count different from T");
    }
    for (int y : *c.frame_labels) {
      if (y < 0 || y > num_classes) throw ArgumentError("detector: frame label out of range in " + c.source_id);
    }
  }
  Detector d = attach_detector(model, num_classes);
  const std::vector<SkeletonSequence> inputs = to_model_modality(clips, model.config);
  fit(d.model.params, inputs.size(), options, [&](ad::Tape& tape, std::size_t i) {
    return ad::softmax_cross_entropy(frame_logits(tape, d, inputs[i]), *clips[i].frame_labels);
  });
  return d;
}

Matrix detect_frames(const Detector& detector, const SkeletonSequence& seq) {
  ad::Tape tape(detector.model.params);
  const auto in = to_model_modality({seq}, detector.model.config);
  return ad::softmax_rows(frame_logits(tape, detector, in.front()).value());
}

void save_detector(const std::filesystem::path& path, const Detector& detector) {
  CheckpointData data = checkpoint_from_model(detector.model);
  data.header["detector"] = {{"num_classes", detector.num_classes}};
  write_checkpoint(path, data);
}

Detector load_detector(const std::filesystem::path& path) {
  CheckpointData data = read_checkpoint(path);
  if (!data.header.contains("detector")) throw FormatError(path.string() + " holds no detector head");
  const int classes = data.header["detector"].at("num_classes").get<int>();
  std::vector<NamedTensor> head;
  std::erase_if(data.tensors, [&](NamedTensor& t) {
    if (t.name.rfind("detector.", 0) != 0) return false;
    head.push_back(std::move(t));
    return true;
  });
  Detector d = attach_detector(model_from_checkpoint(data), classes);
  for (const auto& t : head) {
    const ParamId id = d.model.params.find(t.name);
    if (!id.valid()) throw FormatError("unknown detector tensor " + t.name);
    Parameter& p = d.model.params[id];
    if (p.value.rows() != t.value.rows() || p.value.cols() != t.value.cols()) {
      throw FormatError("detector tensor " + t.name + " has the wrong shape");
    }
    p.value = t.value;
  }
  if (head.size() != 2) throw FormatError("detector head is incomplete");
  return d;
}

std::vector<DetectionSegment> segments_from_frames(const Matrix& scores, int background, const std::string& video) {
  const std::vector<int> labels = argmax_rows(scores);
  std::vector<DetectionSegment> out;
  for (std::size_t t = 0; t < labels.size();) {
    std::size_t e = t;
    while (e + 1 < labels.size() && labels[e + 1] == labels[t]) ++e;
    if (labels[t] != background) {
      double conf = 0.0;
      for (std::size_t i = t; i <= e; ++i) conf += scores(static_cast<Eigen::Index>(i), labels[t]);
      out.push_back({static_cast<int>(t), static_cast<int>(e), labels[t], conf / static_cast<double>(e - t + 1), video});
    }
    t = e + 1;
  }
  return out;
}

std::vector<DetectionSegment> segments_from_labels(const std::vector<int>& labels, int background,
                                                   const std::string& video) {
  Matrix onehot = Matrix::Zero(static_cast<Eigen::Index>(labels.size()),
                               1 + std::max(background, labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end())));
  for (std::size_t t = 0; t < labels.size(); ++t) onehot(static_cast<Eigen::Index>(t), labels[t]) = 1.0;
  return segments_from_frames(onehot, background, video);
}

double temporal_iou(const DetectionSegment& a, const DetectionSegment& b) {
  const int inter = std::min(a.end, b.end) - std::max(a.start, b.start) + 1;
  if (inter <= 0) return 0.0;
  const int uni = (a.end - a.start + 1) + (b.end - b.start + 1) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double average_precision(const std::vector<bool>& true_positive, std::size_t num_ground_truth) {
  if (num_ground_truth == 0) return 0.0;
  const std::size_t n = true_positive.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += true_positive[i];
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_ground_truth);
  }
  // Precision envelope from the right, then sum over recall increments.
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev) * precision[i];
    prev = recall[i];
  }
  return ap;
}

namespace {

// TP flags of the predictions in ranked order against ground truth drawn from
// the same pool.
std::vector<bool> greedy_match(const std::vector<const DetectionSegment*>& ranked,
                               const std::vector<const DetectionSegment*>& truth, double threshold) {
  std::vector<bool> used(truth.size(), false), tp;
  tp.reserve(ranked.size());
  for (const DetectionSegment* p : ranked) {
    std::ptrdiff_t best = -1;
    double best_iou = threshold;
    for (std::size_t g = 0; g < truth.size(); ++g) {
      if (used[g] || truth[g]->video != p->video || truth[g]->label != p->label) continue;
      const double iou = temporal_iou(*p, *truth[g]);
      if (iou >= threshold && (best < 0 || iou > best_iou)) {
        best = static_cast<std::ptrdiff_t>(g);
        best_iou = iou;
      }
    }
    if (best >= 0) used[static_cast<std::size_t>(best)] = true;
    tp.push_back(best >= 0);
  }
  return tp;
}

bool ranks_before(const DetectionSegment* a, const DetectionSegment* b) {
  if (a->confidence != b->confidence) return a->confidence > b->confidence;
  return std::tie(a->video, a->label, a->start, a->end) < std::tie(b->video, b->label, b->start, b->end);
}

template <typename Key>
std::map<Key, double> pooled_ap(const std::vector<DetectionSegment>& predictions,
                                const std::vector<DetectionSegment>& ground_truth, double threshold,
                                Key (*key)(const DetectionSegment&)) {
  std::map<Key, std::pair<std::vector<const DetectionSegment*>, std::vector<const DetectionSegment*>>> pools;
  for (const auto& p : predictions) pools[key(p)].first.push_back(&p);
  for (const auto& g : ground_truth) pools[key(g)].second.push_back(&g);
  std::map<Key, double> out;
  for (auto& [k, pool] : pools) {
    auto& [preds, truth] = pool;
    std::sort(preds.begin(), preds.end(), ranks_before);
    out[k] = average_precision(greedy_match(preds, truth, threshold), truth.size());
  }
  return out;
}

int class_key(const DetectionSegment& s) { return s.label; }
std::string video_key(const DetectionSegment& s) { return s.video; }

template <typename Map>
double mean_of(const Map& m) {
  if (m.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [k, v] : m) s += v;
  return s / static_cast<double>(m.size());
}

}  // namespace

MapResult compute_map(const std::vector<DetectionSegment>& predictions,
                      const std::vector<DetectionSegment>& ground_truth, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ArgumentError("iou_threshold must lie in (0, 1]");
  for (const auto* set : {&predictions, &ground_truth}) {
    for (const auto& s : *set) {
      if (s.start > s.end) throw ArgumentError("segment start exceeds end");
    }
  }
  MapResult r;
  r.class_ap = pooled_ap<int>(predictions, ground_truth, iou_threshold, class_key);
  r.video_ap = pooled_ap<std::string>(predictions, ground_truth, iou_threshold, video_key);
  r.map_a = mean_of(r.class_ap);
  r.map_v = mean_of(r.video_ap);
  return r;
}

void write_segments(std::ostream& out, const std::vector<DetectionSegment>& segments) {
  char buf[64];
  for (const auto& s : segments) {
    std::snprintf(buf, sizeof buf, "%.6f", s.confidence);
    out << (s.video.empty() ? "-" : s.video) << ' ' << s.label << ' ' << s.start << ' ' << s.end << ' ' << buf << '\n';
  }
}

Matrix ensemble_scores(const std::vector<Matrix>& scores) {
  if (scores.empty()) throw ArgumentError("ensemble: no score matrices");
  Matrix sum = Matrix::Zero(scores.front().rows(), scores.front().cols());
  for (const auto& s : scores) {
    if (s.rows() != sum.rows() || s.cols() != sum.cols()) throw ShapeError("ensemble: score shapes differ");
    sum += s;
  }
  return sum / static_cast<double>(scores.size());
}

double effective_rank(const Matrix& z) {
  if (z.rows() < 2) throw ArgumentError("effective_rank: needs at least two rows");
  const Matrix c = z.rowwise() - z.colwise().mean();
  const Eigen::VectorXd s = Eigen::BDCSVD<Matrix>(c).singularValues();
  const double total = s.sum();
  if (!(total > 0.0)) return 0.0;
  double h = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double p = s(i) / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::exp(h);
}

}  // namespace usdrl

#include "helpers.hpp"

#include "usdrl/error.hpp"
#include "usdrl/eval.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>

using namespace usdrl;
namespace fs = std::filesystem;
using testing::bit_equal;
using testing::from_rows;
using testing::gaussian;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig e;
  e.model.frames = 8;
  e.model.joints = 4;
  e.model.embed_dim = 8;
  e.model.repr_dim = 8;
  e.model.proj_dim = 4;
  e.model.num_heads = 2;
  e.model.num_layers = 1;
  return e;
}

std::vector<SkeletonSequence> tiny_data(std::uint64_t seed, int per_class = 4) {
  return generate_synthetic_dataset(3, per_class, 8, 4, 1, seed);
}

DetectionSegment seg(int start, int end, int label, double conf = 1.0, std::string video = "v") {
  return DetectionSegment{start, end, label, conf, std::move(video)};
}

std::vector<SkeletonSequence> short_clips(int classes, int n, int frames, std::uint64_t seed) {
  SynthDetectionOptions o;
  o.segments_per_clip = 1;
  o.min_segment = 2;
  o.max_segment = 4;
  return generate_detection_clips(classes, n, frames, 4, seed, o);
}

oracle::Seg to_oracle(const DetectionSegment& s) { return {s.start, s.end, s.label, s.confidence, s.video}; }

// Reference AP of one pool: predictions ranked by descending confidence, then
// brute-force matching and the oracle AP.
double oracle_pool_ap(std::vector<DetectionSegment> preds, const std::vector<DetectionSegment>& gt, double thr) {
  std::sort(preds.begin(), preds.end(), [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
  std::vector<oracle::Seg> rp, rg;
  for (const auto& p : preds) rp.push_back(to_oracle(p));
  for (const auto& g : gt) rg.push_back(to_oracle(g));
  return oracle::ap(oracle::brute_force_tp(rp, rg, thr), gt.size());
}

Matrix one_hot_scores(const std::vector<int>& labels, int classes) {
  Matrix s = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t t = 0; t < labels.size(); ++t) s(Eigen::Index(t), labels[t]) = 1.0;
  return s;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("probe memorizes a single sample without touching the encoder") {
    const Model m = build_model(tiny_config());
    const ParameterSet before = m.params;
    const auto data = tiny_data(1);
    const auto r = linear_probe(m, {data[0]}, {data[0]});
    CHECK(r.metrics.at("top1") == 1.0);
    CHECK(r.task == "linear_probe");
    CHECK(m.params.bitwise_equal(before));

    ProbeOptions quick;
    quick.epochs = 50;
    const auto full = linear_probe(m, data, data, quick);
    CHECK(full.metrics.at("top1") >= 0.0);
    CHECK(full.metrics.at("top1") <= 1.0);
    CHECK(m.params.bitwise_equal(before));
  }

  TEST_CASE("probe rejects test labels unseen in training") {
    const Model m = build_model(tiny_config());
    auto data = tiny_data(2);
    std::vector<SkeletonSequence> train, test;
    for (const auto& s : data) (*s.label == 2 ? test : train).push_back(s);
    CHECK_THROWS_AS(linear_probe(m, train, test), ArgumentError);
    auto unlabeled = data;
    unlabeled[0].label.reset();
    CHECK_THROWS_AS(label_set(unlabeled), ArgumentError);
    CHECK(label_set(data) == std::vector<int>{0, 1, 2});
  }

  TEST_CASE("probe scores are row-stochastic") {
    const Model m = build_model(tiny_config());
    const auto data = tiny_data(3);
    Matrix scores;
    ProbeOptions quick;
    quick.epochs = 20;
    linear_probe(m, data, data, quick, &scores);
    CHECK(scores.rows() == static_cast<Eigen::Index>(data.size()));
    CHECK(scores.cols() == 3);
    for (Eigen::Index i = 0; i < scores.rows(); ++i) CHECK(scores.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
  }

  TEST_CASE("cosine neighbours: identity, scale invariance, ties, errors") {
    const Matrix g = gaussian(6, 5, 4);
    const auto self = cosine_neighbors(g, g, 1);
    for (std::size_t i = 0; i < 6; ++i) CHECK(self[i][0] == i);

    const Matrix q = gaussian(4, 5, 5);
    const auto base = cosine_neighbors(g, q, 6);
    CHECK(cosine_neighbors(3.0 * g, q, 6) == base);
    Matrix scaled = g;
    for (Eigen::Index i = 0; i < scaled.rows(); ++i) scaled.row(i) *= 0.5 + double(i);
    CHECK(cosine_neighbors(scaled, q, 6) == base);

    const Matrix twins = from_rows({{1, 0}, {2, 0}, {0, 1}});
    CHECK(cosine_neighbors(twins, from_rows({{5, 0}}), 2)[0] == std::vector<std::size_t>{0, 1});
    CHECK(cosine_neighbors(from_rows({{0, 0}, {1, 1}}), from_rows({{-1, -1}}), 2)[0] ==
          std::vector<std::size_t>{0, 1});
    CHECK(cosine_neighbors(g, q, 100)[0].size() == 6);

    CHECK_THROWS_AS(cosine_neighbors(Matrix(0, 5), q, 1), ArgumentError);
    CHECK_THROWS_AS(cosine_neighbors(g, q, 0), ArgumentError);
  }

  TEST_CASE("kNN retrieval reports accuracy and a permuted baseline") {
    const Model m = build_model(tiny_config());
    const auto data = tiny_data(6);
    const auto r = knn_retrieve(m, data, data);
    CHECK(r.metrics.at("top1") == 1.0);
    CHECK(r.metrics.count("permuted_top1") == 1);
    CHECK(r.metrics.count("vote@1") == 1);
    CHECK_THROWS_AS(knn_retrieve(m, {}, data), ArgumentError);
  }

  TEST_CASE("subset sampling") {
    const auto a = sample_subset(50, 0.1, 9), b = sample_subset(50, 0.1, 9);
    CHECK(a == b);
    CHECK(a.size() == 5);
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == a.size());
    CHECK(sample_subset(50, 0.1, 10) != a);
    std::vector<std::size_t> all(50);
    std::iota(all.begin(), all.end(), std::size_t{0});
    CHECK(sample_subset(50, 1.0, 3) == all);
    CHECK(sample_subset(50, 0.001, 3).size() == 1);
    CHECK_THROWS_AS(sample_subset(50, 0.0, 3), ArgumentError);
    CHECK_THROWS_AS(sample_subset(50, 1.5, 3), ArgumentError);
  }

  TEST_CASE("fine-tuning reports subset ids and warns about missing classes") {
    const Model m = build_model(tiny_config());
    const auto data = tiny_data(7);
    FinetuneOptions quick;
    quick.epochs = 2;
    const auto r = semi_supervised_finetune(m, 0.1, data, data, quick);
    CHECK(r.metrics.at("subset_size") == 1.0);
    CHECK(r.extra.at("subset_ids").size() == 1);
    CHECK(r.extra.contains("warning"));
    const auto again = semi_supervised_finetune(m, 0.1, data, data, quick);
    CHECK(again.metrics == r.metrics);
    CHECK(again.extra == r.extra);

    const auto full = semi_supervised_finetune(m, 1.0, data, data, quick);
    CHECK(full.metrics.at("subset_size") == double(data.size()));
    CHECK(!full.extra.contains("warning"));
  }

  TEST_CASE("detection scores are row-stochastic and uniform for a zero head") {
    const auto cfg = tiny_config();
    const Detector d = attach_detector(build_model(cfg), 3);
    CHECK(d.background() == 3);
    auto clip = short_clips(3, 1, 8, 1)[0];
    const Matrix s = detect_frames(d, clip);
    CHECK(s.rows() == 8);
    CHECK(s.cols() == 4);
    CHECK(s.isApprox(Matrix::Constant(8, 4, 0.25), 1e-12));

    ExperimentConfig longer = cfg;
    longer.model.frames = 16;
    Detector trained = attach_detector(build_model(longer), 3);
    trained.model.params[trained.head.weight].value = gaussian(8, 4, 8);
    const Matrix t = detect_frames(trained, short_clips(3, 1, 16, 2)[0]);
    CHECK(t.rows() == 16);
    for (Eigen::Index i = 0; i < t.rows(); ++i) CHECK(t.row(i).sum() == doctest::Approx(1.0).epsilon(1e-5));
  }

  TEST_CASE("detector fine-tuning needs frame labels") {
    const Model m = build_model(tiny_config());
    auto clips = short_clips(3, 2, 8, 3);
    FinetuneOptions quick;
    quick.epochs = 1;
    auto missing = clips;
    missing[1].frame_labels.reset();
    CHECK_THROWS_AS(finetune_detector(m, 3, missing, quick), ArgumentError);
    auto wrong = clips;
    wrong[0].frame_labels->pop_back();
    CHECK_THROWS(finetune_detector(m, 3, wrong, quick));
    CHECK_NOTHROW(finetune_detector(m, 3, clips, quick));
  }

  TEST_CASE("detector save and load round-trip") {
    Detector d = attach_detector(build_model(tiny_config()), 2);
    d.model.params[d.head.weight].value = gaussian(8, 3, 9).cast<float>().cast<double>();
    const fs::path p = fs::temp_directory_path() / "usdrl_eval_detector.bin";
    save_detector(p, d);
    const Detector back = load_detector(p);
    CHECK(back.num_classes == 2);
    const auto clip = short_clips(2, 1, 8, 4)[0];
    CHECK(bit_equal(detect_frames(back, clip), detect_frames(d, clip)));
    fs::remove(p);
  }

  TEST_CASE("segments from frame labels") {
    // A = 0, B = 1 is the background.
    auto s = segments_from_labels({1, 0, 0, 1}, 1);
    REQUIRE(s.size() == 1);
    CHECK(s[0].start == 1);
    CHECK(s[0].end == 2);
    CHECK(s[0].label == 0);
    CHECK(segments_from_labels({1, 1, 1}, 1).empty());
    s = segments_from_labels({0, 0, 1, 0}, 1);
    REQUIRE(s.size() == 2);
    CHECK((s[0].start == 0 && s[0].end == 1));
    CHECK((s[1].start == 3 && s[1].end == 3));

    const Matrix scores = from_rows({{0.9, 0.1}, {0.7, 0.3}, {0.2, 0.8}, {0.6, 0.4}});
    const auto f = segments_from_frames(scores, 1, "clip");
    REQUIRE(f.size() == 2);
    CHECK(f[0].confidence == doctest::Approx(0.8));
    CHECK(f[1].confidence == doctest::Approx(0.6));
    CHECK(f[0].video == "clip");
  }

  TEST_CASE("segments cover every foreground frame exactly once") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> lab(0, 3);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<int> labels(20);
      for (int& l : labels) l = lab(rng);
      const auto segs = segments_from_frames(one_hot_scores(labels, 4), 3);
      std::vector<int> cover(20, 0);
      for (const auto& s : segs) {
        CHECK(s.label != 3);
        CHECK(s.start <= s.end);
        for (int t = s.start; t <= s.end; ++t) {
          ++cover[std::size_t(t)];
          CHECK(labels[std::size_t(t)] == s.label);
        }
      }
      for (std::size_t t = 0; t < 20; ++t) CHECK(cover[t] == (labels[t] == 3 ? 0 : 1));
    }
  }

  TEST_CASE("temporal IoU and average precision") {
    CHECK(temporal_iou(seg(10, 20, 0), seg(10, 20, 0)) == 1.0);
    CHECK(temporal_iou(seg(0, 9, 0), seg(10, 20, 0)) == 0.0);
    CHECK(temporal_iou(seg(0, 9, 0), seg(5, 14, 0)) == doctest::Approx(5.0 / 15.0));
    CHECK(average_precision({true, false}, 1) == 1.0);
    CHECK(average_precision({false, true}, 1) == doctest::Approx(0.5));
    CHECK(average_precision({true, false, true}, 2) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
    CHECK(average_precision({}, 3) == 0.0);
    CHECK(average_precision({true}, 0) == 0.0);
  }

  TEST_CASE("mAP examples") {
    auto r = compute_map({seg(10, 20, 0, 0.9)}, {seg(10, 20, 0)});
    CHECK(r.map_a == 1.0);
    CHECK(r.map_v == 1.0);
    r = compute_map({seg(0, 9, 0, 0.9)}, {seg(10, 20, 0)});
    CHECK(r.map_a == 0.0);
    CHECK(r.map_v == 0.0);
    r = compute_map({seg(0, 9, 0, 0.9), seg(0, 9, 0, 0.8)}, {seg(0, 9, 0)});
    CHECK(r.map_a == 1.0);
    // A class predicted but absent from the ground truth scores AP 0.
    r = compute_map({seg(0, 9, 0, 0.9), seg(0, 9, 1, 0.5)}, {seg(0, 9, 0)});
    CHECK(r.class_ap.at(1) == 0.0);
    CHECK(r.map_a == doctest::Approx(0.5));
    CHECK(compute_map({}, {}).map_a == 0.0);
    CHECK_THROWS_AS(compute_map({}, {}, 0.0), ArgumentError);
    CHECK_THROWS_AS(compute_map({seg(5, 4, 0)}, {}), ArgumentError);
  }

  TEST_CASE("mAP per video pools every class of the clip") {
    const std::vector<DetectionSegment> gt{seg(0, 9, 0, 1, "a"), seg(10, 19, 1, 1, "a"), seg(0, 9, 1, 1, "b")};
    const std::vector<DetectionSegment> pred{seg(0, 9, 0, 0.9, "a"), seg(0, 9, 0, 0.8, "b")};
    const auto r = compute_map(pred, gt);
    CHECK(r.video_ap.at("a") == doctest::Approx(0.5));
    CHECK(r.video_ap.at("b") == 0.0);
    CHECK(r.map_v == doctest::Approx(0.25));
    CHECK(r.class_ap.at(0) == 1.0);
    CHECK(r.class_ap.at(1) == 0.0);
  }

  TEST_CASE("greedy matching agrees with brute force on random instances") {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int> start(0, 15), len(0, 6), lab(0, 1), count(0, 5), vid(0, 1);
    std::uniform_real_distribution<double> conf(0.0, 1.0);
    for (int trial = 0; trial < 300; ++trial) {
      auto draw = [&](int n, bool with_conf) {
        std::vector<DetectionSegment> out;
        for (int i = 0; i < n; ++i) {
          const int s = start(rng);
          out.push_back(seg(s, s + len(rng), lab(rng), with_conf ? conf(rng) : 1.0, vid(rng) ? "x" : "y"));
        }
        return out;
      };
      const auto preds = draw(count(rng), true), gt = draw(count(rng), false);
      const double thr = trial % 3 == 0 ? 0.3 : 0.5;
      const auto r = compute_map(preds, gt, thr);
      for (const auto& [label, ap] : r.class_ap) {
        std::vector<DetectionSegment> p, g;
        for (const auto& s : preds)
          if (s.label == label) p.push_back(s);
        for (const auto& s : gt)
          if (s.label == label) g.push_back(s);
        CHECK(ap == doctest::Approx(oracle_pool_ap(p, g, thr)).epsilon(1e-12));
      }
      for (const auto& [video, ap] : r.video_ap) {
        std::vector<DetectionSegment> p, g;
        for (const auto& s : preds)
          if (s.video == video) p.push_back(s);
        for (const auto& s : gt)
          if (s.video == video) g.push_back(s);
        CHECK(ap == doctest::Approx(oracle_pool_ap(p, g, thr)).epsilon(1e-12));
      }
      CHECK(r.map_a >= 0.0);
      CHECK(r.map_a <= 1.0);
      CHECK(r.map_v <= 1.0);

      auto reversed = preds;
      std::reverse(reversed.begin(), reversed.end());
      const auto rr = compute_map(reversed, gt, thr);
      CHECK(rr.map_a == r.map_a);
      CHECK(rr.map_v == r.map_v);

      if (!gt.empty()) {
        // A perfect top-ranked prediction for an unmatched GT never lowers its class AP.
        auto extra = preds;
        extra.push_back(gt[0]);
        extra.back().confidence = 2.0;
        const auto er = compute_map(extra, gt, thr);
        CHECK(er.class_ap.at(gt[0].label) >= r.class_ap.at(gt[0].label) - 1e-12);
      }
    }
  }

  TEST_CASE("segment export format") {
    std::ostringstream out;
    write_segments(out, {seg(3, 7, 2, 0.25, "clip_1"), seg(0, 0, 0, 1.0, "")});
    CHECK(out.str() == "clip_1 2 3 7 0.250000\n- 0 0 0 1.000000\n");
  }

  TEST_CASE("ensembling") {
    const Matrix a = from_rows({{0.7, 0.3}, {0.4, 0.6}});
    CHECK(ensemble_scores({a, a, a}).isApprox(a, 1e-15));
    const Matrix c1 = from_rows({{0.1, 0.8, 0.1}}), c2 = from_rows({{0.1, 0.1, 0.8}});
    const Matrix fused = ensemble_scores({c1, c1, c2});
    Eigen::Index arg = 0;
    fused.row(0).maxCoeff(&arg);
    CHECK(arg == 1);
    CHECK(fused.row(0).sum() == doctest::Approx(1.0).epsilon(1e-5));
    CHECK_THROWS_AS(ensemble_scores({a, c1}), ShapeError);
    CHECK_THROWS_AS(ensemble_scores({}), ArgumentError);
  }

  TEST_CASE("effective rank") {
    // Rank one after centering: rows are multiples of one direction.
    Matrix r1(5, 3);
    for (int i = 0; i < 5; ++i) r1.row(i) = double(i) * from_rows({{1, 2, -1}});
    CHECK(effective_rank(r1) == doctest::Approx(1.0).epsilon(1e-6));
    // Orthogonal centered columns of equal norm: a uniform spectrum.
    const Matrix h = from_rows({{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}});
    CHECK(effective_rank(h) == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(effective_rank(gaussian(256, 16, 13)) > 12.0);
    CHECK(effective_rank(Matrix::Constant(4, 3, 2.0)) == 0.0);
    CHECK_THROWS_AS(effective_rank(Matrix::Ones(1, 3)), ArgumentError);
  }

  TEST_CASE("reports round-trip through JSON") {
    EvalReport r;
    r.task = "knn";
    r.metrics = {{"top1", 0.75}, {"permuted_top1", 0.2}};
    r.config_digest = config_digest(tiny_config());
    r.checkpoint_digest = model_digest(build_model(tiny_config()));
    r.extra["note"] = "x";
    const auto back = EvalReport::from_json(r.to_json());
    CHECK(back.task == r.task);
    CHECK(back.metrics == r.metrics);
    CHECK(back.config_digest == r.config_digest);
    CHECK(back.checkpoint_digest == r.checkpoint_digest);
    CHECK(back.extra == r.extra);
    CHECK(config_digest(tiny_config()) == r.config_digest);
    auto other = tiny_config();
    other.train.lr = 0.5;
    CHECK(config_digest(other) != r.config_digest);
  }
}

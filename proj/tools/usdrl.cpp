// usdrl: command-line front end for synthesis, pretraining, evaluation,
// gradient checks and plots. Exit codes: 0 success, 1 runtime failure,
// 2 argument or configuration error.

#include "usdrl/error.hpp"
#include "usdrl/eval.hpp"
#include "usdrl/fdloss.hpp"
#include "usdrl/gradcheck.hpp"
#include "usdrl/plot.hpp"
#include "usdrl/train.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace usdrl;

namespace {

// Raised for argument problems detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string default_data_dir() {
  const char* env = std::getenv("USDRL_DATA_DIR");
  return env != nullptr ? env : "";
}

// A directory holding train/ (and test/) splits resolves to that split;
// otherwise the directory itself is used.
fs::path split_dir(const std::string& root, const std::string& explicit_dir, const char* split) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (root.empty()) throw UsageError(std::string("no data directory: pass --data or set USDRL_DATA_DIR"));
  const fs::path sub = fs::path(root) / split;
  return fs::is_directory(sub) ? sub : fs::path(root);
}

std::vector<SkeletonSequence> load_split(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("data directory " + dir.string() + " does not exist");
  auto seqs = load_dataset(dir);
  if (seqs.empty()) throw UsageError("no .skel files in " + dir.string());
  return seqs;
}

void echo_config(const fs::path& out, const std::string& command, const Json& options,
                 const ExperimentConfig* experiment) {
  fs::create_directories(out);
  Json j;
  j["command"] = command;
  j["options"] = options;
  if (experiment != nullptr) j["experiment"] = to_json(*experiment);
  std::ofstream(out / "config.json") << j.dump(2) << '\n';
}

Json with(Json base, const Json& extra) {
  base.update(extra);
  return base;
}

void print_report(const EvalReport& r) {
  for (const auto& [name, value] : r.metrics) std::printf("%s %s=%.6f\n", r.task.c_str(), name.c_str(), value);
}

// Flags shared by the evaluation commands.
struct EvalFlags {
  std::vector<std::string> ckpt;
  std::string data = default_data_dir();
  std::string train_dir, test_dir;
  std::string out = "runs/eval";
  std::uint64_t seed = 0;
  int threads = 1;

  void add(CLI::App* app, bool multi_ckpt = false) {
    if (multi_ckpt) {
      app->add_option("--ckpt", ckpt, "Checkpoint(s); several are ensembled")->required()->check(CLI::ExistingFile);
    } else {
      app->add_option("--ckpt", ckpt, "Checkpoint")->required()->expected(1)->check(CLI::ExistingFile);
    }
    app->add_option("--data", data, "Data root with train/ and test/ splits (default $USDRL_DATA_DIR)");
    app->add_option("--train", train_dir, "Explicit training split directory");
    app->add_option("--test", test_dir, "Explicit test split directory");
    app->add_option("--out", out, "Output directory");
    app->add_option("--seed", seed, "Seed");
    app->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  }
  Json to_json() const {
    return {{"ckpt", ckpt}, {"data", data}, {"train", train_dir}, {"test", test_dir},
            {"out", out},   {"seed", seed}, {"threads", threads}};
  }
};

int cmd_synth(const Json& o, bool detection, const fs::path& out) {
  SynthOptions motion;
  motion.class_separation = o["separation"];
  motion.shear_jitter = o["shear"];
  motion.noise = o["noise"];
  const int classes = o["classes"], frames = o["frames"], joints = o["joints"];
  const std::uint64_t seed = o["seed"];
  std::vector<SkeletonSequence> train, test;
  if (detection) {
    SynthDetectionOptions d;
    d.motion = motion;
    train = generate_detection_clips(classes, o["clips"], frames, joints, seed, d);
    test = generate_detection_clips(classes, o["test_clips"], frames, joints, seed + 1, d);
  } else {
    const int persons = o["persons"];
    train = generate_synthetic_dataset(classes, o["per_class"], frames, joints, persons, seed, motion);
    test = generate_synthetic_dataset(classes, o["test_per_class"], frames, joints, persons, seed + 1, motion);
  }
  save_dataset(train, out / "train");
  save_dataset(test, out / "test");
  echo_config(out, "synth", o, nullptr);
  std::printf("synth wrote %zu train and %zu test sequences to %s\n", train.size(), test.size(), out.c_str());
  return 0;
}

int cmd_pretrain(const std::string& config_path, const std::vector<std::string>& overrides,
                 std::optional<std::uint64_t> seed, std::optional<int> threads, const std::string& data,
                 const fs::path& out, const std::string& resume) {
  Json doc = Json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw UsageError("cannot open config " + config_path);
    try {
      doc = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw ConfigError(std::string("config parse error: ") + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  if (seed) {
    apply_override(doc, "model.seed=" + std::to_string(*seed));
    apply_override(doc, "train.seed=" + std::to_string(*seed));
  }
  if (threads) apply_override(doc, "train.threads=" + std::to_string(*threads));
  const ExperimentConfig cfg = experiment_from_json(doc);
  const auto dataset = load_split(split_dir(data, "", "train"));

  PretrainOptions po;
  po.out_dir = out;
  if (!resume.empty()) po.resume = resume;
  const long every = std::max<long>(1, (cfg.train.max_steps > 0 ? cfg.train.max_steps : 100) / 20);
  po.on_step = [&](long step, const LossBreakdown& l, const Model&) {
    if (step % every == 0 || step == 1) std::printf("step %ld loss %.6f\n", step, l.total);
    std::fflush(stdout);
  };
  const PretrainResult r = pretrain(dataset, cfg, po);
  std::printf("pretrain finished after %ld steps; checkpoint %s\n", r.state.step, r.checkpoint->c_str());
  return 0;
}

int cmd_probe(const EvalFlags& f, const ProbeOptions& po) {
  const auto train = load_split(split_dir(f.data, f.train_dir, "train"));
  const auto test = load_split(split_dir(f.data, f.test_dir, "test"));
  const fs::path out = f.out;
  std::vector<Matrix> scores;
  std::vector<EvalReport> reports;
  for (const auto& c : f.ckpt) {
    const Model m = load_model(c);
    Matrix s;
    reports.push_back(linear_probe(m, train, test, po, &s));
    reports.back().checkpoint_digest = digest_file(c);
    scores.push_back(std::move(s));
  }
  echo_config(out, "probe", with(f.to_json(), {{"epochs", po.epochs}, {"lr", po.lr}}), nullptr);
  if (reports.size() == 1) {
    reports.front().write(out / "report.json");
    print_report(reports.front());
    return 0;
  }
  for (std::size_t i = 0; i < reports.size(); ++i) {
    reports[i].write(out / ("report_" + std::to_string(i) + ".json"));
    print_report(reports[i]);
  }
  const Matrix fused = ensemble_scores(scores);
  const auto classes = label_set(train);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < fused.rows(); ++i) {
    Eigen::Index best = 0;
    fused.row(i).maxCoeff(&best);
    hits += classes[static_cast<std::size_t>(best)] == *test[static_cast<std::size_t>(i)].label;
  }
  EvalReport e;
  e.task = "ensemble_probe";
  e.metrics["top1"] = static_cast<double>(hits) / static_cast<double>(test.size());
  std::string digests;
  for (const auto& r : reports) digests += r.checkpoint_digest;
  e.checkpoint_digest = digest_text(digests);
  e.config_digest = reports.front().config_digest;
  e.extra["streams"] = f.ckpt;
  e.write(out / "report.json");
  print_report(e);
  return 0;
}

int cmd_retrieve(const EvalFlags& f, int k) {
  const auto gallery = load_split(split_dir(f.data, f.train_dir, "train"));
  const auto queries = load_split(split_dir(f.data, f.test_dir, "test"));
  const Model m = load_model(f.ckpt.front());
  EvalReport r = knn_retrieve(m, gallery, queries, {k, f.seed, f.threads});
  r.checkpoint_digest = digest_file(f.ckpt.front());
  echo_config(f.out, "retrieve", with(f.to_json(), {{"k", k}}), &m.config);
  r.write(fs::path(f.out) / "report.json");
  print_report(r);
  return 0;
}

int cmd_finetune(const EvalFlags& f, double fraction, FinetuneOptions fo) {
  const auto train = load_split(split_dir(f.data, f.train_dir, "train"));
  const auto test = load_split(split_dir(f.data, f.test_dir, "test"));
  const Model m = load_model(f.ckpt.front());
  fo.seed = f.seed;
  fo.threads = f.threads;
  EvalReport r = semi_supervised_finetune(m, fraction, train, test, fo);
  r.checkpoint_digest = digest_file(f.ckpt.front());
  echo_config(f.out,
              "finetune",
              with(f.to_json(), {{"fraction", fraction}, {"epochs", fo.epochs}, {"lr", fo.lr},
                                  {"batch_size", fo.batch_size}}),
              &m.config);
  r.write(fs::path(f.out) / "report.json");
  if (r.extra.contains("warning")) std::fprintf(stderr, "warning: %s\n", r.extra["warning"].get<std::string>().c_str());
  print_report(r);
  return 0;
}

int cmd_detect(const EvalFlags& f, int classes, double iou, FinetuneOptions fo) {
  const auto train = load_split(split_dir(f.data, f.train_dir, "train"));
  const auto test = load_split(split_dir(f.data, f.test_dir, "test"));
  if (classes <= 0) {
    for (const auto& c : train) {
      if (!c.frame_labels) throw UsageError("clip " + c.source_id + " has no frame labels");
      for (int y : *c.frame_labels) classes = std::max(classes, y);
    }
    if (classes <= 0) throw UsageError("cannot infer the class count; pass --classes");
  }
  const Model m = load_model(f.ckpt.front());
  fo.seed = f.seed;
  fo.threads = f.threads;
  const Detector d = finetune_detector(m, classes, train, fo);
  const fs::path out = f.out;
  echo_config(out, "detect",
              with(f.to_json(), {{"classes", classes}, {"iou", iou}, {"epochs", fo.epochs}, {"lr", fo.lr},
                                  {"batch_size", fo.batch_size}}),
              &m.config);
  save_detector(out / "detector.bin", d);

  std::vector<DetectionSegment> predictions, truth;
  double hits = 0, frames = 0;
  for (const auto& c : test) {
    if (!c.frame_labels) throw UsageError("test clip " + c.source_id + " has no frame labels");
    const Matrix s = detect_frames(d, c);
    auto p = segments_from_frames(s, d.background(), c.source_id);
    auto g = segments_from_labels(*c.frame_labels, d.background(), c.source_id);
    predictions.insert(predictions.end(), p.begin(), p.end());
    truth.insert(truth.end(), g.begin(), g.end());
    for (Eigen::Index t = 0; t < s.rows(); ++t) {
      Eigen::Index best = 0;
      s.row(t).maxCoeff(&best);
      hits += best == (*c.frame_labels)[static_cast<std::size_t>(t)];
      frames += 1;
    }
  }
  const MapResult map = compute_map(predictions, truth, iou);
  std::ofstream(out / "predictions.txt") << [&] {
    std::ostringstream s;
    write_segments(s, predictions);
    return s.str();
  }();
  EvalReport r;
  r.task = "detect";
  r.config_digest = config_digest(m.config);
  r.checkpoint_digest = digest_file(f.ckpt.front());
  r.metrics["mAP_a"] = map.map_a;
  r.metrics["mAP_v"] = map.map_v;
  r.metrics["frame_accuracy"] = frames > 0 ? hits / frames : 0.0;
  r.metrics["iou"] = iou;
  for (const auto& [c, ap] : map.class_ap) r.extra["class_ap"][std::to_string(c)] = ap;
  r.write(out / "report.json");
  print_report(r);
  return 0;
}

int cmd_gradcheck(double tol, std::vector<std::string> components, const std::string& out) {
  if (components.empty()) components = gradient_check_components();
  GradCheckOptions o;
  o.tolerance = tol;
  bool ok = true;
  std::string text;
  for (const auto& c : components) {
    const GradCheckReport r = gradient_check(c, o);
    ok = ok && r.passed();
    text += r.to_string();
  }
  std::cout << text << (ok ? "all components pass\n" : "gradient check FAILED\n");
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "gradcheck.txt") << text;
    echo_config(out, "gradcheck", {{"tol", tol}, {"components", components}}, nullptr);
  }
  return ok ? 0 : 1;
}

int cmd_plot(const std::vector<std::string>& metrics, const std::string& ckpt, const std::string& data,
             const fs::path& out, std::uint64_t seed) {
  if (metrics.empty() && ckpt.empty()) throw UsageError("plot needs --metrics and/or --ckpt");
  fs::create_directories(out);
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    std::ifstream in(metrics[i]);
    if (!in) throw UsageError("cannot open " + metrics[i]);
    const auto series = metric_series(read_metrics(in));
    std::map<std::string, Series> totals, terms;
    for (const auto& [name, s] : series) {
      if (name.size() > 6 && name.substr(name.size() - 6) == "/total") totals[name] = s;
      if (name.rfind("instance/", 0) == 0 && name != "instance/total") terms[name] = s;
    }
    const std::string suffix = metrics.size() > 1 ? "_" + std::to_string(i) : "";
    std::ofstream(out / ("loss" + suffix + ".svg")) << [&] {
      std::ostringstream s;
      write_line_chart_svg(s, totals, "loss per domain: " + metrics[i]);
      return s.str();
    }();
    std::ofstream(out / ("terms" + suffix + ".svg")) << [&] {
      std::ostringstream s;
      write_line_chart_svg(s, terms, "instance-domain terms: " + metrics[i]);
      return s.str();
    }();
  }
  if (!ckpt.empty()) {
    const Model m = load_model(ckpt);
    const auto seqs = to_model_modality(load_split(split_dir(data, "", "train")), m.config);
    std::mt19937_64 rng(seed);
    std::vector<SkeletonSequence> a, b;
    for (const auto& s : seqs) {
      auto v = make_views(s, 2, m.config.augment, rng);
      a.push_back(std::move(v[0]));
      b.push_back(std::move(v[1]));
    }
    auto project_all = [&](const std::vector<SkeletonSequence>& vs) {
      return batch_project(m.params, m.projectors.instance, extract_features(m, vs, m.config.train.threads),
                           NormMode::kEval)
          .z;
    };
    const Matrix za = standardize_columns(project_all(a)), zb = standardize_columns(project_all(b));
    const double n = static_cast<double>(za.rows());
    std::ofstream(out / "xcorr.ppm", std::ios::binary) << [&] {
      std::ostringstream s;
      write_heatmap_ppm(s, za.transpose() * zb / n);
      return s.str();
    }();
    std::ofstream(out / "autocorr.ppm", std::ios::binary) << [&] {
      std::ostringstream s;
      write_heatmap_ppm(s, za.transpose() * za / n);
      return s.str();
    }();
    std::printf("effective rank of instance projections: %.3f of %ld\n", effective_rank(project_all(a)),
                static_cast<long>(za.cols()));
  }
  echo_config(out, "plot", {{"metrics", metrics}, {"ckpt", ckpt}, {"data", data}, {"seed", seed}}, nullptr);
  std::printf("plots written to %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised skeleton representation learning"};
  app.require_subcommand(1);
  int code = 0;

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled dataset or detection clips");
  Json so;
  int s_classes = 5, s_per = 40, s_test_per = 20, s_frames = 32, s_joints = 8, s_persons = 1, s_clips = 60,
      s_test_clips = 20;
  std::uint64_t s_seed = 1;
  double s_sep = 0.3, s_shear = 0.3, s_noise = 0.01;
  bool s_detection = false;
  std::string s_out = default_data_dir();
  synth->add_option("--classes", s_classes, "Number of action classes")->check(CLI::PositiveNumber);
  synth->add_option("--per-class", s_per, "Training sequences per class")->check(CLI::PositiveNumber);
  synth->add_option("--test-per-class", s_test_per, "Test sequences per class")->check(CLI::PositiveNumber);
  synth->add_option("--frames", s_frames, "Frames T")->check(CLI::PositiveNumber);
  synth->add_option("--joints", s_joints, "Joints V")->check(CLI::PositiveNumber);
  synth->add_option("--persons", s_persons, "Persons M")->check(CLI::PositiveNumber);
  synth->add_option("--seed", s_seed, "Generator seed (test split uses seed + 1)");
  synth->add_option("--separation", s_sep, "Class separation in [0, 1]")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--shear", s_shear, "Per-sample shear nuisance")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--noise", s_noise, "Coordinate noise")->check(CLI::NonNegativeNumber);
  synth->add_flag("--detection", s_detection, "Write detection clips with planted segments");
  synth->add_option("--clips", s_clips, "Training clips (detection)")->check(CLI::PositiveNumber);
  synth->add_option("--test-clips", s_test_clips, "Test clips (detection)")->check(CLI::PositiveNumber);
  synth->add_option("--out", s_out, "Output directory (default $USDRL_DATA_DIR)");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Self-supervised pretraining");
  std::string p_config, p_data = default_data_dir(), p_out = "runs/pretrain", p_resume;
  std::vector<std::string> p_overrides;
  std::optional<std::uint64_t> p_seed;
  std::optional<int> p_threads;
  pre->add_option("--config", p_config, "JSON config with model/train/augment/loss sections")
      ->check(CLI::ExistingFile);
  pre->add_option("overrides", p_overrides, "Dotted overrides, e.g. loss.lambda=0.01");
  pre->add_option("--set", p_overrides, "Dotted override (repeatable)");
  pre->add_option("--seed", p_seed, "Sets model.seed and train.seed");
  pre->add_option("--threads", p_threads, "Sets train.threads")->check(CLI::PositiveNumber);
  pre->add_option("--data", p_data, "Data root (default $USDRL_DATA_DIR)");
  pre->add_option("--out", p_out, "Output directory");
  pre->add_option("--resume", p_resume, "Resume from a checkpoint")->check(CLI::ExistingFile);

  // probe
  auto* probe = app.add_subcommand("probe", "Linear probe on the frozen encoder");
  EvalFlags probe_flags;
  probe_flags.out = "runs/probe";
  ProbeOptions probe_opts;
  probe_flags.add(probe, true);
  probe->add_option("--epochs", probe_opts.epochs, "Full-batch optimizer steps")->check(CLI::NonNegativeNumber);
  probe->add_option("--lr", probe_opts.lr, "Learning rate")->check(CLI::NonNegativeNumber);

  // retrieve
  auto* retrieve = app.add_subcommand("retrieve", "Cosine kNN retrieval (gallery = train split, queries = test)");
  EvalFlags retrieve_flags;
  retrieve_flags.out = "runs/retrieve";
  int r_k = 1;
  retrieve_flags.add(retrieve);
  retrieve->add_option("--k", r_k, "Neighbors for the vote metric")->check(CLI::PositiveNumber);

  // finetune
  auto* finetune = app.add_subcommand("finetune", "Semi-supervised fine-tuning on a labeled fraction");
  EvalFlags ft_flags;
  ft_flags.out = "runs/finetune";
  FinetuneOptions ft_opts;
  double ft_fraction = 0.1;
  ft_flags.add(finetune);
  finetune->add_option("--fraction", ft_fraction, "Labeled fraction in (0, 1]")->check(CLI::Range(0.0, 1.0));
  finetune->add_option("--epochs", ft_opts.epochs, "Epochs")->check(CLI::NonNegativeNumber);
  finetune->add_option("--lr", ft_opts.lr, "Learning rate")->check(CLI::NonNegativeNumber);
  finetune->add_option("--batch", ft_opts.batch_size, "Batch size")->check(CLI::PositiveNumber);

  // detect
  auto* detect = app.add_subcommand("detect", "Frame-wise detection fine-tuning and segment mAP");
  EvalFlags det_flags;
  det_flags.out = "runs/detect";
  FinetuneOptions det_opts;
  int d_classes = 0;
  double d_iou = 0.5;
  det_flags.add(detect);
  detect->add_option("--classes", d_classes, "Action classes (default: inferred, background = classes)");
  detect->add_option("--iou", d_iou, "IoU threshold")->check(CLI::Range(0.0, 1.0));
  detect->add_option("--epochs", det_opts.epochs, "Epochs")->check(CLI::NonNegativeNumber);
  detect->add_option("--lr", det_opts.lr, "Learning rate")->check(CLI::NonNegativeNumber);
  detect->add_option("--batch", det_opts.batch_size, "Batch size")->check(CLI::PositiveNumber);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Analytic vs finite-difference gradients; exit 0 iff all pass");
  double g_tol = 1e-4;
  std::vector<std::string> g_components;
  std::string g_out;
  gc->add_option("--tol", g_tol, "Relative error tolerance")->check(CLI::PositiveNumber);
  gc->add_option("--component", g_components, "Component(s) to check (default: all)")
      ->check(CLI::IsMember(gradient_check_components()));
  gc->add_option("--out", g_out, "Optional output directory for the report");

  // plot
  auto* plot = app.add_subcommand("plot", "Loss curves (SVG) and correlation heatmaps (PPM)");
  std::vector<std::string> pl_metrics;
  std::string pl_ckpt, pl_data = default_data_dir(), pl_out = "runs/plot";
  std::uint64_t pl_seed = 0;
  plot->add_option("--metrics", pl_metrics, "metrics.log file(s)")->check(CLI::ExistingFile);
  plot->add_option("--ckpt", pl_ckpt, "Checkpoint for correlation heatmaps")->check(CLI::ExistingFile);
  plot->add_option("--data", pl_data, "Data root for the heatmaps (default $USDRL_DATA_DIR)");
  plot->add_option("--out", pl_out, "Output directory");
  plot->add_option("--seed", pl_seed, "Augmentation seed for the heatmap views");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return 2;
  }

  try {
    if (synth->parsed()) {
      if (s_out.empty()) throw UsageError("synth needs --out or USDRL_DATA_DIR");
      so = {{"classes", s_classes}, {"per_class", s_per},    {"test_per_class", s_test_per},
            {"frames", s_frames},   {"joints", s_joints},    {"persons", s_persons},
            {"seed", s_seed},       {"separation", s_sep},   {"shear", s_shear},
            {"noise", s_noise},     {"clips", s_clips},      {"test_clips", s_test_clips},
            {"detection", s_detection}};
      code = cmd_synth(so, s_detection, s_out);
    } else if (pre->parsed()) {
      code = cmd_pretrain(p_config, p_overrides, p_seed, p_threads, p_data, p_out, p_resume);
    } else if (probe->parsed()) {
      code = cmd_probe(probe_flags, [&] {
        ProbeOptions o = probe_opts;
        o.threads = probe_flags.threads;
        return o;
      }());
    } else if (retrieve->parsed()) {
      code = cmd_retrieve(retrieve_flags, r_k);
    } else if (finetune->parsed()) {
      if (!(ft_fraction > 0.0)) throw UsageError("--fraction must lie in (0, 1]");
      code = cmd_finetune(ft_flags, ft_fraction, ft_opts);
    } else if (detect->parsed()) {
      if (!(d_iou > 0.0)) throw UsageError("--iou must lie in (0, 1]");
      code = cmd_detect(det_flags, d_classes, d_iou, det_opts);
    } else if (gc->parsed()) {
      code = cmd_gradcheck(g_tol, g_components, g_out);
    } else if (plot->parsed()) {
      code = cmd_plot(pl_metrics, pl_ckpt, pl_data, pl_out, pl_seed);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return code;
}

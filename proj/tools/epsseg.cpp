#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>

#include "CLI11.hpp"
#include "json.hpp"

#include "epsseg/checkpoint.hpp"
#include "epsseg/config.hpp"
#include "epsseg/data.hpp"
#include "epsseg/exec.hpp"
#include "epsseg/segment.hpp"
#include "epsseg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace epsseg;

namespace {

// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PipelineResult {
  FitResult fit;
  double test_dice = -1.0;
  std::vector<double> per_image;
};

std::vector<LabeledImage> load_manifest(const DataConfig& d, const std::string& manifest,
                                        bool require_labels = true) {
  return load_images(d.dir, (fs::path(d.dir) / manifest).string(), d.num_classes,
                     require_labels);
}

SparseLabelSet labels_for(const RunConfig& cfg, const std::vector<LabeledImage>& train_imgs) {
  if (!cfg.data.sparse_labels.empty()) return load_sparse_csv(cfg.data.sparse_labels);
  std::vector<std::string> warnings;
  auto s = sample_sparse_labels(train_imgs, cfg.data.budget_fraction, cfg.data.label_seed,
                                cfg.data.stratified, cfg.train.mask_side, &warnings);
  for (const auto& w : warnings) std::cerr << "[warn] " << w << "\n";
  return s;
}

double evaluate_model(const Hvae& model, const std::vector<LabeledImage>& images,
                      const InferenceConfig& inf, std::vector<double>* per_image = nullptr) {
  SegmentOptions so;
  so.stride = inf.stride;
  so.batch_size = inf.batch_size;
  so.apply_mask = inf.apply_mask;
  double acc = 0.0;
  for (const auto& img : images) {
    SegmentationMap seg = segment_image(model, img, so);
    const double d = evaluate(seg, img.labels, model.config().num_classes).mean_dice;
    if (per_image) per_image->push_back(d);
    acc += d;
  }
  return images.empty() ? -1.0 : acc / images.size();
}

PipelineResult run_pipeline(RunConfig cfg, const std::vector<LabeledImage>* train_pre = nullptr,
                            const std::vector<LabeledImage>* test_pre = nullptr) {
  std::vector<LabeledImage> train_local, test_local;
  if (!train_pre) {
    train_local = load_manifest(cfg.data, cfg.data.train_manifest);
    train_pre = &train_local;
  }
  if (!test_pre) {
    test_local = load_manifest(cfg.data, cfg.data.test_manifest);
    test_pre = &test_local;
  }
  SparseLabelSet labels = labels_for(cfg, *train_pre);
  Hvae model(cfg.model, cfg.train.seed);
  Trainer trainer(model, cfg.train);
  PipelineResult r;
  r.fit = trainer.fit(*train_pre, labels, *test_pre);
  r.test_dice = evaluate_model(model, *test_pre, cfg.inference, &r.per_image);
  return r;
}

int cmd_synth(const std::string& out_dir, int classes, int side, int images, int test,
              double noise_std, uint64_t seed) {
  if (test >= images) throw std::invalid_argument("synth: --test must be < --images");
  SynthSpec spec;
  spec.num_classes = classes;
  spec.image_side = side;
  spec.num_images = images;
  spec.noise_std = noise_std;
  spec.seed = seed;
  write_synth_dataset(spec, out_dir);

  std::ofstream tr(fs::path(out_dir) / "manifest_train.txt");
  std::ofstream te(fs::path(out_dir) / "manifest_test.txt");
  for (int i = 0; i < images; ++i) {
    auto& dst = i < images - test ? tr : te;
    dst << "synth_" << i << ".png\tsynth_" << i << "_labels.png\n";
  }
  json j;
  j["dir"] = out_dir;
  j["images"] = images;
  j["test"] = test;
  std::cout << j.dump() << std::endl;
  return 0;
}

int cmd_sample_labels(const RunConfig& cfg, const std::string& out_csv) {
  auto images = load_manifest(cfg.data, cfg.data.train_manifest);
  std::vector<std::string> warnings;
  auto s = sample_sparse_labels(images, cfg.data.budget_fraction, cfg.data.label_seed,
                                cfg.data.stratified, cfg.train.mask_side, &warnings);
  for (const auto& w : warnings) std::cerr << "[warn] " << w << "\n";
  save_sparse_csv(s, out_csv);

  std::vector<int64_t> counts(cfg.data.num_classes, 0);
  for (const auto& e : s.entries) ++counts[e.cls];
  json j;
  j["csv"] = out_csv;
  j["entries"] = s.entries.size();
  j["budget_fraction"] = cfg.data.budget_fraction;
  j["per_class_counts"] = counts;
  std::cout << j.dump() << std::endl;
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  PipelineResult r = run_pipeline(cfg);
  json j;
  j["final_checkpoint"] = r.fit.final_checkpoint;
  j["best_checkpoint"] = r.fit.best_checkpoint;
  j["log"] = r.fit.log_path;
  j["best_val_dice"] = r.fit.best_dice;
  j["test_dice"] = r.test_dice;
  j["incidents"] = r.fit.incidents;
  std::cout << j.dump() << std::endl;
  return 0;
}

int cmd_predict(const std::string& ckpt_path, const RunConfig& cfg,
                const std::string& manifest, const std::string& out_dir, bool overlay) {
  auto loaded = load_checkpoint(ckpt_path);
  auto images = load_images(cfg.data.dir, (fs::path(cfg.data.dir) / manifest).string(),
                            loaded.model->config().num_classes, /*require_labels=*/false);
  fs::create_directories(out_dir);
  SegmentOptions so;
  so.stride = cfg.inference.stride;
  so.batch_size = cfg.inference.batch_size;
  so.apply_mask = cfg.inference.apply_mask;

  json summary;
  double acc = 0.0;
  int n_eval = 0;
  for (const auto& img : images) {
    SegmentationMap seg = segment_image(*loaded.model, img, so);
    const std::string seg_path = (fs::path(out_dir) / (img.id + "_seg.png")).string();
    write_segmentation_png(seg_path, seg);
    if (overlay)
      write_overlay_png((fs::path(out_dir) / (img.id + "_overlay.png")).string(), img, seg);
    json item;
    item["image"] = img.id;
    item["segmentation"] = seg_path;
    if (!img.labels.empty()) {
      EvalReport rep = evaluate(seg, img.labels, loaded.model->config().num_classes);
      item["report"] = json::parse(rep.to_json());
      acc += rep.mean_dice;
      ++n_eval;
      std::ofstream rj(fs::path(out_dir) / (img.id + "_report.json"));
      rj << rep.to_json() << "\n";
    }
    summary["images"].push_back(item);
  }
  if (n_eval > 0) summary["mean_dice"] = acc / n_eval;
  std::ofstream sj(fs::path(out_dir) / "summary.json");
  sj << summary.dump(2) << "\n";
  std::cout << summary.dump() << std::endl;
  return 0;
}

int cmd_eval(const std::string& pred_dir, const RunConfig& cfg, const std::string& manifest) {
  auto images = load_manifest(cfg.data, manifest);
  json out;
  double acc = 0.0;
  for (const auto& img : images) {
    const std::string seg_path = (fs::path(pred_dir) / (img.id + "_seg.png")).string();
    // Segmentation PNGs store raw class ids as 8-bit gray levels.
    cv::Mat m = cv::imread(seg_path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw std::runtime_error("cannot read prediction " + seg_path);
    if (m.type() != CV_8UC1)
      throw std::runtime_error("prediction is not an 8-bit class map: " + seg_path);
    if (m.rows != img.h || m.cols != img.w)
      throw std::runtime_error("prediction/truth shape mismatch for " + img.id);
    SegmentationMap seg;
    seg.h = m.rows;
    seg.w = m.cols;
    seg.labels.resize(static_cast<size_t>(m.rows) * m.cols);
    seg.confidence.assign(seg.labels.size(), 1.0);
    for (int r = 0; r < m.rows; ++r)
      for (int c = 0; c < m.cols; ++c)
        seg.labels[static_cast<size_t>(r) * m.cols + c] = m.at<uint8_t>(r, c);
    EvalReport rep = evaluate(seg, img.labels, cfg.data.num_classes);
    out["images"][img.id] = json::parse(rep.to_json());
    acc += rep.mean_dice;
  }
  out["mean_dice"] = images.empty() ? 0.0 : acc / images.size();
  std::ofstream rj(fs::path(pred_dir) / "eval_report.json");
  rj << out.dump(2) << "\n";
  std::cout << out.dump() << std::endl;
  return 0;
}

int cmd_gradcheck(const std::string& which, int probes, uint64_t seed) {
  Hvae model(gradcheck_model_config(), seed);
  std::vector<GradCheckResult> results;
  if (which == "all") {
    results = grad_check_all(model, probes, seed);
  } else {
    results.push_back(grad_check(model, which, probes, seed));
  }
  bool ok = true;
  json j;
  for (const auto& r : results) {
    std::printf("[%s] %-8s max_rel_err=%.3g checked=%lld\n", r.passed ? "PASS" : "FAIL",
                r.term.c_str(), r.max_rel_err, static_cast<long long>(r.checked));
    for (const auto& f : r.failures) std::printf("        %s\n", f.c_str());
    json item;
    item["term"] = r.term;
    item["max_rel_err"] = r.max_rel_err;
    item["checked"] = r.checked;
    item["passed"] = r.passed;
    j["terms"].push_back(item);
    ok = ok && r.passed;
  }
  std::cout << j.dump() << std::endl;
  if (!ok) throw NumericError("gradient check failed");
  return 0;
}

int cmd_export_prior(const std::string& ckpt_path, const std::string& out_path) {
  auto loaded = load_checkpoint(ckpt_path);
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << loaded.model->prior().to_json() << "\n";
  json j;
  j["prior"] = out_path;
  std::cout << j.dump() << std::endl;
  return 0;
}

int cmd_ablate(const RunConfig& base, const std::string& axis, const std::string& out_csv,
               int seeds) {
  auto train_imgs = load_manifest(base.data, base.data.train_manifest);
  auto test_imgs = load_manifest(base.data, base.data.test_manifest);

  struct Setting {
    std::string name;
    std::function<void(RunConfig&)> apply;
  };
  std::vector<Setting> settings;
  if (axis == "mask_size") {
    for (int side : {1, 3, 5, 9})
      settings.push_back({"mask" + std::to_string(side),
                          [side](RunConfig& c) { c.train.mask_side = side; }});
  } else if (axis == "label_budget") {
    for (double f : {0.0005, 0.0001, 0.00005, 0.000025}) {
      char name[32];
      std::snprintf(name, sizeof(name), "budget%g", f);
      settings.push_back({name, [f](RunConfig& c) { c.data.budget_fraction = f; }});
    }
  } else if (axis == "loss_terms") {
    settings.push_back({"vanilla", [](RunConfig& c) {
                          c.model.use_gmm = false;
                          c.model.use_film = false;
                          c.train.weights.alpha1 = 0;
                          c.train.weights.alpha3 = 0;
                        }});
    settings.push_back({"+GMM", [](RunConfig& c) {
                          c.train.weights.alpha1 = 0;
                          c.train.weights.alpha3 = 0;
                        }});
    settings.push_back({"+CL", [](RunConfig& c) { c.train.weights.alpha1 = 0; }});
    settings.push_back({"+CE(full)", [](RunConfig&) {}});
  } else {
    throw std::invalid_argument("ablate: unknown axis '" + axis +
                                "' (expected mask_size, label_budget or loss_terms)");
  }

  std::ofstream csv(out_csv);
  if (!csv) throw std::runtime_error("cannot write " + out_csv);
  csv << "axis,setting,seeds,mean_dice,dice_by_seed\n";
  json j;
  for (const auto& s : settings) {
    double acc = 0.0;
    std::string by_seed;
    for (int k = 0; k < seeds; ++k) {
      RunConfig cfg = base;
      s.apply(cfg);
      cfg.train.seed = base.train.seed + static_cast<uint64_t>(k);
      cfg.data.label_seed = base.data.label_seed + static_cast<uint64_t>(k);
      cfg.train.out_dir = (fs::path(base.train.out_dir) / ("ablate_" + axis) / s.name /
                           ("seed" + std::to_string(k)))
                              .string();
      PipelineResult r = run_pipeline(cfg, &train_imgs, &test_imgs);
      acc += r.test_dice;
      if (k) by_seed += ";";
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.6f", r.test_dice);
      by_seed += buf;
    }
    const double mean = acc / seeds;
    char line[256];
    std::snprintf(line, sizeof(line), "%s,%s,%d,%.6f,%s", axis.c_str(), s.name.c_str(), seeds,
                  mean, by_seed.c_str());
    csv << line << "\n";
    csv.flush();
    std::printf("[ablate] %-12s mean_dice=%.4f (%s)\n", s.name.c_str(), mean, by_seed.c_str());
    j[s.name] = mean;
  }
  std::cout << j.dump() << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eps-seg: sparsely supervised semantic segmentation of microscopy images"};
  app.require_subcommand(1);

  int threads = 0;
  bool serial = false;
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<uint64_t> global_seed;
  app.add_option("--threads", threads, "OpenMP thread count (0 = default)");
  app.add_flag("--serial", serial, "run kernels on the serial reference path");
  app.add_option("--seed", global_seed, "override all RNG seeds");

  auto add_config_opts = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON configuration file");
    sub->add_option("--set", sets, "override a config key, e.g. --set train.steps=500");
  };

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
  std::string synth_out = "data/synthetic";
  int synth_classes = 3, synth_side = 256, synth_images = 10, synth_test = 2;
  double synth_noise = 0.05;
  uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--classes", synth_classes, "number of classes");
  synth->add_option("--side", synth_side, "image side length");
  synth->add_option("--images", synth_images, "total image count");
  synth->add_option("--test", synth_test, "how many trailing images go to the test manifest");
  synth->add_option("--noise-std", synth_noise, "additive Gaussian noise std");
  synth->add_option("--synth-seed", synth_seed, "generator seed");

  // sample-labels
  auto* sample = app.add_subcommand("sample-labels", "sample a sparse label set under a budget");
  std::optional<double> fraction;
  bool stratified_flag = true;
  std::string sample_out = "labels.csv";
  add_config_opts(sample);
  sample->add_option("--fraction", fraction, "pixel budget fraction in (0,1]");
  sample->add_option("--stratified", stratified_flag, "stratify counts per class");
  sample->add_option("--out", sample_out, "output CSV path");

  // train
  auto* train = app.add_subcommand("train", "train a model from a config");
  add_config_opts(train);

  // predict
  auto* predict = app.add_subcommand("predict", "segment images with a checkpoint");
  std::string ckpt, pred_manifest = "manifest_test.txt", pred_out = "predictions";
  bool overlay = false, inference_mask = false;
  int stride_override = 0;
  predict->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  predict->add_option("--manifest", pred_manifest, "manifest of images to segment");
  predict->add_option("--out", pred_out, "output directory");
  predict->add_option("--stride", stride_override, "center stride (0 = config value)");
  predict->add_flag("--overlay", overlay, "also write color overlays");
  predict->add_flag("--inference-mask", inference_mask, "apply the training mask at inference");
  add_config_opts(predict);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate saved predictions against ground truth");
  std::string eval_pred = "predictions", eval_manifest = "manifest_test.txt";
  eval_cmd->add_option("--pred", eval_pred, "directory with *_seg.png predictions");
  eval_cmd->add_option("--manifest", eval_manifest, "manifest with ground-truth pairs");
  add_config_opts(eval_cmd);

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_loss = "all";
  int gc_probes = 200;
  uint64_t gc_seed = 7;
  gradcheck->add_option("--loss", gc_loss, "inpaint|ce|kl|cl|entropy|all");
  gradcheck->add_option("--probes", gc_probes, "probed coordinates per term");
  gradcheck->add_option("--gc-seed", gc_seed, "probe seed");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "run an ablation sweep");
  std::string axis, ablate_out = "ablation.csv";
  int ablate_seeds = 3;
  ablate->add_option("--axis", axis, "mask_size|label_budget|loss_terms")->required();
  ablate->add_option("--out", ablate_out, "output CSV");
  ablate->add_option("--seeds", ablate_seeds, "seeds per setting");
  add_config_opts(ablate);

  // export-prior
  auto* exprior = app.add_subcommand("export-prior", "dump the mixture prior as JSON");
  std::string prior_out = "prior.json";
  exprior->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  exprior->add_option("--out", prior_out, "output JSON path");

  CLI11_PARSE(app, argc, argv);

  if (threads > 0) set_num_threads(threads);
  set_default_exec(serial ? Exec::serial : Exec::parallel);

  auto fail = [](int code, const std::string& type, const std::string& msg) {
    json e;
    e["error"]["type"] = type;
    e["error"]["message"] = msg;
    std::cerr << e.dump() << std::endl;
    return code;
  };

  try {
    RunConfig cfg = config_path.empty() ? RunConfig::defaults()
                                        : RunConfig::load(config_path, sets);
    if (config_path.empty() && !sets.empty())
      cfg = RunConfig::parse("{}", sets);
    if (global_seed) {
      cfg.train.seed = *global_seed;
      cfg.data.label_seed = *global_seed;
      synth_seed = *global_seed;
      gc_seed = *global_seed;
    }

    if (synth->parsed())
      return cmd_synth(synth_out, synth_classes, synth_side, synth_images, synth_test,
                       synth_noise, synth_seed);
    if (sample->parsed()) {
      if (fraction) {
        if (*fraction <= 0 || *fraction > 1)
          throw ConfigError("--fraction must lie in (0,1]");
        cfg.data.budget_fraction = *fraction;
      }
      cfg.data.stratified = stratified_flag;
      return cmd_sample_labels(cfg, sample_out);
    }
    if (train->parsed()) return cmd_train(cfg);
    if (predict->parsed()) {
      if (stride_override > 0) cfg.inference.stride = stride_override;
      cfg.inference.apply_mask = inference_mask || cfg.inference.apply_mask;
      return cmd_predict(ckpt, cfg, pred_manifest, pred_out, overlay);
    }
    if (eval_cmd->parsed()) return cmd_eval(eval_pred, cfg, eval_manifest);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_loss, gc_probes, gc_seed);
    if (ablate->parsed()) return cmd_ablate(cfg, axis, ablate_out, ablate_seeds);
    if (exprior->parsed()) return cmd_export_prior(ckpt, prior_out);
  } catch (const ConfigError& e) {
    return fail(2, "config", e.what());
  } catch (const NumericError& e) {
    return fail(4, "numeric", e.what());
  } catch (const std::invalid_argument& e) {
    return fail(2, "config", e.what());
  } catch (const std::exception& e) {
    return fail(3, "data", e.what());
  }
  return 0;
}

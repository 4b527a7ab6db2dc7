#include "epsseg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "epsseg/segment.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace epsseg {

using nlohmann::json;

void TrainConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
  if (batch_size < 2) throw std::invalid_argument("TrainConfig: batch_size must be >= 2");
  if (lr <= 0) throw std::invalid_argument("TrainConfig: lr must be positive");
  if (kl_ramp_fraction < 0 || kl_ramp_fraction > 1)
    throw std::invalid_argument("TrainConfig: kl_ramp_fraction must lie in [0,1]");
  if (tau_min <= 0 || tau_min > 1)
    throw std::invalid_argument("TrainConfig: tau_min must lie in (0,1]");
  if (val_stride < 1) throw std::invalid_argument("TrainConfig: val_stride must be >= 1");
  weights.validate();
}

std::string TrainConfig::to_json() const {
  json j;
  j["steps"] = steps;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["lr_min_ratio"] = lr_min_ratio;
  j["cosine_decay"] = cosine_decay;
  j["seed"] = seed;
  j["alpha1"] = weights.alpha1;
  j["alpha2"] = weights.alpha2;
  j["alpha3"] = weights.alpha3;
  j["lambda"] = weights.lambda;
  j["margin"] = weights.margin;
  j["entropy_weight"] = weights.entropy_weight;
  j["tau_min"] = tau_min;
  j["tau_rate"] = tau_rate;
  j["tau_time_scale"] = tau_time_scale;
  j["checkpoint_interval"] = checkpoint_interval;
  j["val_interval"] = val_interval;
  j["kl_ramp_fraction"] = kl_ramp_fraction;
  j["unlabeled_fraction"] = unlabeled_fraction;
  j["mask_side"] = mask_side;
  j["mask_fill"] = mask_fill;
  j["ce_on_softmax"] = ce_on_softmax;
  j["val_stride"] = val_stride;
  j["out_dir"] = out_dir;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& s) {
  json j = json::parse(s);
  TrainConfig c;
  c.steps = j.at("steps").get<int64_t>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lr = j.at("lr").get<double>();
  c.lr_min_ratio = j.at("lr_min_ratio").get<double>();
  c.cosine_decay = j.at("cosine_decay").get<bool>();
  c.seed = j.at("seed").get<uint64_t>();
  c.weights.alpha1 = j.at("alpha1").get<double>();
  c.weights.alpha2 = j.at("alpha2").get<double>();
  c.weights.alpha3 = j.at("alpha3").get<double>();
  c.weights.lambda = j.at("lambda").get<double>();
  c.weights.margin = j.at("margin").get<double>();
  c.weights.entropy_weight = j.at("entropy_weight").get<double>();
  c.tau_min = j.at("tau_min").get<double>();
  c.tau_rate = j.at("tau_rate").get<double>();
  c.tau_time_scale = j.at("tau_time_scale").get<double>();
  c.checkpoint_interval = j.at("checkpoint_interval").get<int64_t>();
  c.val_interval = j.at("val_interval").get<int64_t>();
  c.kl_ramp_fraction = j.at("kl_ramp_fraction").get<double>();
  c.unlabeled_fraction = j.at("unlabeled_fraction").get<double>();
  c.mask_side = j.at("mask_side").get<int>();
  c.mask_fill = j.at("mask_fill").get<double>();
  c.ce_on_softmax = j.at("ce_on_softmax").get<bool>();
  c.val_stride = j.at("val_stride").get<int>();
  c.out_dir = j.at("out_dir").get<std::string>();
  c.validate();
  return c;
}

LossGraphTerms build_loss_graph(Tape& tape, const Hvae& model, const Batch& batch,
                                double tau, uint64_t noise_seed, const LossWeights& w,
                                bool ce_on_softmax, bool grad, uint32_t term_mask,
                                const std::vector<int>* selection_override) {
  LossGraphTerms out;

  Hvae::ForwardOptions opt;
  opt.training = true;
  opt.grad = grad;
  opt.tau = tau;
  opt.noise_seed = noise_seed;
  opt.labels = selection_override ? selection_override : &batch.labels;
  out.fw = model.forward(tape, batch.masked, opt);

  const int L = model.config().num_levels;

  if (term_mask & kTermInpaint)
    out.inpaint = lossops::inpainting(tape, out.fw.x_hat, batch.full, batch.window);
  out.values.inpaint = out.inpaint ? out.inpaint->value[0]
                                   : inpainting_loss(out.fw.x_hat->value, batch.full, batch.window);

  NodePtr y_for_ce = out.fw.y;
  if (ce_on_softmax) y_for_ce = ops::softmax_rows(tape, out.fw.logits);
  if (term_mask & kTermCe) out.ce = lossops::cross_entropy(tape, y_for_ce, batch.labels);
  out.values.ce = out.ce ? out.ce->value[0] : cross_entropy_loss(y_for_ce->value, batch.labels);

  if (term_mask & kTermKl) {
    std::vector<std::pair<double, NodePtr>> terms;
    for (int lv = 0; lv < L; ++lv) {
      const auto& l = out.fw.levels[lv];
      terms.push_back({1.0, lossops::gaussian_kl_mean(tape, l.mu_q, l.sigma_q, l.mu_p, l.sigma_p)});
    }
    out.kl = ops::weighted_sum(tape, terms);
    out.values.kl = out.kl->value[0];
  } else {
    std::vector<BatchGaussians> levels;
    for (int lv = 0; lv < L; ++lv) {
      const auto& l = out.fw.levels[lv];
      levels.push_back({l.mu_q->value, l.sigma_q->value, l.mu_p->value, l.sigma_p->value});
    }
    out.values.kl = kl_hierarchy_loss(levels);
  }

  if (term_mask & kTermCl) {
    std::vector<NodePtr> means;
    for (int lv = 0; lv < L; ++lv) {
      NodePtr mu = out.fw.levels[lv].mu_q;
      means.push_back(mu->value.ndim() == 4 ? ops::global_avg_pool(tape, mu) : mu);
    }
    out.cl = lossops::contrastive(tape, means, batch.labels, w.margin, w.lambda);
    out.values.cl = out.cl->value[0];
  } else {
    std::vector<Tensor> means;
    for (int lv = 0; lv < L; ++lv) means.push_back(out.fw.levels[lv].mu_q->value);
    out.values.cl = contrastive_loss(means, batch.labels, w.margin, w.lambda);
  }

  if (term_mask & kTermEntropy) out.entropy = lossops::entropy(tape, out.fw.y, batch.labels);
  out.values.entropy =
      out.entropy ? out.entropy->value[0] : entropy_loss(out.fw.y->value, batch.labels);

  return out;
}

Trainer::Trainer(Hvae& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
  cfg_.validate();
  opt_ = AdamState::init_for(model_.params());
}

void Trainer::restore(const AdamState& opt, int64_t step, double best_dice) {
  opt_ = opt;
  step_ = step;
  best_dice_ = best_dice;
}

double Trainer::tau_at(int64_t t) const {
  TemperatureSchedule s;
  s.tau_min = cfg_.tau_min;
  s.rate = cfg_.tau_rate;
  s.time_scale = cfg_.tau_time_scale > 0 ? cfg_.tau_time_scale
                                         : static_cast<double>(std::max<int64_t>(cfg_.steps, 1));
  return s.tau(static_cast<double>(t));
}

double Trainer::lr_at(int64_t t) const {
  if (!cfg_.cosine_decay || cfg_.steps <= 1) return cfg_.lr;
  const double lr_min = cfg_.lr * cfg_.lr_min_ratio;
  const double frac = static_cast<double>(t) / static_cast<double>(cfg_.steps);
  return lr_min + 0.5 * (cfg_.lr - lr_min) * (1.0 + std::cos(M_PI * frac));
}

StepResult Trainer::train_step(const Batch& batch) {
  StepResult res;
  res.tau = tau_at(step_);
  res.lr = lr_at(step_);

  // Effective weights: alpha2 ramps linearly over the first fraction of steps.
  LossWeights eff = cfg_.weights;
  if (cfg_.kl_ramp_fraction > 0 && cfg_.steps > 0) {
    const int64_t ramp_steps =
        std::max<int64_t>(1, static_cast<int64_t>(cfg_.kl_ramp_fraction * cfg_.steps));
    if (step_ < ramp_steps)
      eff.alpha2 = cfg_.weights.alpha2 * static_cast<double>(step_ + 1) / ramp_steps;
  }
  res.effective = eff;

  uint32_t mask = kTermInpaint;
  if (eff.alpha1 > 0) mask |= kTermCe;
  if (eff.alpha2 > 0) mask |= kTermKl;
  if (eff.alpha3 > 0) mask |= kTermCl;
  if (eff.entropy_weight > 0) mask |= kTermEntropy;

  const uint64_t noise_seed = mix_seed({cfg_.seed, 0x73746570ULL, static_cast<uint64_t>(step_)});

  Tape tape;
  LossGraphTerms terms;
  try {
    terms = build_loss_graph(tape, model_, batch, res.tau, noise_seed, eff,
                             cfg_.ce_on_softmax, /*grad=*/true, mask);
    res.loss = total_loss(terms.values.inpaint, terms.values.ce, terms.values.kl,
                          terms.values.cl, terms.values.entropy, eff);
  } catch (const std::exception& e) {
    res.applied = false;
    res.incident = e.what();
    ++step_;
    return res;
  }

  std::vector<std::pair<double, NodePtr>> total_terms;
  total_terms.push_back({1.0, terms.inpaint});
  if (terms.ce) total_terms.push_back({eff.alpha1, terms.ce});
  if (terms.kl) total_terms.push_back({eff.alpha2, terms.kl});
  if (terms.cl) total_terms.push_back({eff.alpha3, terms.cl});
  if (terms.entropy) total_terms.push_back({eff.entropy_weight, terms.entropy});
  NodePtr total = ops::weighted_sum(tape, total_terms);

  model_.params().zero_grad();
  tape.backward(total);
  adam_update(res.lr);
  ++step_;
  return res;
}

void Trainer::adam_update(double lr) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++opt_.t;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(opt_.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(opt_.t));
  const auto& params = model_.params().all();
  for (size_t i = 0; i < params.size(); ++i) {
    double* p = params[i]->value.data();
    const double* g = params[i]->grad.data();
    double* m = opt_.m[i].data();
    double* v = opt_.v[i].data();
    const int64_t n = params[i]->value.numel();
    for (int64_t k = 0; k < n; ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double mh = m[k] / c1;
      const double vh = v[k] / c2;
      p[k] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

namespace {

std::string fmt_csv_line(int64_t step, const LossBreakdown& l, double tau, double lr) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                static_cast<long long>(step), l.inpaint, l.ce, l.kl, l.cl, l.entropy,
                l.total, tau, lr);
  return buf;
}

}  // namespace

FitResult Trainer::fit(const std::vector<LabeledImage>& train_images,
                       const SparseLabelSet& labels,
                       const std::vector<LabeledImage>& val_images) {
  fs::create_directories(cfg_.out_dir);
  FitResult result;
  result.log_path = (fs::path(cfg_.out_dir) / "train_log.csv").string();

  std::ofstream log(result.log_path);
  log << "step,inpaint,ce,kl,cl,entropy,total,tau,lr\n";
  std::ofstream val_log(fs::path(cfg_.out_dir) / "val_log.csv");
  val_log << "step,mean_dice\n";
  std::ofstream incidents;

  BatchConfig bc;
  bc.batch_size = cfg_.batch_size;
  bc.unlabeled_fraction = cfg_.unlabeled_fraction;
  bc.patch_side = model_.config().patch_side;
  bc.mask.side = cfg_.mask_side;
  bc.mask.fill_value = cfg_.mask_fill;

  BatchStream stream(train_images, labels, bc, cfg_.seed);
  for (const auto& warn : stream.warnings()) std::cerr << "[warn] " << warn << "\n";
  if (step_ > 0) stream.skip(step_);

  auto save_ckpt = [&](const std::string& name) {
    CheckpointMeta meta;
    meta.step = step_;
    meta.seed = cfg_.seed;
    meta.best_dice = best_dice_;
    meta.train_config_json = cfg_.to_json();
    const std::string path = (fs::path(cfg_.out_dir) / name).string();
    save_checkpoint(path, model_, &opt_, meta);
    return path;
  };

  auto run_validation = [&]() {
    if (val_images.empty()) return;
    SegmentOptions so;
    so.stride = cfg_.val_stride;
    so.batch_size = 128;
    const double dice = mean_dice_over(model_, val_images, so);
    result.val_history.push_back({step_, dice});
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%lld,%.17g", static_cast<long long>(step_), dice);
    val_log << buf << "\n";
    val_log.flush();
    std::cout << "[val] step=" << step_ << " mean_dice=" << dice << std::endl;
    if (dice > best_dice_) {
      best_dice_ = dice;
      result.best_dice = dice;
      result.best_checkpoint = save_ckpt("ckpt_best.bin");
    }
  };

  while (step_ < cfg_.steps) {
    Batch batch = stream.next();
    const int64_t t = step_;
    StepResult res = train_step(batch);
    if (res.applied) {
      log << fmt_csv_line(t, res.loss, res.tau, res.lr) << "\n";
    } else {
      ++result.incidents;
      if (!incidents.is_open())
        incidents.open(fs::path(cfg_.out_dir) / "incidents.log", std::ios::app);
      incidents << "step " << t << ": " << res.incident << "\n";
      incidents.flush();
    }
    if (cfg_.val_interval > 0 && step_ % cfg_.val_interval == 0) run_validation();
    if (cfg_.checkpoint_interval > 0 && step_ % cfg_.checkpoint_interval == 0)
      save_ckpt("ckpt_step" + std::to_string(step_) + ".bin");
  }
  log.flush();

  if (!result.val_history.empty() || (cfg_.val_interval > 0 && !val_images.empty())) {
    if (result.val_history.empty() || result.val_history.back().step != step_)
      run_validation();
  }
  result.final_checkpoint = save_ckpt("ckpt_final.bin");
  if (result.best_checkpoint.empty()) result.best_checkpoint = result.final_checkpoint;
  result.best_dice = best_dice_;
  return result;
}

ModelConfig gradcheck_model_config() {
  ModelConfig mc;
  mc.num_levels = 2;
  mc.channels = {8, 8};
  mc.latent_channels = {4};
  mc.top_latent_dim = 16;
  mc.num_classes = 3;
  mc.patch_side = 17;
  mc.blocks_per_level = 1;
  mc.classifier_hidden = 16;
  return mc;
}

namespace {

Batch make_gradcheck_batch(const ModelConfig& mc, uint64_t seed, int mask_side) {
  Rng rng(mix_seed({seed, 0x67636261746368ULL}));
  const int B = 6;
  const int P = mc.patch_side;
  Batch b;
  b.full = Tensor({B, 1, P, P});
  rng.fill_uniform(b.full, 0.0, 1.0);
  b.window = mask_window(P, mask_side);
  b.masked = b.full.clone();
  for (int i = 0; i < B; ++i)
    for (int r = b.window.r0; r < b.window.r0 + b.window.side; ++r)
      for (int c = b.window.c0; c < b.window.c0 + b.window.side; ++c)
        b.masked.at4(i, 0, r, c) = 0.0;
  // Two unlabeled items plus at least two distinct labels.
  b.labels.assign(B, kNoLabel);
  for (int i = 0; i < B - 2; ++i) b.labels[i] = i % mc.num_classes;
  return b;
}

uint32_t term_bit(const std::string& term) {
  if (term == "inpaint") return kTermInpaint;
  if (term == "ce") return kTermCe;
  if (term == "kl") return kTermKl;
  if (term == "cl") return kTermCl;
  if (term == "entropy") return kTermEntropy;
  throw std::invalid_argument("grad_check: unknown term '" + term + "'");
}

double term_value(const LossGraphTerms& t, uint32_t bit) {
  switch (bit) {
    case kTermInpaint: return t.values.inpaint;
    case kTermCe: return t.values.ce;
    case kTermKl: return t.values.kl;
    case kTermCl: return t.values.cl;
    default: return t.values.entropy;
  }
}

}  // namespace

namespace {

// Spatial mean of each item, then Euclidean distance summed over levels.
std::vector<double> all_pair_distances(const std::vector<Tensor>& level_means, int b) {
  std::vector<double> d(static_cast<size_t>(b) * b, 0.0);
  for (const auto& t : level_means) {
    const int D = t.dim(1);
    std::vector<double> pooled(static_cast<size_t>(b) * D, 0.0);
    if (t.ndim() == 2) {
      for (int64_t i = 0; i < t.numel(); ++i) pooled[i] = t[i];
    } else {
      const int64_t plane = static_cast<int64_t>(t.dim(2)) * t.dim(3);
      for (int i = 0; i < b; ++i)
        for (int c = 0; c < D; ++c) {
          double acc = 0.0;
          const double* p = t.data() + (static_cast<int64_t>(i) * D + c) * plane;
          for (int64_t k = 0; k < plane; ++k) acc += p[k];
          pooled[static_cast<size_t>(i) * D + c] = acc / plane;
        }
    }
    for (int i = 0; i < b; ++i)
      for (int j = i + 1; j < b; ++j) {
        double acc = 0.0;
        for (int k = 0; k < D; ++k) {
          const double diff = pooled[static_cast<size_t>(i) * D + k] -
                              pooled[static_cast<size_t>(j) * D + k];
          acc += diff * diff;
        }
        d[static_cast<size_t>(i) * b + j] += std::sqrt(acc);
        d[static_cast<size_t>(j) * b + i] += std::sqrt(acc);
      }
  }
  return d;
}

}  // namespace

GradCheckResult grad_check(const Hvae& model, const std::string& term, int min_probes,
                           uint64_t seed, double fd_step, double tol) {
  GradCheckResult res;
  res.term = term;
  const uint32_t bit = term_bit(term);

  const ModelConfig& mc = model.config();
  Batch batch = make_gradcheck_batch(mc, seed, 3);
  LossWeights w;
  w.entropy_weight = 1.0;  // so the entropy term is exercised when requested
  const double tau = 0.8;
  const uint64_t noise_seed = mix_seed({seed, 0x6e6f697365ULL});

  // Freeze the component selection at the base point.
  std::vector<int> frozen;
  {
    Tape t0;
    auto t = build_loss_graph(t0, model, batch, tau, noise_seed, w, false, false, 0);
    frozen = t.fw.component;
  }

  // Probes sitting exactly on the hinge d = m are excluded by nudging the
  // margin off any pair distance first (the hinge is not differentiable there).
  res.margin_used = w.margin;
  if (bit == kTermCl) {
    std::vector<Tensor> means;
    {
      Tape t0;
      auto t = build_loss_graph(t0, model, batch, tau, noise_seed, w, false, false, 0, &frozen);
      for (const auto& lv : t.fw.levels) means.push_back(lv.mu_q->value);
    }
    const int b = static_cast<int>(batch.labels.size());
    const std::vector<double> d = all_pair_distances(means, b);
    bool adjusted = true;
    while (adjusted) {
      adjusted = false;
      for (double dist : d)
        if (std::abs(dist - res.margin_used) < 1e-3) {
          res.margin_used += 2e-3;
          adjusted = true;
          break;
        }
    }
  }
  w.margin = res.margin_used;

  // Analytic gradients.
  auto& params = const_cast<Hvae&>(model).params();
  params.zero_grad();
  {
    Tape tape;
    auto terms = build_loss_graph(tape, model, batch, tau, noise_seed, w, false, true, bit, &frozen);
    NodePtr node = bit == kTermInpaint  ? terms.inpaint
                   : bit == kTermCe     ? terms.ce
                   : bit == kTermKl     ? terms.kl
                   : bit == kTermCl     ? terms.cl
                                        : terms.entropy;
    tape.backward(node);
  }
  std::vector<Tensor> analytic;
  for (const auto& p : params.all()) analytic.push_back(p->grad.clone());

  auto eval = [&]() {
    Tape tape;
    auto terms = build_loss_graph(tape, model, batch, tau, noise_seed, w, false, false, bit, &frozen);
    return term_value(terms, bit);
  };

  Rng prng(mix_seed({seed, 0x70726f6265ULL}));
  const auto& plist = params.all();
  const int n_params = static_cast<int>(plist.size());
  for (int k = 0; k < min_probes; ++k) {
    const int pi = k % n_params;
    double* data = plist[pi]->value.data();
    const int64_t ci = prng.uniform_int(static_cast<int>(plist[pi]->value.numel()));
    const double orig = data[ci];
    data[ci] = orig + fd_step;
    const double fp = eval();
    data[ci] = orig - fd_step;
    const double fm = eval();
    data[ci] = orig;
    const double numeric = (fp - fm) / (2.0 * fd_step);
    const double a = analytic[pi][ci];
    const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    res.max_rel_err = std::max(res.max_rel_err, rel);
    ++res.checked;
    if (rel >= tol) {
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%s[%lld]: analytic=%.10g numeric=%.10g rel=%.3g",
                    plist[pi]->name.c_str(), static_cast<long long>(ci), a, numeric, rel);
      res.failures.push_back(buf);
    }
  }
  res.passed = res.failures.empty();
  return res;
}

std::vector<GradCheckResult> grad_check_all(const Hvae& model, int min_probes, uint64_t seed) {
  std::vector<GradCheckResult> out;
  for (const char* term : {"inpaint", "ce", "kl", "cl", "entropy"})
    out.push_back(grad_check(model, term, min_probes, seed));
  return out;
}

}  // namespace epsseg

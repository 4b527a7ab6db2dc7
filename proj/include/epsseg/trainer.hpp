#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "epsseg/checkpoint.hpp"
#include "epsseg/data.hpp"
#include "epsseg/hvae.hpp"
#include "epsseg/losses.hpp"

namespace epsseg {

struct TrainConfig {
  int64_t steps = 2000;
  int batch_size = 16;
  double lr = 3e-4;
  double lr_min_ratio = 0.1;
  bool cosine_decay = true;
  uint64_t seed = 0;
  LossWeights weights;
  double tau_min = 0.5;
  double tau_rate = 0.999;
  double tau_time_scale = 0;  // 0 = spread the decay over all steps
  int64_t checkpoint_interval = 500;
  int64_t val_interval = 250;
  double kl_ramp_fraction = 0.1;  // linear alpha2 ramp over the first fraction
  double unlabeled_fraction = 0.5;
  int mask_side = 3;
  double mask_fill = 0.0;
  bool ce_on_softmax = false;  // cross-entropy on softmax(f) instead of y'
  int val_stride = 8;
  std::string out_dir = "runs/default";

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& s);
};

struct StepResult {
  LossBreakdown loss;
  LossWeights effective;  // alpha2 includes the KL ramp factor
  double tau = 1.0;
  double lr = 0.0;
  bool applied = true;
  std::string incident;
};

struct ValPoint {
  int64_t step = 0;
  double mean_dice = 0.0;
};

struct FitResult {
  std::vector<ValPoint> val_history;
  std::string final_checkpoint, best_checkpoint, log_path;
  double best_dice = -1.0;
  int64_t incidents = 0;
};

// Terms selectable when assembling the loss graph.
enum TermBits : uint32_t {
  kTermInpaint = 1,
  kTermCe = 2,
  kTermKl = 4,
  kTermCl = 8,
  kTermEntropy = 16,
  kTermAll = 31,
};

struct LossGraphTerms {
  NodePtr inpaint, ce, kl, cl, entropy;  // null when not requested
  Hvae::Forward fw;
  LossBreakdown values;  // plain values of all five terms
};

/// Builds one training forward pass plus the requested loss nodes.
/// `selection_override` pins the KL component selection (gradient checking
/// freezes it so finite differences see a fixed function).
LossGraphTerms build_loss_graph(Tape& tape, const Hvae& model, const Batch& batch,
                                double tau, uint64_t noise_seed, const LossWeights& w,
                                bool ce_on_softmax, bool grad, uint32_t term_mask,
                                const std::vector<int>* selection_override = nullptr);

class Trainer {
 public:
  Trainer(Hvae& model, TrainConfig cfg);

  StepResult train_step(const Batch& batch);

  FitResult fit(const std::vector<LabeledImage>& train_images, const SparseLabelSet& labels,
                const std::vector<LabeledImage>& val_images);

  void restore(const AdamState& opt, int64_t step, double best_dice);

  int64_t step() const { return step_; }
  double tau_at(int64_t t) const;
  double lr_at(int64_t t) const;
  const AdamState& opt_state() const { return opt_; }
  Hvae& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  void adam_update(double lr);

  Hvae& model_;
  TrainConfig cfg_;
  AdamState opt_;
  int64_t step_ = 0;
  double best_dice_ = -1.0;
};

struct GradCheckResult {
  std::string term;
  double max_rel_err = 0.0;
  int64_t checked = 0;
  double margin_used = 0.0;
  std::vector<std::string> failures;
  bool passed = false;
};

/// Central finite differences against analytic gradients over a stratified
/// random subset of parameter coordinates.
GradCheckResult grad_check(const Hvae& model, const std::string& term, int min_probes,
                           uint64_t seed, double fd_step = 1e-5, double tol = 1e-4);

std::vector<GradCheckResult> grad_check_all(const Hvae& model, int min_probes, uint64_t seed);

/// Compact model used by the gradient-check CLI and the acceptance suite.
ModelConfig gradcheck_model_config();

}  // namespace epsseg

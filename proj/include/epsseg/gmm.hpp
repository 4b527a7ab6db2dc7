#pragma once

#include <string>
#include <vector>

#include "epsseg/rng.hpp"
#include "epsseg/tensor.hpp"

namespace epsseg {

constexpr int kNoLabel = -1;

/// Fixed per-class mixture prior on the top latent level. Means sit at scaled
/// one-hot anchors so components are well separated and the KL target is
/// stationary during training.
struct GmmPrior {
  Tensor means;    // (C, D)
  Tensor stds;     // (C, D)
  Tensor weights;  // (C)

  int num_components() const { return means.dim(0); }
  int dim() const { return means.dim(1); }

  static GmmPrior build(int num_classes, int latent_dim, double mean_scale = 3.0);

  std::string to_json() const;
};

/// tau = max(tau_min, exp(-rate * t / time_scale)), non-increasing in t.
struct TemperatureSchedule {
  double tau_min = 0.5;
  double rate = 0.999;
  double time_scale = 1.0;

  double tau(double t) const;
};

/// Relaxed categorical sample: softmax((logits + g) / tau), g ~ Gumbel(0,1).
/// Row-wise over a (N, C) logit matrix.
Tensor gumbel_softmax_sample(const Tensor& logits, double tau, Rng& rng);

/// Noise-free assignment used at inference: plain softmax rows.
Tensor infer_assignment(const Tensor& logits);

/// Ground-truth label wins; otherwise argmax of the relaxed sample, ties
/// broken toward the lowest index.
int select_component(const std::vector<double>& y_row, int label);
int argmax_row(const double* row, int n);

}  // namespace epsseg

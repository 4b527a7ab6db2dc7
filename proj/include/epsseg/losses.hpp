#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "epsseg/gmm.hpp"
#include "epsseg/graph.hpp"
#include "epsseg/tensor.hpp"

namespace epsseg {

/// Square mask window inside a patch (row/col of the top-left corner).
struct Window {
  int r0 = 0, c0 = 0, side = 0;
};

struct LossWeights {
  double alpha1 = 1.0;         // cross-entropy
  double alpha2 = 0.1;         // KL hierarchy
  double alpha3 = 0.1;         // contrastive
  double lambda = 0.5;         // positive/negative balance inside CL
  double margin = 5.0;         // hinge margin m
  double entropy_weight = 0.0; // 0 disables the entropy term

  void validate() const;
};

struct LossBreakdown {
  double inpaint = 0, ce = 0, kl = 0, cl = 0, entropy = 0, total = 0;
};

// Log clip used inside CE and entropy; relaxed samples can hit exact zeros.
constexpr double kLogClip = 1e-8;

// ---- Plain (non-graph) loss evaluations; these are the reference
// ---- definitions the graph nodes must agree with.

/// Mean over the batch of the summed squared error inside the mask window.
double inpainting_loss(const Tensor& pred, const Tensor& target, const Window& w);

/// -mean over labeled items of log y[i, label_i]; 0 (flagged) with no labels.
double cross_entropy_loss(const Tensor& y, const std::vector<int>& labels,
                          bool* no_labeled = nullptr);

/// KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2)) summed over all dimensions.
double gaussian_kl(const Tensor& mu_q, const Tensor& sigma_q, const Tensor& mu_p,
                   const Tensor& sigma_p);

/// One hierarchy level of batched Gaussians; shapes all (B, ...).
struct BatchGaussians {
  Tensor mu_q, sigma_q, mu_p, sigma_p;
};

/// Sum over levels of per-level KL, each averaged over the batch and summed
/// over latent dimensions. The caller materializes the top-level prior rows
/// from the selected mixture components.
double kl_hierarchy_loss(const std::vector<BatchGaussians>& levels);

/// Top-level prior rows (B, D) for the selected components.
std::pair<Tensor, Tensor> gmm_component_rows(const GmmPrior& prior,
                                             const std::vector<int>& components);

struct PairMatrices {
  std::vector<uint8_t> pos, neg;  // row-major n x n
  int n = 0;
  int pos_count = 0, neg_count = 0;
};

PairMatrices pair_matrices(const std::vector<int>& labels);

/// lambda * L+ + (1-lambda) * L-.  L+ averages distances over positive pairs;
/// L- sums the hinge (m-d)^2 over negative pairs.  The distance D sums the
/// per-level Euclidean distances of spatially pooled posterior means.
double contrastive_loss(const std::vector<Tensor>& level_means,
                        const std::vector<int>& labels, double margin, double lambda,
                        bool* no_pos = nullptr, bool* no_neg = nullptr);

/// Mean entropy of the relaxed assignments of unlabeled items.
double entropy_loss(const Tensor& y, const std::vector<int>& labels,
                    bool* no_unlabeled = nullptr);

/// Weighted combination; throws (naming the part) on any non-finite input.
LossBreakdown total_loss(double inpaint, double ce, double kl, double cl,
                         double entropy, const LossWeights& w);

// ---- Graph nodes (forward values match the plain functions above).

namespace lossops {

NodePtr inpainting(Tape& t, NodePtr pred, const Tensor& target, const Window& w);
NodePtr cross_entropy(Tape& t, NodePtr y, const std::vector<int>& labels);
NodePtr gaussian_kl_mean(Tape& t, NodePtr mu_q, NodePtr sigma_q, NodePtr mu_p,
                         NodePtr sigma_p);
NodePtr contrastive(Tape& t, const std::vector<NodePtr>& level_means,
                    const std::vector<int>& labels, double margin, double lambda);
NodePtr entropy(Tape& t, NodePtr y, const std::vector<int>& labels);

}  // namespace lossops

}  // namespace epsseg

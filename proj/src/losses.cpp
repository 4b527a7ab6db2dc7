#include "epsseg/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace epsseg {

void LossWeights::validate() const {
  if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0)
    throw std::invalid_argument("LossWeights: alphas must be nonnegative");
  if (lambda < 0 || lambda > 1)
    throw std::invalid_argument("LossWeights: lambda must lie in [0,1]");
  if (margin <= 0) throw std::invalid_argument("LossWeights: margin must be positive");
  if (entropy_weight < 0)
    throw std::invalid_argument("LossWeights: entropy_weight must be nonnegative");
}

namespace {

void check_window(const Tensor& t, const Window& w) {
  if (t.ndim() != 4) throw std::invalid_argument("loss: expected (B,1,P,P) tensor");
  if (w.side < 1 || w.r0 < 0 || w.c0 < 0 || w.r0 + w.side > t.dim(2) ||
      w.c0 + w.side > t.dim(3))
    throw std::invalid_argument("loss: mask window outside patch");
}

inline double kl_term(double mq, double sq, double mp, double sp) {
  const double d = mq - mp;
  return std::log(sp / sq) + (sq * sq + d * d) / (2.0 * sp * sp) - 0.5;
}

}  // namespace

double inpainting_loss(const Tensor& pred, const Tensor& target, const Window& w) {
  if (!pred.same_shape(target))
    throw std::invalid_argument("inpainting_loss: shape mismatch " + pred.shape_str() +
                                " vs " + target.shape_str());
  check_window(pred, w);
  const int B = pred.dim(0);
  if (B < 1) throw std::invalid_argument("inpainting_loss: empty batch");
  double acc = 0.0;
  for (int b = 0; b < B; ++b)
    for (int r = w.r0; r < w.r0 + w.side; ++r)
      for (int c = w.c0; c < w.c0 + w.side; ++c) {
        const double d = pred.at4(b, 0, r, c) - target.at4(b, 0, r, c);
        acc += d * d;
      }
  return acc / B;
}

double cross_entropy_loss(const Tensor& y, const std::vector<int>& labels,
                          bool* no_labeled) {
  const int B = y.dim(0), C = y.dim(1);
  if (static_cast<int>(labels.size()) != B)
    throw std::invalid_argument("cross_entropy_loss: labels/batch size mismatch");
  double acc = 0.0;
  int n = 0;
  for (int i = 0; i < B; ++i) {
    if (labels[i] == kNoLabel) continue;
    if (labels[i] < 0 || labels[i] >= C)
      throw std::invalid_argument("cross_entropy_loss: label out of range");
    acc -= std::log(std::max(y[static_cast<int64_t>(i) * C + labels[i]], kLogClip));
    ++n;
  }
  if (no_labeled) *no_labeled = n == 0;
  return n == 0 ? 0.0 : acc / n;
}

double gaussian_kl(const Tensor& mu_q, const Tensor& sigma_q, const Tensor& mu_p,
                   const Tensor& sigma_p) {
  if (!mu_q.same_shape(sigma_q) || !mu_q.same_shape(mu_p) || !mu_q.same_shape(sigma_p))
    throw std::invalid_argument("gaussian_kl: shape mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < mu_q.numel(); ++i) {
    if (sigma_q[i] <= 0.0 || sigma_p[i] <= 0.0)
      throw std::invalid_argument("gaussian_kl: standard deviations must be positive");
    acc += kl_term(mu_q[i], sigma_q[i], mu_p[i], sigma_p[i]);
  }
  return acc;
}

double kl_hierarchy_loss(const std::vector<BatchGaussians>& levels) {
  if (levels.empty()) throw std::invalid_argument("kl_hierarchy_loss: no levels");
  double acc = 0.0;
  for (const auto& lv : levels) {
    const int B = lv.mu_q.dim(0);
    if (B < 1) throw std::invalid_argument("kl_hierarchy_loss: empty batch");
    acc += gaussian_kl(lv.mu_q, lv.sigma_q, lv.mu_p, lv.sigma_p) / B;
  }
  return acc;
}

std::pair<Tensor, Tensor> gmm_component_rows(const GmmPrior& prior,
                                             const std::vector<int>& components) {
  const int B = static_cast<int>(components.size());
  const int D = prior.dim();
  Tensor mu({B, D}), sigma({B, D});
  for (int i = 0; i < B; ++i) {
    if (components[i] < 0 || components[i] >= prior.num_components())
      throw std::invalid_argument("gmm_component_rows: component out of range");
    const int64_t src = static_cast<int64_t>(components[i]) * D;
    for (int d = 0; d < D; ++d) {
      mu[static_cast<int64_t>(i) * D + d] = prior.means[src + d];
      sigma[static_cast<int64_t>(i) * D + d] = prior.stds[src + d];
    }
  }
  return {mu, sigma};
}

PairMatrices pair_matrices(const std::vector<int>& labels) {
  PairMatrices m;
  m.n = static_cast<int>(labels.size());
  m.pos.assign(static_cast<size_t>(m.n) * m.n, 0);
  m.neg.assign(static_cast<size_t>(m.n) * m.n, 0);
  for (int i = 0; i < m.n; ++i) {
    if (labels[i] == kNoLabel) continue;
    for (int j = 0; j < m.n; ++j) {
      if (i == j || labels[j] == kNoLabel) continue;
      if (labels[i] == labels[j]) {
        m.pos[static_cast<size_t>(i) * m.n + j] = 1;
        ++m.pos_count;
      } else {
        m.neg[static_cast<size_t>(i) * m.n + j] = 1;
        ++m.neg_count;
      }
    }
  }
  return m;
}

namespace {

// Spatial mean of (B,C,H,W) -> (B,C); (B,D) passes through.
Tensor pool_means(const Tensor& t) {
  if (t.ndim() == 2) return t;
  if (t.ndim() != 4) throw std::invalid_argument("contrastive_loss: bad mean tensor rank");
  const int B = t.dim(0), C = t.dim(1);
  const int64_t plane = static_cast<int64_t>(t.dim(2)) * t.dim(3);
  Tensor out({B, C});
  const double inv = 1.0 / plane;
  for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
    double acc = 0.0;
    const double* p = t.data() + bc * plane;
    for (int64_t i = 0; i < plane; ++i) acc += p[i];
    out[bc] = acc * inv;
  }
  return out;
}

struct PairwiseDistances {
  std::vector<Tensor> pooled;           // per level (B, D_l)
  std::vector<std::vector<double>> dl;  // per level, row-major B x B
  std::vector<double> d;                // summed over levels, B x B
  int b = 0;
};

PairwiseDistances pairwise_distances(const std::vector<Tensor>& level_means) {
  if (level_means.empty())
    throw std::invalid_argument("contrastive_loss: no hierarchy levels");
  PairwiseDistances pd;
  pd.b = level_means[0].dim(0);
  pd.d.assign(static_cast<size_t>(pd.b) * pd.b, 0.0);
  for (const auto& t : level_means) {
    Tensor e = pool_means(t);
    if (e.dim(0) != pd.b)
      throw std::invalid_argument("contrastive_loss: inconsistent batch size");
    const int D = e.dim(1);
    std::vector<double> dl(static_cast<size_t>(pd.b) * pd.b, 0.0);
    for (int i = 0; i < pd.b; ++i)
      for (int j = i + 1; j < pd.b; ++j) {
        double acc = 0.0;
        const double* ei = e.data() + static_cast<int64_t>(i) * D;
        const double* ej = e.data() + static_cast<int64_t>(j) * D;
        for (int k = 0; k < D; ++k) {
          const double diff = ei[k] - ej[k];
          acc += diff * diff;
        }
        const double dist = std::sqrt(acc);
        dl[static_cast<size_t>(i) * pd.b + j] = dist;
        dl[static_cast<size_t>(j) * pd.b + i] = dist;
        pd.d[static_cast<size_t>(i) * pd.b + j] += dist;
        pd.d[static_cast<size_t>(j) * pd.b + i] += dist;
      }
    pd.pooled.push_back(std::move(e));
    pd.dl.push_back(std::move(dl));
  }
  return pd;
}

inline double hinge_neg(double d, double m) {
  return d >= m ? 0.0 : (m - d) * (m - d);
}

double contrastive_from_distances(const PairwiseDistances& pd, const PairMatrices& pm,
                                  double margin, double lambda) {
  double lpos = 0.0, lneg = 0.0;
  for (int i = 0; i < pd.b; ++i)
    for (int j = 0; j < pd.b; ++j) {
      const size_t ij = static_cast<size_t>(i) * pd.b + j;
      if (pm.pos[ij]) lpos += pd.d[ij];
      if (pm.neg[ij]) lneg += hinge_neg(pd.d[ij], margin);
    }
  if (pm.pos_count > 0) lpos /= pm.pos_count;
  return lambda * lpos + (1.0 - lambda) * lneg;
}

}  // namespace

double contrastive_loss(const std::vector<Tensor>& level_means,
                        const std::vector<int>& labels, double margin, double lambda,
                        bool* no_pos, bool* no_neg) {
  if (margin <= 0) throw std::invalid_argument("contrastive_loss: margin must be positive");
  if (lambda < 0 || lambda > 1)
    throw std::invalid_argument("contrastive_loss: lambda must lie in [0,1]");
  PairwiseDistances pd = pairwise_distances(level_means);
  if (static_cast<int>(labels.size()) != pd.b)
    throw std::invalid_argument("contrastive_loss: labels/batch size mismatch");
  PairMatrices pm = pair_matrices(labels);
  if (no_pos) *no_pos = pm.pos_count == 0;
  if (no_neg) *no_neg = pm.neg_count == 0;
  return contrastive_from_distances(pd, pm, margin, lambda);
}

double entropy_loss(const Tensor& y, const std::vector<int>& labels, bool* no_unlabeled) {
  const int B = y.dim(0), C = y.dim(1);
  if (static_cast<int>(labels.size()) != B)
    throw std::invalid_argument("entropy_loss: labels/batch size mismatch");
  double acc = 0.0;
  int n = 0;
  for (int i = 0; i < B; ++i) {
    if (labels[i] != kNoLabel) continue;
    for (int c = 0; c < C; ++c) {
      const double v = y[static_cast<int64_t>(i) * C + c];
      acc -= v * std::log(std::max(v, kLogClip));
    }
    ++n;
  }
  if (no_unlabeled) *no_unlabeled = n == 0;
  return n == 0 ? 0.0 : acc / n;
}

LossBreakdown total_loss(double inpaint, double ce, double kl, double cl,
                         double entropy, const LossWeights& w) {
  w.validate();
  auto require_finite = [](double v, const char* part) {
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("total_loss: non-finite ") + part + " term");
  };
  require_finite(inpaint, "inpaint");
  require_finite(ce, "ce");
  require_finite(kl, "kl");
  require_finite(cl, "cl");
  require_finite(entropy, "entropy");
  LossBreakdown b;
  b.inpaint = inpaint;
  b.ce = ce;
  b.kl = kl;
  b.cl = cl;
  b.entropy = entropy;
  b.total = inpaint + w.alpha1 * ce + w.alpha2 * kl + w.alpha3 * cl +
            w.entropy_weight * entropy;
  return b;
}

namespace lossops {

NodePtr inpainting(Tape& t, NodePtr pred, const Tensor& target, const Window& w) {
  const double value = inpainting_loss(pred->value, target, w);
  NodePtr n = t.record(Tensor::scalar(value), pred->requires_grad);
  if (n->requires_grad) {
    Node* self = n.get();
    n->backward = [self, pred, target, w]() {
      const double g = self->grad[0];
      const int B = pred->value.dim(0);
      const double scale = 2.0 * g / B;
      for (int b = 0; b < B; ++b)
        for (int r = w.r0; r < w.r0 + w.side; ++r)
          for (int c = w.c0; c < w.c0 + w.side; ++c)
            pred->grad.at4(b, 0, r, c) +=
                scale * (pred->value.at4(b, 0, r, c) - target.at4(b, 0, r, c));
    };
  }
  return n;
}

NodePtr cross_entropy(Tape& t, NodePtr y, const std::vector<int>& labels) {
  const double value = cross_entropy_loss(y->value, labels);
  NodePtr n = t.record(Tensor::scalar(value), y->requires_grad);
  if (n->requires_grad) {
    Node* self = n.get();
    n->backward = [self, y, labels]() {
      const int C = y->value.dim(1);
      int n_lab = 0;
      for (int l : labels)
        if (l != kNoLabel) ++n_lab;
      if (n_lab == 0) return;
      const double g = self->grad[0];
      for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == kNoLabel) continue;
        const int64_t idx = static_cast<int64_t>(i) * C + labels[i];
        const double v = y->value[idx];
        if (v > kLogClip) y->grad[idx] -= g / (n_lab * v);
      }
    };
  }
  return n;
}

NodePtr gaussian_kl_mean(Tape& t, NodePtr mu_q, NodePtr sigma_q, NodePtr mu_p,
                         NodePtr sigma_p) {
  const int B = mu_q->value.dim(0);
  const double value = gaussian_kl(mu_q->value, sigma_q->value, mu_p->value, sigma_p->value) / B;
  const bool rg = mu_q->requires_grad || sigma_q->requires_grad ||
                  mu_p->requires_grad || sigma_p->requires_grad;
  NodePtr n = t.record(Tensor::scalar(value), rg);
  if (rg) {
    Node* self = n.get();
    n->backward = [self, mu_q, sigma_q, mu_p, sigma_p, B]() {
      const double g = self->grad[0] / B;
      const int64_t count = mu_q->value.numel();
      for (int64_t i = 0; i < count; ++i) {
        const double mq = mu_q->value[i], sq = sigma_q->value[i];
        const double mp = mu_p->value[i], sp = sigma_p->value[i];
        const double d = mq - mp;
        const double inv_sp2 = 1.0 / (sp * sp);
        if (mu_q->requires_grad) mu_q->grad[i] += g * d * inv_sp2;
        if (mu_p->requires_grad) mu_p->grad[i] -= g * d * inv_sp2;
        if (sigma_q->requires_grad) sigma_q->grad[i] += g * (-1.0 / sq + sq * inv_sp2);
        if (sigma_p->requires_grad)
          sigma_p->grad[i] += g * (1.0 / sp - (sq * sq + d * d) * inv_sp2 / sp);
      }
    };
  }
  return n;
}

NodePtr contrastive(Tape& t, const std::vector<NodePtr>& level_means,
                    const std::vector<int>& labels, double margin, double lambda) {
  std::vector<Tensor> values;
  values.reserve(level_means.size());
  bool rg = false;
  for (const auto& m : level_means) {
    if (m->value.ndim() != 2)
      throw std::invalid_argument("lossops::contrastive: pass pooled (B,D) means");
    values.push_back(m->value);
    rg = rg || m->requires_grad;
  }
  const double value = contrastive_loss(values, labels, margin, lambda);
  NodePtr n = t.record(Tensor::scalar(value), rg);
  if (rg) {
    Node* self = n.get();
    n->backward = [self, level_means, labels, margin, lambda]() {
      std::vector<Tensor> values;
      for (const auto& m : level_means) values.push_back(m->value);
      PairwiseDistances pd = pairwise_distances(values);
      PairMatrices pm = pair_matrices(labels);
      if (pm.pos_count == 0 && pm.neg_count == 0) return;
      const double g = self->grad[0];
      for (int i = 0; i < pd.b; ++i)
        for (int j = 0; j < pd.b; ++j) {
          if (i == j) continue;
          const size_t ij = static_cast<size_t>(i) * pd.b + j;
          double coeff = 0.0;
          if (pm.pos[ij]) coeff += lambda / pm.pos_count;
          if (pm.neg[ij] && pd.d[ij] < margin)
            coeff += (1.0 - lambda) * (-2.0) * (margin - pd.d[ij]);
          if (coeff == 0.0) continue;
          for (size_t lv = 0; lv < level_means.size(); ++lv) {
            const double dl = pd.dl[lv][ij];
            if (dl <= 0.0) continue;
            const Tensor& e = pd.pooled[lv];
            const int D = e.dim(1);
            const double* ei = e.data() + static_cast<int64_t>(i) * D;
            const double* ej = e.data() + static_cast<int64_t>(j) * D;
            double* gi = level_means[lv]->grad.data() + static_cast<int64_t>(i) * D;
            double* gj = level_means[lv]->grad.data() + static_cast<int64_t>(j) * D;
            const double s = g * coeff / dl;
            if (!level_means[lv]->requires_grad) continue;
            for (int k = 0; k < D; ++k) {
              const double diff = ei[k] - ej[k];
              gi[k] += s * diff;
              gj[k] -= s * diff;
            }
          }
        }
    };
  }
  return n;
}

NodePtr entropy(Tape& t, NodePtr y, const std::vector<int>& labels) {
  const double value = entropy_loss(y->value, labels);
  NodePtr n = t.record(Tensor::scalar(value), y->requires_grad);
  if (n->requires_grad) {
    Node* self = n.get();
    n->backward = [self, y, labels]() {
      const int C = y->value.dim(1);
      int n_unlab = 0;
      for (int l : labels)
        if (l == kNoLabel) ++n_unlab;
      if (n_unlab == 0) return;
      const double g = self->grad[0] / n_unlab;
      for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != kNoLabel) continue;
        for (int c = 0; c < C; ++c) {
          const int64_t idx = static_cast<int64_t>(i) * C + c;
          const double v = y->value[idx];
          y->grad[idx] -= g * (v >= kLogClip ? std::log(v) + 1.0 : std::log(kLogClip));
        }
      }
    };
  }
  return n;
}

}  // namespace lossops
}  // namespace epsseg

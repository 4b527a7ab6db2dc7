#include "epsseg/gmm.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "epsseg/exec.hpp"
#include "epsseg/kernels.hpp"

namespace epsseg {

GmmPrior GmmPrior::build(int num_classes, int latent_dim, double mean_scale) {
  if (num_classes < 1) throw std::invalid_argument("GmmPrior: need at least one class");
  if (latent_dim < num_classes)
    throw std::invalid_argument("GmmPrior: latent dim " + std::to_string(latent_dim) +
                                " < num classes " + std::to_string(num_classes));
  GmmPrior p;
  p.means = Tensor::zeros({num_classes, latent_dim});
  p.stds = Tensor::full({num_classes, latent_dim}, 1.0);
  p.weights = Tensor::full({num_classes}, 1.0 / num_classes);
  for (int c = 0; c < num_classes; ++c)
    p.means[static_cast<int64_t>(c) * latent_dim + c] = mean_scale;
  return p;
}

std::string GmmPrior::to_json() const {
  std::ostringstream os;
  os.precision(17);
  auto arr2 = [&](const Tensor& t) {
    os << "[";
    for (int c = 0; c < t.dim(0); ++c) {
      os << (c ? ",[" : "[");
      for (int d = 0; d < t.dim(1); ++d)
        os << (d ? "," : "") << t[static_cast<int64_t>(c) * t.dim(1) + d];
      os << "]";
    }
    os << "]";
  };
  os << "{\"means\":";
  arr2(means);
  os << ",\"stds\":";
  arr2(stds);
  os << ",\"weights\":[";
  for (int c = 0; c < weights.dim(0); ++c) os << (c ? "," : "") << weights[c];
  os << "]}";
  return os.str();
}

double TemperatureSchedule::tau(double t) const {
  if (t < 0) throw std::invalid_argument("TemperatureSchedule: negative step");
  return std::max(tau_min, std::exp(-rate * t / time_scale));
}

Tensor gumbel_softmax_sample(const Tensor& logits, double tau, Rng& rng) {
  if (tau <= 0.0) throw std::invalid_argument("gumbel_softmax_sample: tau must be > 0");
  const int N = logits.dim(0), C = logits.dim(1);
  Tensor perturbed({N, C});
  for (int64_t i = 0; i < perturbed.numel(); ++i)
    perturbed[i] = (logits[i] + rng.gumbel()) / tau;
  Tensor y({N, C});
  kernels::softmax_rows_forward(perturbed, y, Exec::serial);
  return y;
}

Tensor infer_assignment(const Tensor& logits) {
  Tensor y(logits.shape());
  kernels::softmax_rows_forward(logits, y, Exec::serial);
  return y;
}

int argmax_row(const double* row, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

int select_component(const std::vector<double>& y_row, int label) {
  if (label != kNoLabel) return label;
  return argmax_row(y_row.data(), static_cast<int>(y_row.size()));
}

}  // namespace epsseg

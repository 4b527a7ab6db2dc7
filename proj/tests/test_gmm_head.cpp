#include "doctest.h"

#include <cmath>

#include "epsseg/gmm.hpp"
#include "epsseg/hvae.hpp"
#include "epsseg/rng.hpp"
#include "test_util.hpp"

using namespace epsseg;
using testutil::bitwise_equal;

TEST_CASE("mixture prior construction") {
  GmmPrior p = GmmPrior::build(3, 4, 3.0);
  CHECK(p.means.dim(0) == 3);
  CHECK(p.means.dim(1) == 4);
  // scaled one-hot anchors
  CHECK(p.means[0] == 3.0);
  CHECK(p.means[1] == 0.0);
  CHECK(p.means[4 + 1] == 3.0);
  CHECK(p.means[2 * 4 + 2] == 3.0);
  CHECK(p.means[2 * 4 + 3] == 0.0);

  // pairwise mean distance s*sqrt(2)
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b) {
      double d2 = 0;
      for (int k = 0; k < 4; ++k) {
        const double diff = p.means[a * 4 + k] - p.means[b * 4 + k];
        d2 += diff * diff;
      }
      CHECK(std::sqrt(d2) == doctest::Approx(3.0 * std::sqrt(2.0)));
    }

  double wsum = 0;
  for (int c = 0; c < 3; ++c) {
    wsum += p.weights[c];
    for (int k = 0; k < 4; ++k) CHECK(p.stds[c * 4 + k] == 1.0);
  }
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS(GmmPrior::build(5, 4, 3.0));  // D < C rejected

  // JSON export parses back
  const std::string js = p.to_json();
  CHECK(js.find("\"means\"") != std::string::npos);
  CHECK(js.find("\"weights\"") != std::string::npos);
}

TEST_CASE("gumbel softmax sampling: simplex, exactness, determinism") {
  Rng lrng(4);
  Tensor logits({2, 4});
  lrng.fill_normal(logits, 0.0, 1.5);

  // every draw lies on the simplex
  for (int t = 0; t < 200; ++t) {
    Rng rng(mix_seed({7u, static_cast<uint64_t>(t)}));
    Tensor y = gumbel_softmax_sample(logits, 0.73, rng);
    for (int r = 0; r < 2; ++r) {
      double s = 0;
      for (int c = 0; c < 4; ++c) {
        CHECK(y[r * 4 + c] >= 0.0);
        s += y[r * 4 + c];
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }

  CHECK_THROWS(gumbel_softmax_sample(logits, 0.0, lrng));
  CHECK_THROWS(gumbel_softmax_sample(logits, -1.0, lrng));

  // fixed seed -> identical draw
  Rng r1(99), r2(99);
  CHECK(bitwise_equal(gumbel_softmax_sample(logits, 0.5, r1),
                      gumbel_softmax_sample(logits, 0.5, r2)));

  // Gumbel-max property: argmax frequencies match softmax(f) for any tau
  Tensor one_logit({1, 4});
  Rng vr(11);
  vr.fill_normal(one_logit, 0.0, 1.0);
  Tensor probs = infer_assignment(one_logit);
  const int n = 100000;
  std::vector<int> counts(4, 0);
  Rng srng(12345);
  for (int i = 0; i < n; ++i) {
    Tensor y = gumbel_softmax_sample(one_logit, 0.37, srng);
    ++counts[argmax_row(y.data(), 4)];
  }
  for (int c = 0; c < 4; ++c)
    CHECK(std::abs(static_cast<double>(counts[c]) / n - probs[c]) < 0.01);
}

TEST_CASE("temperature annealing schedule") {
  TemperatureSchedule s;  // tau_min 0.5, rate 0.999, time_scale 1
  CHECK(s.tau(0) == doctest::Approx(1.0));
  CHECK(s.tau(1) == doctest::Approx(0.5));  // exp(-0.999) < 0.5 floor
  CHECK(s.tau(1e9) == doctest::Approx(0.5));
  CHECK_THROWS(s.tau(-1));

  TemperatureSchedule slow;
  slow.time_scale = 1000.0;
  double prev = 2.0;
  for (int t = 0; t <= 5000; t += 100) {
    const double tau = slow.tau(t);
    CHECK(tau <= prev);
    CHECK(tau >= 0.5);
    CHECK(tau <= 1.0);
    prev = tau;
  }
  CHECK(slow.tau(0) == doctest::Approx(1.0));
  CHECK(slow.tau(5000) == doctest::Approx(0.5));  // exp(-4.995) < 0.5
}

TEST_CASE("inference assignment: softmax, argmax, shift invariance") {
  Tensor ones = Tensor::full({1, 5}, 1.0);
  Tensor y = infer_assignment(ones);
  for (int c = 0; c < 5; ++c) CHECK(y[c] == doctest::Approx(0.2));

  Tensor peaked = Tensor::from({1, 4}, {0.1, 3.0, -1.0, 0.5});
  Tensor yp = infer_assignment(peaked);
  CHECK(argmax_row(yp.data(), 4) == 1);

  Tensor shifted = peaked.clone();
  for (int64_t i = 0; i < shifted.numel(); ++i) shifted[i] += 42.0;
  Tensor ys = infer_assignment(shifted);
  for (int64_t i = 0; i < ys.numel(); ++i)
    CHECK(std::abs(ys[i] - yp[i]) < 1e-9);
}

TEST_CASE("component selection") {
  CHECK(select_component({0.1, 0.7, 0.2}, 2) == 2);         // label wins
  CHECK(select_component({0.1, 0.7, 0.2}, kNoLabel) == 1);  // argmax
  CHECK(select_component({0.5, 0.5}, kNoLabel) == 0);       // tie -> lowest index
  // label selection is constant in y'
  CHECK(select_component({0.9, 0.05, 0.05}, 2) == 2);
}

namespace {

ModelConfig tiny_config() {
  ModelConfig mc;
  mc.num_levels = 2;
  mc.channels = {4, 6};
  mc.latent_channels = {3};
  mc.top_latent_dim = 8;
  mc.num_classes = 3;
  mc.patch_side = 9;
  mc.blocks_per_level = 1;
  mc.classifier_hidden = 8;
  return mc;
}

}  // namespace

TEST_CASE("classifier logits: shape, determinism, forced-parameter oracle") {
  Hvae model(tiny_config(), 5);
  Rng rng(1);
  Tensor x({2, 1, 9, 9});
  rng.fill_uniform(x);

  Tensor l1 = model.classify_logits(x);
  CHECK(l1.dim(0) == 2);
  CHECK(l1.dim(1) == 3);
  Tensor l2 = model.classify_logits(x);
  CHECK(bitwise_equal(l1, l2));

  // zero the final classifier layer: logits must equal its bias
  auto w = model.params().find("head.cls2.w");
  auto b = model.params().find("head.cls2.b");
  REQUIRE(w);
  REQUIRE(b);
  w->value.zero();
  b->value[0] = 0.25;
  b->value[1] = -1.5;
  b->value[2] = 4.0;
  Tensor l3 = model.classify_logits(x);
  for (int i = 0; i < 2; ++i) {
    CHECK(l3[i * 3 + 0] == doctest::Approx(0.25));
    CHECK(l3[i * 3 + 1] == doctest::Approx(-1.5));
    CHECK(l3[i * 3 + 2] == doctest::Approx(4.0));
  }
}

TEST_CASE("FiLM modulation: identity surgery reproduces the plain posterior") {
  ModelConfig with_film = tiny_config();
  ModelConfig no_film = tiny_config();
  no_film.use_film = false;
  Hvae a(with_film, 42), b(no_film, 42);

  // force gamma = 1 and beta = 0
  a.params().find("head.film_g2.w")->value.zero();
  a.params().find("head.film_g2.b")->value.fill(1.0);
  a.params().find("head.film_b2.w")->value.zero();
  a.params().find("head.film_b2.b")->value.zero();

  Rng rng(2);
  Tensor x({3, 1, 9, 9});
  rng.fill_uniform(x);
  std::vector<int> labels = {0, kNoLabel, 2};

  Hvae::ForwardOptions opt;
  opt.training = true;
  opt.grad = false;
  opt.tau = 0.9;
  opt.noise_seed = 77;
  opt.labels = &labels;

  Tape ta, tb;
  auto fa = a.forward(ta, x, opt);
  auto fb = b.forward(tb, x, opt);
  const int top = with_film.num_levels - 1;
  CHECK(bitwise_equal(fa.levels[top].mu_q->value, fb.levels[top].mu_q->value));
  CHECK(bitwise_equal(fa.levels[top].sigma_q->value, fb.levels[top].sigma_q->value));
  CHECK(bitwise_equal(fa.levels[top].z->value, fb.levels[top].z->value));
  CHECK(bitwise_equal(fa.x_hat->value, fb.x_hat->value));
}

TEST_CASE("FiLM gamma=0 overrides the encoder features") {
  Hvae model(tiny_config(), 9);
  model.params().find("head.film_g2.w")->value.zero();
  model.params().find("head.film_g2.b")->value.zero();  // gamma = 0
  model.params().find("head.film_b2.w")->value.zero();
  model.params().find("head.film_b2.b")->value.fill(0.37);  // beta = 0.37

  Rng rng(3);
  Tensor x1({1, 1, 9, 9}), x2({1, 1, 9, 9});
  rng.fill_uniform(x1);
  rng.fill_uniform(x2);
  Hvae::ForwardOptions opt;
  opt.training = false;
  opt.grad = false;

  Tape t1, t2;
  auto f1 = model.forward(t1, x1, opt);
  auto f2 = model.forward(t2, x2, opt);
  const int top = 1;
  // posterior mean = first half of h' = 0.37 everywhere, independent of input
  for (int64_t i = 0; i < f1.levels[top].mu_q->value.numel(); ++i) {
    CHECK(f1.levels[top].mu_q->value[i] == doctest::Approx(0.37));
    CHECK(f2.levels[top].mu_q->value[i] == doctest::Approx(0.37));
  }

  // chunking: h' has 2*D entries; mu and sigma each have D
  CHECK(f1.h->value.dim(1) == 2 * tiny_config().top_latent_dim);
  CHECK(f1.levels[top].mu_q->value.dim(1) == tiny_config().top_latent_dim);
  CHECK(f1.levels[top].sigma_q->value.dim(1) == tiny_config().top_latent_dim);
}

TEST_CASE("forward selects components from labels or argmax") {
  Hvae model(tiny_config(), 21);
  Rng rng(6);
  Tensor x({3, 1, 9, 9});
  rng.fill_uniform(x);
  std::vector<int> labels = {2, kNoLabel, 0};
  Hvae::ForwardOptions opt;
  opt.training = true;
  opt.grad = false;
  opt.tau = 1.0;
  opt.noise_seed = 5;
  opt.labels = &labels;
  Tape t;
  auto fw = model.forward(t, x, opt);
  CHECK(fw.component[0] == 2);
  CHECK(fw.component[2] == 0);
  const double* row = fw.y->value.data() + 1 * 3;
  CHECK(fw.component[1] == argmax_row(row, 3));
}

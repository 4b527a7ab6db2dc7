#include "epsseg/hvae.hpp"

#include <stdexcept>

#include "json.hpp"

namespace epsseg {

using nlohmann::json;
using nn::Ctx;
namespace op = ops;

void ModelConfig::validate() const {
  if (num_levels < 2) throw std::invalid_argument("ModelConfig: num_levels must be >= 2");
  if (static_cast<int>(channels.size()) != num_levels)
    throw std::invalid_argument("ModelConfig: channels list must have one entry per level");
  if (static_cast<int>(latent_channels.size()) != num_levels - 1)
    throw std::invalid_argument("ModelConfig: latent_channels must have num_levels-1 entries");
  if (top_latent_dim < num_classes)
    throw std::invalid_argument("ModelConfig: top_latent_dim must be >= num_classes");
  if (num_classes < 2) throw std::invalid_argument("ModelConfig: num_classes must be >= 2");
  if (patch_side < 8) throw std::invalid_argument("ModelConfig: patch_side too small");
  if (blocks_per_level < 1) throw std::invalid_argument("ModelConfig: blocks_per_level >= 1");
  if (level_side(num_levels - 1) < 1)
    throw std::invalid_argument("ModelConfig: too many levels for patch_side");
  for (int c : channels)
    if (c < 1) throw std::invalid_argument("ModelConfig: channel count must be positive");
  for (int c : latent_channels)
    if (c < 1) throw std::invalid_argument("ModelConfig: latent channel count must be positive");
}

std::string ModelConfig::to_json() const {
  json j;
  j["num_levels"] = num_levels;
  j["channels"] = channels;
  j["latent_channels"] = latent_channels;
  j["top_latent_dim"] = top_latent_dim;
  j["num_classes"] = num_classes;
  j["patch_side"] = patch_side;
  j["blocks_per_level"] = blocks_per_level;
  j["classifier_hidden"] = classifier_hidden;
  j["use_gmm"] = use_gmm;
  j["use_film"] = use_film;
  j["gmm_mean_scale"] = gmm_mean_scale;
  j["sigma_floor"] = sigma_floor;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& s) {
  json j = json::parse(s);
  ModelConfig c;
  c.num_levels = j.at("num_levels").get<int>();
  c.channels = j.at("channels").get<std::vector<int>>();
  c.latent_channels = j.at("latent_channels").get<std::vector<int>>();
  c.top_latent_dim = j.at("top_latent_dim").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.patch_side = j.at("patch_side").get<int>();
  c.blocks_per_level = j.at("blocks_per_level").get<int>();
  c.classifier_hidden = j.at("classifier_hidden").get<int>();
  c.use_gmm = j.at("use_gmm").get<bool>();
  c.use_film = j.at("use_film").get<bool>();
  c.gmm_mean_scale = j.at("gmm_mean_scale").get<double>();
  c.sigma_floor = j.at("sigma_floor").get<double>();
  c.validate();
  return c;
}

Tensor reparameterize(const Tensor& mean, const Tensor& std, uint64_t noise_seed) {
  if (!mean.same_shape(std)) throw std::invalid_argument("reparameterize: shape mismatch");
  for (int64_t i = 0; i < std.numel(); ++i)
    if (std[i] <= 0.0) throw std::invalid_argument("reparameterize: std must be positive");
  Rng rng(noise_seed);
  Tensor z(mean.shape());
  for (int64_t i = 0; i < z.numel(); ++i) z[i] = mean[i] + std[i] * rng.normal();
  return z;
}

Hvae::Hvae(ModelConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  prior_ = GmmPrior::build(cfg_.num_classes, cfg_.top_latent_dim, cfg_.gmm_mean_scale);
  Rng rng(mix_seed({init_seed, 0x6d6f64656cULL}));

  const int L = cfg_.num_levels;
  const auto& ch = cfg_.channels;
  const auto& zc = cfg_.latent_channels;
  const int D = cfg_.top_latent_dim;
  const int C = cfg_.num_classes;

  stem_ = nn::Conv2d(params_, "enc.stem", 1, ch[0], 3, 1, 1, rng);
  enc_down_.resize(L);
  enc_blocks_.resize(L);
  for (int lv = 0; lv < L; ++lv) {
    const int in_ch = lv == 0 ? ch[0] : ch[lv - 1];
    enc_down_[lv] = nn::Conv2d(params_, "enc.down" + std::to_string(lv), in_ch, ch[lv], 3, 2, 1, rng);
    for (int b = 0; b < cfg_.blocks_per_level; ++b)
      enc_blocks_[lv].emplace_back(params_, "enc.l" + std::to_string(lv) + ".b" + std::to_string(b),
                                   ch[lv], rng);
  }
  enc_fc_ = nn::Linear(params_, "enc.fc", ch[L - 1], 2 * D, rng);

  cls_fc1_ = nn::Linear(params_, "head.cls1", 2 * D, cfg_.classifier_hidden, rng);
  cls_fc2_ = nn::Linear(params_, "head.cls2", cfg_.classifier_hidden, C, rng);

  // FiLM nets start near the identity: gamma ~ 1, beta ~ 0.
  film_g1_ = nn::Linear(params_, "head.film_g1", C, 2 * C, rng);
  film_g2_ = nn::Linear(params_, "head.film_g2", 2 * C, 2 * D, rng, 0.01);
  film_g2_.b->value.fill(1.0);
  film_b1_ = nn::Linear(params_, "head.film_b1", C, 2 * C, rng);
  film_b2_ = nn::Linear(params_, "head.film_b2", 2 * C, 2 * D, rng, 0.01);

  const int s_top = cfg_.level_side(L - 1);
  dec_fc_ = nn::Linear(params_, "dec.fc", D, ch[L - 1] * s_top * s_top, rng);
  for (int b = 0; b < cfg_.blocks_per_level; ++b)
    dec_top_blocks_.emplace_back(params_, "dec.top.b" + std::to_string(b), ch[L - 1], rng);

  dec_up_.resize(L - 1);
  dec_prior_.resize(L - 1);
  dec_post_.resize(L - 1);
  dec_inject_.resize(L - 1);
  dec_blocks_.resize(L - 1);
  for (int lv = L - 2; lv >= 0; --lv) {
    const std::string base = "dec.l" + std::to_string(lv);
    dec_up_[lv] = nn::Conv2d(params_, base + ".up", ch[lv + 1], ch[lv], 1, 1, 0, rng);
    dec_prior_[lv] = nn::Conv2d(params_, base + ".prior", ch[lv], 2 * zc[lv], 1, 1, 0, rng);
    dec_post_[lv] = nn::Conv2d(params_, base + ".post", 2 * ch[lv], 2 * zc[lv], 1, 1, 0, rng);
    dec_inject_[lv] = nn::Conv2d(params_, base + ".inject", zc[lv], ch[lv], 1, 1, 0, rng);
    for (int b = 0; b < cfg_.blocks_per_level; ++b)
      dec_blocks_[lv].emplace_back(params_, base + ".b" + std::to_string(b), ch[lv], rng);
  }
  out_conv1_ = nn::Conv2d(params_, "dec.out1", ch[0], ch[0], 3, 1, 1, rng);
  out_conv2_ = nn::Conv2d(params_, "dec.out2", ch[0], 1, 3, 1, 1, rng);
}

Hvae::EncoderOut Hvae::run_encoder(Ctx& c, NodePtr x) const {
  const int L = cfg_.num_levels;
  EncoderOut out;
  NodePtr f = stem_(c, x);
  for (int lv = 0; lv < L; ++lv) {
    f = enc_down_[lv](c, f);
    for (const auto& blk : enc_blocks_[lv]) f = blk(c, f);
    if (lv < L - 1) out.bu.push_back(f);
  }
  NodePtr pooled = op::global_avg_pool(c.tape, op::elu(c.tape, f));
  out.h = enc_fc_(c, pooled);
  return out;
}

std::pair<NodePtr, NodePtr> Hvae::level_prior(Ctx& c, int level, NodePtr state) const {
  if (level < 0 || level >= cfg_.num_levels - 1)
    throw std::logic_error("Hvae::level_prior: only spatial levels have a learned prior; "
                           "the top level uses the mixture prior");
  const int zch = cfg_.latent_channels[level];
  NodePtr both = dec_prior_[level](c, state);
  NodePtr mu = op::slice_ch(c.tape, both, 0, zch);
  NodePtr sigma = op::softplus_floor(c.tape, op::slice_ch(c.tape, both, zch, zch), cfg_.sigma_floor);
  return {mu, sigma};
}

namespace {

// (B, 2D) -> two (B, D) halves via the channel slicer.
std::pair<NodePtr, NodePtr> chunk_cols(Tape& t, NodePtr x, int d) {
  const int B = x->value.dim(0);
  NodePtr x4 = op::reshape(t, x, {B, 2 * d, 1, 1});
  NodePtr a = op::reshape(t, op::slice_ch(t, x4, 0, d), {B, d});
  NodePtr b = op::reshape(t, op::slice_ch(t, x4, d, d), {B, d});
  return {a, b};
}

}  // namespace

Hvae::Forward Hvae::forward(Tape& tape, const Tensor& input, const ForwardOptions& opt) const {
  if (input.ndim() != 4 || input.dim(1) != 1)
    throw std::invalid_argument("Hvae::forward: input must be (B,1,P,P)");
  if (input.dim(2) != cfg_.patch_side || input.dim(3) != cfg_.patch_side)
    throw std::invalid_argument("Hvae::forward: patch side " + std::to_string(input.dim(2)) +
                                " does not match configured side " +
                                std::to_string(cfg_.patch_side));
  const int B = input.dim(0);
  const int L = cfg_.num_levels;
  const int D = cfg_.top_latent_dim;
  const int C = cfg_.num_classes;
  Ctx c{tape, opt.grad};

  Forward fw;
  fw.tau = opt.tau;
  fw.levels.resize(L);

  EncoderOut enc = run_encoder(c, tape.constant(input));
  fw.h = enc.h;

  NodePtr cls_h = op::elu(tape, cls_fc1_(c, fw.h));
  fw.logits = cls_fc2_(c, cls_h);

  if (opt.training) {
    if (opt.tau <= 0.0) throw std::invalid_argument("Hvae::forward: tau must be > 0");
    Rng grng(mix_seed({opt.noise_seed, 0x67756d62656cULL}));
    Tensor g({B, C});
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = grng.gumbel();
    NodePtr shifted = op::add(tape, fw.logits, tape.constant(g));
    fw.y = op::softmax_rows(tape, op::scale_shift(tape, shifted, 1.0 / opt.tau, 0.0));
  } else {
    fw.y = op::softmax_rows(tape, fw.logits);
  }

  fw.component.resize(B);
  for (int i = 0; i < B; ++i) {
    const int label = opt.labels ? (*opt.labels)[i] : kNoLabel;
    fw.component[i] =
        label != kNoLabel ? label : argmax_row(fw.y->value.data() + static_cast<int64_t>(i) * C, C);
    if (fw.component[i] < 0 || fw.component[i] >= C)
      throw std::invalid_argument("Hvae::forward: label out of range");
  }

  NodePtr h_mod = fw.h;
  if (cfg_.use_film) {
    NodePtr gamma = film_g2_(c, op::elu(tape, film_g1_(c, fw.logits)));
    NodePtr beta = film_b2_(c, op::elu(tape, film_b1_(c, fw.logits)));
    h_mod = op::add(tape, op::mul(tape, gamma, fw.h), beta);
  }
  auto [mu_top, sig_raw] = chunk_cols(tape, h_mod, D);
  NodePtr sigma_top = op::softplus_floor(tape, sig_raw, cfg_.sigma_floor);

  // Top prior: the selected mixture component per item (N(0,I) when the
  // mixture prior is disabled).
  Tensor mu_p_top({B, D}), sig_p_top({B, D});
  sig_p_top.fill(1.0);
  if (cfg_.use_gmm) {
    for (int i = 0; i < B; ++i) {
      const int64_t src = static_cast<int64_t>(fw.component[i]) * D;
      for (int d = 0; d < D; ++d) {
        mu_p_top[static_cast<int64_t>(i) * D + d] = prior_.means[src + d];
        sig_p_top[static_cast<int64_t>(i) * D + d] = prior_.stds[src + d];
      }
    }
  }

  NodePtr z_top;
  if (opt.training) {
    Rng zrng(mix_seed({opt.noise_seed, 0x7a746f70ULL}));
    Tensor eps({B, D});
    zrng.fill_normal(eps);
    z_top = op::add(tape, mu_top, op::mul(tape, sigma_top, tape.constant(eps)));
  } else {
    z_top = mu_top;
  }
  fw.levels[L - 1] = {mu_top, sigma_top, tape.constant(mu_p_top), tape.constant(sig_p_top), z_top};

  // Top-down decoding.
  NodePtr state = decode_entry(c, z_top);
  for (int lv = L - 2; lv >= 0; --lv) {
    const int zch = cfg_.latent_channels[lv];
    state = decode_upsample(c, lv, state);

    auto [mu_p, sigma_p] = level_prior(c, lv, state);
    NodePtr both = dec_post_[lv](c, op::concat_ch(tape, enc.bu[lv], state));
    NodePtr mu_q = op::slice_ch(tape, both, 0, zch);
    NodePtr sigma_q =
        op::softplus_floor(tape, op::slice_ch(tape, both, zch, zch), cfg_.sigma_floor);

    NodePtr z;
    if (opt.training) {
      Rng zrng(mix_seed({opt.noise_seed, 0x7a6c76ULL, static_cast<uint64_t>(lv)}));
      Tensor eps(mu_q->value.shape());
      zrng.fill_normal(eps);
      z = op::add(tape, mu_q, op::mul(tape, sigma_q, tape.constant(eps)));
    } else {
      z = mu_q;
    }
    fw.levels[lv] = {mu_q, sigma_q, mu_p, sigma_p, z};
    state = decode_inject(c, lv, state, z);
  }
  fw.x_hat = decode_output(c, state);
  return fw;
}

NodePtr Hvae::decode_entry(Ctx& c, NodePtr z_top) const {
  const int L = cfg_.num_levels;
  const int s_top = cfg_.level_side(L - 1);
  const int B = z_top->value.dim(0);
  NodePtr state =
      op::reshape(c.tape, dec_fc_(c, z_top), {B, cfg_.channels[L - 1], s_top, s_top});
  for (const auto& blk : dec_top_blocks_) state = blk(c, state);
  return state;
}

NodePtr Hvae::decode_upsample(Ctx& c, int lv, NodePtr state) const {
  const int side = cfg_.level_side(lv);
  state = op::upsample2x(c.tape, state);
  state = op::crop2d(c.tape, state, side, side);
  return dec_up_[lv](c, state);
}

NodePtr Hvae::decode_inject(Ctx& c, int lv, NodePtr state, NodePtr z) const {
  state = op::add(c.tape, state, dec_inject_[lv](c, z));
  for (const auto& blk : dec_blocks_[lv]) state = blk(c, state);
  return state;
}

NodePtr Hvae::decode_output(Ctx& c, NodePtr state) const {
  state = op::upsample2x(c.tape, state);
  state = op::crop2d(c.tape, state, cfg_.patch_side, cfg_.patch_side);
  return out_conv2_(c, op::elu(c.tape, out_conv1_(c, state)));
}

Tensor Hvae::decode_top_down(const std::vector<Tensor>& z) const {
  const int L = cfg_.num_levels;
  if (static_cast<int>(z.size()) != L)
    throw std::invalid_argument("decode_top_down: need one latent per level (" +
                                std::to_string(L) + "), got " + std::to_string(z.size()));
  for (int lv = 0; lv < L; ++lv)
    if (!z[lv].defined() || z[lv].numel() == 0)
      throw std::invalid_argument("decode_top_down: missing latent for level " +
                                  std::to_string(lv));
  if (z[L - 1].ndim() != 2 || z[L - 1].dim(1) != cfg_.top_latent_dim)
    throw std::invalid_argument("decode_top_down: top latent must be (B, D)");

  Tape tape;
  Ctx c{tape, false};
  NodePtr state = decode_entry(c, tape.constant(z[L - 1]));
  for (int lv = L - 2; lv >= 0; --lv) {
    state = decode_upsample(c, lv, state);
    const int side = cfg_.level_side(lv);
    if (z[lv].ndim() != 4 || z[lv].dim(1) != cfg_.latent_channels[lv] ||
        z[lv].dim(2) != side || z[lv].dim(3) != side)
      throw std::invalid_argument("decode_top_down: latent shape mismatch at level " +
                                  std::to_string(lv));
    state = decode_inject(c, lv, state, tape.constant(z[lv]));
  }
  return decode_output(c, state)->value;
}

Tensor Hvae::classify_logits(const Tensor& input) const {
  Tape tape;
  Ctx c{tape, false};
  EncoderOut enc = run_encoder(c, tape.constant(input));
  NodePtr cls_h = op::elu(tape, cls_fc1_(c, enc.h));
  return cls_fc2_(c, cls_h)->value;
}

}  // namespace epsseg

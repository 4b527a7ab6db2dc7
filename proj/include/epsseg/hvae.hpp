#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "epsseg/gmm.hpp"
#include "epsseg/graph.hpp"
#include "epsseg/nn.hpp"

namespace epsseg {

struct ModelConfig {
  int num_levels = 3;                        // L
  std::vector<int> channels = {32, 64, 128}; // per level, length L
  std::vector<int> latent_channels = {8, 8}; // per spatial level, length L-1
  int top_latent_dim = 64;                   // D_L
  int num_classes = 3;                       // C
  int patch_side = 33;
  int blocks_per_level = 2;
  int classifier_hidden = 32;
  bool use_gmm = true;   // per-class top prior; false = standard N(0,I)
  bool use_film = true;  // FiLM-conditioned top posterior
  double gmm_mean_scale = 3.0;
  double sigma_floor = 1e-3;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& s);

  /// Spatial side of level `lv` features (0-based; top level pools to 1x1).
  int level_side(int lv) const {
    int s = patch_side;
    for (int i = 0; i <= lv; ++i) s = (s - 1) / 2 + 1;
    return s;
  }
};

Tensor reparameterize(const Tensor& mean, const Tensor& std, uint64_t noise_seed);

/// Hierarchical VAE with a bottom-up encoder, top-down decoder with learned
/// conditional priors at every spatial level, and a classifier / FiLM /
/// mixture-prior head on the flat top latent.
class Hvae {
 public:
  Hvae(ModelConfig cfg, uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const GmmPrior& prior() const { return prior_; }

  struct LevelOut {
    NodePtr mu_q, sigma_q;  // posterior
    NodePtr mu_p, sigma_p;  // prior (constant node at the top level)
    NodePtr z;
  };

  struct Forward {
    NodePtr x_hat;                // (B,1,P,P)
    NodePtr h;                    // (B, 2*D)
    NodePtr logits;               // (B, C)
    NodePtr y;                    // (B, C): relaxed sample / softmax
    std::vector<LevelOut> levels; // [0]..[L-2] spatial, [L-1] top (flat)
    std::vector<int> component;   // selected GMM component per item
    double tau = 1.0;
  };

  struct ForwardOptions {
    bool training = true;  // sample latents and use Gumbel noise
    bool grad = true;
    double tau = 1.0;
    uint64_t noise_seed = 0;
    const std::vector<int>* labels = nullptr;  // kNoLabel entries allowed
  };

  Forward forward(Tape& tape, const Tensor& input, const ForwardOptions& opt) const;

  /// Encoder + classifier only, no gradients; the inference path.
  Tensor classify_logits(const Tensor& input) const;

  /// Decode a complete set of latent samples (z[0..L-2] spatial grids,
  /// z[L-1] flat (B, D)) into an inpainting prediction. Must agree with the
  /// decoder path inside forward().
  Tensor decode_top_down(const std::vector<Tensor>& z) const;

  /// Conditional prior at a spatial level, computed from the top-down state.
  /// The top level has no learned prior; asking for it is a contract error.
  std::pair<NodePtr, NodePtr> level_prior(nn::Ctx& c, int level, NodePtr state) const;

 private:
  struct EncoderOut {
    std::vector<NodePtr> bu;  // spatial-level features
    NodePtr h;
  };
  EncoderOut run_encoder(nn::Ctx& c, NodePtr x) const;

  // Decoder pieces shared by forward() and decode_top_down().
  NodePtr decode_entry(nn::Ctx& c, NodePtr z_top) const;
  NodePtr decode_upsample(nn::Ctx& c, int lv, NodePtr state) const;
  NodePtr decode_inject(nn::Ctx& c, int lv, NodePtr state, NodePtr z) const;
  NodePtr decode_output(nn::Ctx& c, NodePtr state) const;

  ModelConfig cfg_;
  nn::ParamStore params_;
  GmmPrior prior_;

  nn::Conv2d stem_;
  std::vector<nn::Conv2d> enc_down_;
  std::vector<std::vector<nn::ResBlock>> enc_blocks_;
  nn::Linear enc_fc_;

  nn::Linear cls_fc1_, cls_fc2_;
  nn::Linear film_g1_, film_g2_, film_b1_, film_b2_;

  nn::Linear dec_fc_;
  std::vector<nn::ResBlock> dec_top_blocks_;
  std::vector<nn::Conv2d> dec_up_;                    // channel-change after upsample
  std::vector<nn::Conv2d> dec_prior_, dec_post_, dec_inject_;
  std::vector<std::vector<nn::ResBlock>> dec_blocks_;
  nn::Conv2d out_conv1_, out_conv2_;
};

}  // namespace epsseg

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "epsseg/hvae.hpp"

namespace epsseg {

inline constexpr const char* kCheckpointVersion = "eps-seg-ckpt-v1";

struct AdamState {
  std::vector<Tensor> m, v;  // aligned with ParamStore order
  int64_t t = 0;

  static AdamState init_for(const nn::ParamStore& ps) {
    AdamState s;
    for (const auto& p : ps.all()) {
      s.m.push_back(Tensor::zeros(p->value.shape()));
      s.v.push_back(Tensor::zeros(p->value.shape()));
    }
    return s;
  }
};

struct CheckpointMeta {
  std::string version = kCheckpointVersion;
  int64_t step = 0;
  uint64_t seed = 0;
  double best_dice = -1.0;
  std::string model_config_json;
  std::string train_config_json;  // opaque payload, may be empty
};

void save_checkpoint(const std::string& path, const Hvae& model,
                     const AdamState* opt, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  CheckpointMeta meta;
  std::unique_ptr<Hvae> model;
  std::optional<AdamState> opt;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

uint64_t fnv1a_file(const std::string& path);

}  // namespace epsseg

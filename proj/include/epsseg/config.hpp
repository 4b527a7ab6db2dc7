#pragma once

#include <string>
#include <vector>

#include "epsseg/hvae.hpp"
#include "epsseg/trainer.hpp"

namespace epsseg {

struct DataConfig {
  std::string dir = "data/synthetic";
  std::string train_manifest = "manifest_train.txt";
  std::string test_manifest = "manifest_test.txt";
  int num_classes = 3;
  double budget_fraction = 0.0005;
  bool stratified = true;
  uint64_t label_seed = 0;
  std::string sparse_labels;  // optional pre-sampled CSV
};

struct InferenceConfig {
  int stride = 4;
  int batch_size = 128;
  bool apply_mask = false;
};

/// One configuration document for every command. Unknown keys are rejected
/// with their full path; command-line --set overrides mutate single keys.
struct RunConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  InferenceConfig inference;

  static RunConfig defaults();
  static RunConfig load(const std::string& path, const std::vector<std::string>& overrides);
  static RunConfig parse(const std::string& json_text, const std::vector<std::string>& overrides);
  std::string to_json() const;
};

/// Error with a config-schema cause; the CLI maps it to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace epsseg

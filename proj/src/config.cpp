#include "epsseg/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace epsseg {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& section,
                const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown config key '" + (section.empty() ? it.key() : section + "." + it.key()) + "'");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& section) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + section + "." + key + "' has the wrong type");
  }
}

void parse_data(const json& j, DataConfig& c) {
  check_keys(j, "data",
             {"dir", "train_manifest", "test_manifest", "num_classes", "budget_fraction",
              "stratified", "label_seed", "sparse_labels"});
  c.dir = get_or<std::string>(j, "dir", c.dir, "data");
  c.train_manifest = get_or<std::string>(j, "train_manifest", c.train_manifest, "data");
  c.test_manifest = get_or<std::string>(j, "test_manifest", c.test_manifest, "data");
  c.num_classes = get_or<int>(j, "num_classes", c.num_classes, "data");
  c.budget_fraction = get_or<double>(j, "budget_fraction", c.budget_fraction, "data");
  c.stratified = get_or<bool>(j, "stratified", c.stratified, "data");
  c.label_seed = get_or<uint64_t>(j, "label_seed", c.label_seed, "data");
  c.sparse_labels = get_or<std::string>(j, "sparse_labels", c.sparse_labels, "data");
  if (c.budget_fraction <= 0 || c.budget_fraction > 1)
    throw ConfigError("data.budget_fraction must lie in (0,1]");
  if (c.num_classes < 2) throw ConfigError("data.num_classes must be >= 2");
}

void parse_model(const json& j, ModelConfig& c) {
  check_keys(j, "model",
             {"num_levels", "channels", "latent_channels", "top_latent_dim", "num_classes",
              "patch_side", "blocks_per_level", "classifier_hidden", "use_gmm", "use_film",
              "gmm_mean_scale", "sigma_floor"});
  c.num_levels = get_or<int>(j, "num_levels", c.num_levels, "model");
  c.channels = get_or<std::vector<int>>(j, "channels", c.channels, "model");
  c.latent_channels = get_or<std::vector<int>>(j, "latent_channels", c.latent_channels, "model");
  c.top_latent_dim = get_or<int>(j, "top_latent_dim", c.top_latent_dim, "model");
  c.num_classes = get_or<int>(j, "num_classes", c.num_classes, "model");
  c.patch_side = get_or<int>(j, "patch_side", c.patch_side, "model");
  c.blocks_per_level = get_or<int>(j, "blocks_per_level", c.blocks_per_level, "model");
  c.classifier_hidden = get_or<int>(j, "classifier_hidden", c.classifier_hidden, "model");
  c.use_gmm = get_or<bool>(j, "use_gmm", c.use_gmm, "model");
  c.use_film = get_or<bool>(j, "use_film", c.use_film, "model");
  c.gmm_mean_scale = get_or<double>(j, "gmm_mean_scale", c.gmm_mean_scale, "model");
  c.sigma_floor = get_or<double>(j, "sigma_floor", c.sigma_floor, "model");
}

void parse_train(const json& j, TrainConfig& c) {
  check_keys(j, "train",
             {"steps", "batch_size", "lr", "lr_min_ratio", "cosine_decay", "seed", "tau_min",
              "tau_rate", "tau_time_scale", "checkpoint_interval", "val_interval",
              "kl_ramp_fraction", "unlabeled_fraction", "ce_on_softmax", "val_stride",
              "out_dir"});
  c.steps = get_or<int64_t>(j, "steps", c.steps, "train");
  c.batch_size = get_or<int>(j, "batch_size", c.batch_size, "train");
  c.lr = get_or<double>(j, "lr", c.lr, "train");
  c.lr_min_ratio = get_or<double>(j, "lr_min_ratio", c.lr_min_ratio, "train");
  c.cosine_decay = get_or<bool>(j, "cosine_decay", c.cosine_decay, "train");
  c.seed = get_or<uint64_t>(j, "seed", c.seed, "train");
  c.tau_min = get_or<double>(j, "tau_min", c.tau_min, "train");
  c.tau_rate = get_or<double>(j, "tau_rate", c.tau_rate, "train");
  c.tau_time_scale = get_or<double>(j, "tau_time_scale", c.tau_time_scale, "train");
  c.checkpoint_interval = get_or<int64_t>(j, "checkpoint_interval", c.checkpoint_interval, "train");
  c.val_interval = get_or<int64_t>(j, "val_interval", c.val_interval, "train");
  c.kl_ramp_fraction = get_or<double>(j, "kl_ramp_fraction", c.kl_ramp_fraction, "train");
  c.unlabeled_fraction = get_or<double>(j, "unlabeled_fraction", c.unlabeled_fraction, "train");
  c.ce_on_softmax = get_or<bool>(j, "ce_on_softmax", c.ce_on_softmax, "train");
  c.val_stride = get_or<int>(j, "val_stride", c.val_stride, "train");
  c.out_dir = get_or<std::string>(j, "out_dir", c.out_dir, "train");
}

void parse_loss(const json& j, LossWeights& w) {
  check_keys(j, "loss", {"alpha1", "alpha2", "alpha3", "lambda", "margin", "entropy_weight"});
  w.alpha1 = get_or<double>(j, "alpha1", w.alpha1, "loss");
  w.alpha2 = get_or<double>(j, "alpha2", w.alpha2, "loss");
  w.alpha3 = get_or<double>(j, "alpha3", w.alpha3, "loss");
  w.lambda = get_or<double>(j, "lambda", w.lambda, "loss");
  w.margin = get_or<double>(j, "margin", w.margin, "loss");
  w.entropy_weight = get_or<double>(j, "entropy_weight", w.entropy_weight, "loss");
}

void parse_mask(const json& j, TrainConfig& c) {
  check_keys(j, "mask", {"side", "fill_value"});
  c.mask_side = get_or<int>(j, "side", c.mask_side, "mask");
  c.mask_fill = get_or<double>(j, "fill_value", c.mask_fill, "mask");
}

void parse_inference(const json& j, InferenceConfig& c) {
  check_keys(j, "inference", {"stride", "batch_size", "apply_mask"});
  c.stride = get_or<int>(j, "stride", c.stride, "inference");
  c.batch_size = get_or<int>(j, "batch_size", c.batch_size, "inference");
  c.apply_mask = get_or<bool>(j, "apply_mask", c.apply_mask, "inference");
  if (c.stride < 1) throw ConfigError("inference.stride must be >= 1");
}

json value_from_string(const std::string& s) {
  try {
    return json::parse(s);
  } catch (const json::exception&) {
    return json(s);  // bare strings stay strings
  }
}

void apply_override(json& doc, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + spec + "' must look like section.key=value");
  const std::string path = spec.substr(0, eq);
  const json value = value_from_string(spec.substr(eq + 1));
  json* cur = &doc;
  size_t start = 0;
  while (true) {
    const size_t dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + spec + "' has an empty path segment");
    if (dot == std::string::npos) {
      (*cur)[part] = value;
      break;
    }
    cur = &(*cur)[part];
    start = dot + 1;
  }
}

}  // namespace

RunConfig RunConfig::defaults() { return RunConfig{}; }

RunConfig RunConfig::parse(const std::string& json_text, const std::vector<std::string>& overrides) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  for (const auto& o : overrides) apply_override(doc, o);

  check_keys(doc, "", {"data", "model", "train", "loss", "mask", "inference"});
  RunConfig c;
  if (doc.contains("data")) parse_data(doc["data"], c.data);
  if (doc.contains("model")) parse_model(doc["model"], c.model);
  if (doc.contains("train")) parse_train(doc["train"], c.train);
  if (doc.contains("loss")) parse_loss(doc["loss"], c.train.weights);
  if (doc.contains("mask")) parse_mask(doc["mask"], c.train);
  if (doc.contains("inference")) parse_inference(doc["inference"], c.inference);

  c.model.num_classes = c.data.num_classes;
  try {
    c.model.validate();
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.train.mask_side % 2 == 0 || c.train.mask_side < 1 ||
      c.train.mask_side > c.model.patch_side - 2)
    throw ConfigError("mask.side must be odd, positive and leave a border inside the patch");
  return c;
}

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(text, overrides);
}

std::string RunConfig::to_json() const {
  json j;
  j["data"]["dir"] = data.dir;
  j["data"]["train_manifest"] = data.train_manifest;
  j["data"]["test_manifest"] = data.test_manifest;
  j["data"]["num_classes"] = data.num_classes;
  j["data"]["budget_fraction"] = data.budget_fraction;
  j["data"]["stratified"] = data.stratified;
  j["data"]["label_seed"] = data.label_seed;
  j["data"]["sparse_labels"] = data.sparse_labels;
  j["model"] = json::parse(model.to_json());
  json t = json::parse(train.to_json());
  j["loss"]["alpha1"] = t["alpha1"];
  j["loss"]["alpha2"] = t["alpha2"];
  j["loss"]["alpha3"] = t["alpha3"];
  j["loss"]["lambda"] = t["lambda"];
  j["loss"]["margin"] = t["margin"];
  j["loss"]["entropy_weight"] = t["entropy_weight"];
  j["mask"]["side"] = t["mask_side"];
  j["mask"]["fill_value"] = t["mask_fill"];
  for (const char* k : {"alpha1", "alpha2", "alpha3", "lambda", "margin", "entropy_weight",
                        "mask_side", "mask_fill"})
    t.erase(k);
  j["train"] = t;
  j["inference"]["stride"] = inference.stride;
  j["inference"]["batch_size"] = inference.batch_size;
  j["inference"]["apply_mask"] = inference.apply_mask;
  return j.dump(2);
}

}  // namespace epsseg

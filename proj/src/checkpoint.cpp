#include "epsseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace epsseg {

namespace {

constexpr char kMagic[8] = {'E', 'P', 'S', 'S', 'E', 'G', 'C', 'K'};

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

void write_array(std::ostream& os, const std::string& name, const Tensor& t) {
  write_u32(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(os, static_cast<uint32_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) write_u32(os, static_cast<uint32_t>(t.dim(i)));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

std::pair<std::string, Tensor> read_array(std::istream& is) {
  const uint32_t nlen = read_u32(is);
  std::string name(nlen, '\0');
  is.read(name.data(), nlen);
  const uint32_t ndim = read_u32(is);
  std::vector<int> shape(ndim);
  for (uint32_t i = 0; i < ndim; ++i) shape[i] = static_cast<int>(read_u32(is));
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!is) throw std::runtime_error("checkpoint: truncated array " + name);
  return {name, t};
}

}  // namespace

void save_checkpoint(const std::string& path, const Hvae& model,
                     const AdamState* opt, const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write(kMagic, 8);

  nlohmann::json j;
  j["version"] = kCheckpointVersion;
  j["step"] = meta.step;
  j["seed"] = meta.seed;
  j["best_dice"] = meta.best_dice;
  j["model"] = nlohmann::json::parse(model.config().to_json());
  if (!meta.train_config_json.empty())
    j["train"] = nlohmann::json::parse(meta.train_config_json);
  j["has_optimizer"] = opt != nullptr;
  if (opt) j["adam_t"] = opt->t;
  const std::string js = j.dump();
  write_u64(os, js.size());
  os.write(js.data(), static_cast<std::streamsize>(js.size()));

  const auto& params = model.params().all();
  uint32_t n_arrays = static_cast<uint32_t>(params.size()) + 3;
  if (opt) n_arrays += 2 * static_cast<uint32_t>(params.size());
  write_u32(os, n_arrays);
  for (const auto& p : params) write_array(os, p->name, p->value);
  write_array(os, "gmm.means", model.prior().means);
  write_array(os, "gmm.stds", model.prior().stds);
  write_array(os, "gmm.weights", model.prior().weights);
  if (opt) {
    for (size_t i = 0; i < params.size(); ++i) write_array(os, "adam.m." + params[i]->name, opt->m[i]);
    for (size_t i = 0; i < params.size(); ++i) write_array(os, "adam.v." + params[i]->name, opt->v[i]);
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);

  const uint64_t jlen = read_u64(is);
  std::string js(jlen, '\0');
  is.read(js.data(), static_cast<std::streamsize>(jlen));
  nlohmann::json j = nlohmann::json::parse(js);
  if (j.at("version").get<std::string>() != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path);

  LoadedCheckpoint out;
  out.meta.step = j.at("step").get<int64_t>();
  out.meta.seed = j.at("seed").get<uint64_t>();
  out.meta.best_dice = j.at("best_dice").get<double>();
  out.meta.model_config_json = j.at("model").dump();
  if (j.contains("train")) out.meta.train_config_json = j.at("train").dump();

  ModelConfig cfg = ModelConfig::from_json(out.meta.model_config_json);
  out.model = std::make_unique<Hvae>(cfg, /*init_seed=*/0);

  const bool has_opt = j.at("has_optimizer").get<bool>();
  if (has_opt) {
    out.opt = AdamState::init_for(out.model->params());
    out.opt->t = j.at("adam_t").get<int64_t>();
  }

  const uint32_t n_arrays = read_u32(is);
  for (uint32_t i = 0; i < n_arrays; ++i) {
    auto [name, t] = read_array(is);
    auto assign = [&](Tensor& dst) {
      if (!dst.same_shape(t))
        throw std::runtime_error("checkpoint: shape mismatch for " + name);
      std::memcpy(dst.data(), t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
    };
    if (name == "gmm.means") {
      assign(const_cast<GmmPrior&>(out.model->prior()).means);
    } else if (name == "gmm.stds") {
      assign(const_cast<GmmPrior&>(out.model->prior()).stds);
    } else if (name == "gmm.weights") {
      assign(const_cast<GmmPrior&>(out.model->prior()).weights);
    } else if (name.rfind("adam.m.", 0) == 0 || name.rfind("adam.v.", 0) == 0) {
      if (!out.opt) throw std::runtime_error("checkpoint: unexpected optimizer array " + name);
      const bool is_m = name[5] == 'm';
      const std::string pname = name.substr(7);
      const auto& params = out.model->params().all();
      bool found = false;
      for (size_t k = 0; k < params.size(); ++k)
        if (params[k]->name == pname) {
          assign(is_m ? out.opt->m[k] : out.opt->v[k]);
          found = true;
          break;
        }
      if (!found) throw std::runtime_error("checkpoint: optimizer array for unknown param " + pname);
    } else {
      auto p = out.model->params().find(name);
      if (!p) throw std::runtime_error("checkpoint: unknown parameter " + name);
      assign(p->value);
    }
  }
  return out;
}

uint64_t fnv1a_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  uint64_t h = 1469598103934665603ULL;
  char buf[65536];
  while (is) {
    is.read(buf, sizeof(buf));
    const std::streamsize n = is.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace epsseg

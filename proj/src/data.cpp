#include "epsseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "json.hpp"

namespace fs = std::filesystem;

namespace epsseg {

int reflect_index(int i, int size) {
  if (size == 1) return 0;
  while (i < 0 || i >= size) {
    if (i < 0) i = -i;
    if (i >= size) i = 2 * size - 2 - i;
  }
  return i;
}

Window mask_window(int patch_side, int mask_side) {
  Window w;
  w.side = mask_side;
  w.r0 = (patch_side - mask_side) / 2;
  w.c0 = w.r0;
  return w;
}

namespace {

void validate_mask(const MaskSpec& m, int patch_side) {
  if (m.side < 1 || m.side % 2 == 0)
    throw std::invalid_argument("MaskSpec: mask side must be odd and positive, got " +
                                std::to_string(m.side));
  if (m.side > patch_side - 2)
    throw std::invalid_argument("MaskSpec: mask side " + std::to_string(m.side) +
                                " must leave a border inside patch side " +
                                std::to_string(patch_side));
}

Tensor normalize_to_unit(const cv::Mat& m) {
  Tensor t({m.rows, m.cols});
  double mn = 0, mx = 0;
  cv::minMaxLoc(m, &mn, &mx);
  const double range = mx - mn;
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) {
      double v = m.type() == CV_16UC1 ? m.at<uint16_t>(r, c) : m.at<uint8_t>(r, c);
      // Constant images map to all zeros.
      t[static_cast<int64_t>(r) * m.cols + c] = range > 0 ? (v - mn) / range : 0.0;
    }
  return t;
}

cv::Mat read_gray(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw std::runtime_error("cannot read image: " + path);
  if (m.channels() != 1)
    throw std::runtime_error("expected single-channel grayscale image: " + path);
  if (m.type() != CV_8UC1 && m.type() != CV_16UC1)
    throw std::runtime_error("expected 8- or 16-bit grayscale image: " + path);
  return m;
}

}  // namespace

std::vector<LabeledImage> load_images(const std::string& dir, const std::string& manifest,
                                      int num_classes, bool require_labels) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open manifest: " + manifest);
  std::vector<LabeledImage> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::string img_rel, lab_rel;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      img_rel = line;
    } else {
      img_rel = line.substr(0, tab);
      lab_rel = line.substr(tab + 1);
    }
    if (require_labels && lab_rel.empty())
      throw std::runtime_error("manifest line " + std::to_string(lineno) +
                               ": missing label path");

    const std::string img_path = (fs::path(dir) / img_rel).string();
    cv::Mat img = read_gray(img_path);
    LabeledImage li;
    li.id = fs::path(img_rel).stem().string();
    li.h = img.rows;
    li.w = img.cols;
    li.pixels = normalize_to_unit(img);

    if (!lab_rel.empty()) {
      const std::string lab_path = (fs::path(dir) / lab_rel).string();
      cv::Mat lab = read_gray(lab_path);
      if (lab.rows != img.rows || lab.cols != img.cols)
        throw std::runtime_error("image/label shape mismatch for " + img_rel + ": image (" +
                                 std::to_string(img.rows) + "," + std::to_string(img.cols) +
                                 ") vs label (" + std::to_string(lab.rows) + "," +
                                 std::to_string(lab.cols) + ")");
      li.labels.resize(static_cast<size_t>(lab.rows) * lab.cols);
      for (int r = 0; r < lab.rows; ++r)
        for (int c = 0; c < lab.cols; ++c) {
          const int v = lab.type() == CV_16UC1 ? lab.at<uint16_t>(r, c) : lab.at<uint8_t>(r, c);
          if (v >= num_classes)
            throw std::runtime_error("label value " + std::to_string(v) + " >= num_classes " +
                                     std::to_string(num_classes) + " in " + lab_rel);
          li.labels[static_cast<size_t>(r) * lab.cols + c] = v;
        }
    }
    out.push_back(std::move(li));
  }
  return out;
}

void write_image_png16(const std::string& path, const Tensor& pixels) {
  const int h = pixels.dim(0), w = pixels.dim(1);
  cv::Mat m(h, w, CV_16UC1);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double v = pixels[static_cast<int64_t>(r) * w + c];
      v = std::min(1.0, std::max(0.0, v));
      m.at<uint16_t>(r, c) = static_cast<uint16_t>(std::lround(v * 65535.0));
    }
  if (!cv::imwrite(path, m)) throw std::runtime_error("cannot write " + path);
}

void write_label_png(const std::string& path, const std::vector<int>& labels, int h, int w) {
  cv::Mat m(h, w, CV_8UC1);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      m.at<uint8_t>(r, c) = static_cast<uint8_t>(labels[static_cast<size_t>(r) * w + c]);
  if (!cv::imwrite(path, m)) throw std::runtime_error("cannot write " + path);
}

namespace {

// Per-class texture families: constant gray, oriented stripes, blob field.
struct TextureSet {
  int num_classes;
  std::vector<Tensor> canvas;  // one full-size texture per class
};

TextureSet render_textures(const SynthSpec& spec, Rng& rng) {
  const int S = spec.image_side;
  TextureSet ts;
  ts.num_classes = spec.num_classes;
  for (int c = 0; c < spec.num_classes; ++c) {
    Tensor canvas({S, S});
    const int family = c % 3;
    const int variant = c / 3;
    if (family == 0) {
      canvas.fill(0.35 + 0.18 * variant);
    } else if (family == 1) {
      const double theta = (30.0 + 47.0 * variant) * M_PI / 180.0;
      const double wavelength = 9.0 + 4.0 * variant;
      const double phase = rng.uniform() * 2.0 * M_PI;
      const double kx = std::cos(theta) * 2.0 * M_PI / wavelength;
      const double ky = std::sin(theta) * 2.0 * M_PI / wavelength;
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x)
          canvas[static_cast<int64_t>(y) * S + x] =
              0.5 + 0.35 * std::sin(kx * x + ky * y + phase);
    } else {
      canvas.fill(0.15);
      const int radius = 3 + variant;
      const int n_blobs = S * S / 56;
      for (int b = 0; b < n_blobs; ++b) {
        const int cy = rng.uniform_int(S);
        const int cx = rng.uniform_int(S);
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx) {
            if (dy * dy + dx * dx > radius * radius) continue;
            const int y = cy + dy, x = cx + dx;
            if (y < 0 || y >= S || x < 0 || x >= S) continue;
            canvas[static_cast<int64_t>(y) * S + x] = 0.85;
          }
      }
    }
    ts.canvas.push_back(std::move(canvas));
  }
  return ts;
}

}  // namespace

std::vector<LabeledImage> synth_generate(const SynthSpec& spec) {
  if (spec.num_classes < 2) throw std::invalid_argument("synth_generate: num_classes >= 2");
  if (spec.noise_std < 0) throw std::invalid_argument("synth_generate: noise_std must be >= 0");
  if (spec.image_side < 16) throw std::invalid_argument("synth_generate: image_side too small");

  const int S = spec.image_side;
  std::vector<LabeledImage> out;
  for (int idx = 0; idx < spec.num_images; ++idx) {
    Rng rng(mix_seed({spec.seed, 0x73796e7468ULL, static_cast<uint64_t>(idx)}));

    // Voronoi label map; the first C sites carry distinct classes, so every
    // class owns at least its own site pixel.
    const int n_sites = 3 * spec.num_classes;
    std::vector<std::pair<int, int>> sites;
    std::set<std::pair<int, int>> used;
    while (static_cast<int>(sites.size()) < n_sites) {
      std::pair<int, int> p{rng.uniform_int(S), rng.uniform_int(S)};
      if (used.insert(p).second) sites.push_back(p);
    }
    std::vector<int> site_class(n_sites);
    for (int i = 0; i < n_sites; ++i)
      site_class[i] = i < spec.num_classes ? i : rng.uniform_int(spec.num_classes);

    LabeledImage img;
    img.id = "synth_" + std::to_string(idx);
    img.h = S;
    img.w = S;
    img.labels.resize(static_cast<size_t>(S) * S);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        int best = 0;
        int64_t best_d = INT64_MAX;
        for (int s = 0; s < n_sites; ++s) {
          const int64_t dy = y - sites[s].first, dx = x - sites[s].second;
          const int64_t d = dy * dy + dx * dx;
          if (d < best_d) {
            best_d = d;
            best = s;
          }
        }
        img.labels[static_cast<size_t>(y) * S + x] = site_class[best];
      }

    TextureSet ts = render_textures(spec, rng);
    img.pixels = Tensor({S, S});
    for (int64_t i = 0; i < static_cast<int64_t>(S) * S; ++i)
      img.pixels[i] = ts.canvas[img.labels[i]][i];
    if (spec.noise_std > 0) {
      for (int64_t i = 0; i < img.pixels.numel(); ++i) {
        double v = img.pixels[i] + spec.noise_std * rng.normal();
        img.pixels[i] = std::min(1.0, std::max(0.0, v));
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

void write_synth_dataset(const SynthSpec& spec, const std::string& dir) {
  fs::create_directories(dir);
  auto images = synth_generate(spec);
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
  for (const auto& img : images) {
    const std::string img_name = img.id + ".png";
    const std::string lab_name = img.id + "_labels.png";
    write_image_png16((fs::path(dir) / img_name).string(), img.pixels);
    write_label_png((fs::path(dir) / lab_name).string(), img.labels, img.h, img.w);
    manifest << img_name << "\t" << lab_name << "\n";
  }
  nlohmann::json j;
  j["num_classes"] = spec.num_classes;
  j["image_side"] = spec.image_side;
  j["num_images"] = spec.num_images;
  j["noise_std"] = spec.noise_std;
  j["seed"] = spec.seed;
  std::ofstream sidecar(fs::path(dir) / "synth_spec.json");
  sidecar << j.dump(2) << "\n";
}

void save_sparse_csv(const SparseLabelSet& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "image_id,row,col,class\n";
  for (const auto& e : s.entries)
    out << e.image_id << "," << e.row << "," << e.col << "," << e.cls << "\n";
}

SparseLabelSet load_sparse_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "image_id,row,col,class")
    throw std::runtime_error("bad sparse label CSV header in " + path);
  SparseLabelSet s;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    SparseEntry e;
    std::string tok;
    std::getline(is, e.image_id, ',');
    std::getline(is, tok, ',');
    e.row = std::stoi(tok);
    std::getline(is, tok, ',');
    e.col = std::stoi(tok);
    std::getline(is, tok, ',');
    e.cls = std::stoi(tok);
    s.entries.push_back(std::move(e));
  }
  return s;
}

std::vector<uint8_t> eligibility_map(const LabeledImage& img, int mask_side) {
  if (img.labels.empty()) throw std::invalid_argument("eligibility_map: unlabeled image");
  if (mask_side < 1 || mask_side % 2 == 0)
    throw std::invalid_argument("eligibility_map: mask side must be odd");
  const int k = mask_side / 2;
  std::vector<uint8_t> ok(img.labels.size(), 0);
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c) {
      const int want = img.labels[static_cast<size_t>(r) * img.w + c];
      bool pure = true;
      // Reflection only mirrors in-image pixels, so checking the clipped
      // window is equivalent to checking the padded one.
      for (int dr = -k; dr <= k && pure; ++dr) {
        const int rr = r + dr;
        if (rr < 0 || rr >= img.h) continue;
        for (int dc = -k; dc <= k; ++dc) {
          const int cc = c + dc;
          if (cc < 0 || cc >= img.w) continue;
          if (img.labels[static_cast<size_t>(rr) * img.w + cc] != want) {
            pure = false;
            break;
          }
        }
      }
      ok[static_cast<size_t>(r) * img.w + c] = pure ? 1 : 0;
    }
  return ok;
}

SparseLabelSet sample_sparse_labels(const std::vector<LabeledImage>& images,
                                    double budget_fraction, uint64_t seed,
                                    bool stratified, int mask_side,
                                    std::vector<std::string>* warnings) {
  if (budget_fraction <= 0 || budget_fraction > 1)
    throw std::invalid_argument("sample_sparse_labels: budget_fraction must lie in (0,1]");
  if (images.empty()) throw std::invalid_argument("sample_sparse_labels: no images");

  int64_t total_pixels = 0;
  int num_classes = 0;
  for (const auto& img : images) {
    total_pixels += static_cast<int64_t>(img.h) * img.w;
    for (int v : img.labels) num_classes = std::max(num_classes, v + 1);
  }
  const int64_t budget = static_cast<int64_t>(budget_fraction * total_pixels);

  // Eligible pixels grouped by class, in deterministic scan order.
  std::vector<std::vector<SparseEntry>> by_class(num_classes);
  for (size_t ii = 0; ii < images.size(); ++ii) {
    const auto& img = images[ii];
    auto ok = eligibility_map(img, mask_side);
    for (int r = 0; r < img.h; ++r)
      for (int c = 0; c < img.w; ++c)
        if (ok[static_cast<size_t>(r) * img.w + c]) {
          SparseEntry e;
          e.image_id = img.id;
          e.row = r;
          e.col = c;
          e.cls = img.labels[static_cast<size_t>(r) * img.w + c];
          by_class[e.cls].push_back(std::move(e));
        }
  }

  for (int c = 0; c < num_classes; ++c)
    if (by_class[c].empty() && warnings)
      warnings->push_back("class " + std::to_string(c) +
                          " has no eligible pixels and was skipped");

  SparseLabelSet out;
  out.budget_fraction = budget_fraction;

  if (stratified) {
    for (int c = 0; c < num_classes; ++c) {
      Rng r(mix_seed({seed, 0x636c617373ULL, static_cast<uint64_t>(c)}));
      r.shuffle(by_class[c]);
    }
    std::vector<int64_t> taken(num_classes, 0);
    int64_t remaining = budget;
    bool progress = true;
    while (remaining > 0 && progress) {
      progress = false;
      for (int c = 0; c < num_classes && remaining > 0; ++c) {
        if (taken[c] < static_cast<int64_t>(by_class[c].size())) {
          out.entries.push_back(by_class[c][taken[c]++]);
          --remaining;
          progress = true;
        }
      }
    }
  } else {
    std::vector<SparseEntry> pool;
    for (auto& v : by_class)
      for (auto& e : v) pool.push_back(e);
    Rng r(mix_seed({seed, 0x706f6f6cULL}));
    r.shuffle(pool);
    const int64_t take = std::min<int64_t>(budget, pool.size());
    out.entries.assign(pool.begin(), pool.begin() + take);
  }

  if (out.entries.empty())
    throw std::runtime_error("sample_sparse_labels: empty result (budget " +
                             std::to_string(budget) + ", eligible pixels exhausted)");

  std::sort(out.entries.begin(), out.entries.end(), [](const SparseEntry& a, const SparseEntry& b) {
    return std::tie(a.image_id, a.row, a.col) < std::tie(b.image_id, b.row, b.col);
  });
  return out;
}

PatchSample extract_patch(const LabeledImage& img, int row, int col, int patch_side,
                          const MaskSpec& mask) {
  if (patch_side % 2 == 0)
    throw std::invalid_argument("extract_patch: patch_side must be odd (unique center), got " +
                                std::to_string(patch_side));
  validate_mask(mask, patch_side);
  if (patch_side > 2 * img.h - 1 || patch_side > 2 * img.w - 1)
    throw std::invalid_argument("extract_patch: patch does not fit with reflective padding");
  if (row < 0 || row >= img.h || col < 0 || col >= img.w)
    throw std::invalid_argument("extract_patch: center outside image");

  const int half = patch_side / 2;
  PatchSample s;
  s.row = row;
  s.col = col;
  s.image_id = img.id;
  s.patch = Tensor({patch_side, patch_side});
  for (int r = 0; r < patch_side; ++r) {
    const int sr = reflect_index(row - half + r, img.h);
    for (int c = 0; c < patch_side; ++c) {
      const int sc = reflect_index(col - half + c, img.w);
      s.patch[static_cast<int64_t>(r) * patch_side + c] =
          img.pixels[static_cast<int64_t>(sr) * img.w + sc];
    }
  }
  const Window w = mask_window(patch_side, mask.side);
  s.mask_target = Tensor({mask.side, mask.side});
  s.masked_patch = s.patch.clone();
  for (int r = 0; r < mask.side; ++r)
    for (int c = 0; c < mask.side; ++c) {
      s.mask_target[static_cast<int64_t>(r) * mask.side + c] =
          s.patch[static_cast<int64_t>(w.r0 + r) * patch_side + (w.c0 + c)];
      s.masked_patch[static_cast<int64_t>(w.r0 + r) * patch_side + (w.c0 + c)] =
          mask.fill_value;
    }
  return s;
}

BatchStream::BatchStream(const std::vector<LabeledImage>& images,
                         const SparseLabelSet& labels, BatchConfig cfg, uint64_t seed)
    : images_(&images), entries_(labels.entries), cfg_(cfg), seed_(seed) {
  if (cfg_.batch_size < 2)
    throw std::invalid_argument("BatchStream: batch_size must be >= 2");
  if (cfg_.unlabeled_fraction < 0 || cfg_.unlabeled_fraction > 1)
    throw std::invalid_argument("BatchStream: unlabeled_fraction must lie in [0,1]");
  validate_mask(cfg_.mask, cfg_.patch_side);

  std::map<std::string, int> by_id;
  for (size_t i = 0; i < images.size(); ++i) by_id[images[i].id] = static_cast<int>(i);
  image_of_entry_.reserve(entries_.size());
  for (const auto& e : entries_) {
    auto it = by_id.find(e.image_id);
    if (it == by_id.end())
      throw std::invalid_argument("BatchStream: sparse entry references unknown image " +
                                  e.image_id);
    image_of_entry_.push_back(it->second);
  }

  pixel_cum_.resize(images.size());
  int64_t acc = 0;
  for (size_t i = 0; i < images.size(); ++i) {
    acc += static_cast<int64_t>(images[i].h) * images[i].w;
    pixel_cum_[i] = acc;
  }

  std::set<int> classes;
  for (const auto& e : entries_) classes.insert(e.cls);
  distinct_classes_ = static_cast<int>(classes.size());
  if (distinct_classes_ < 2 && cfg_.unlabeled_fraction < 1.0)
    warnings_.push_back("only " + std::to_string(distinct_classes_) +
                        " labeled class(es) available: negative pairs are impossible");

  order_.resize(entries_.size());
  for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
  reshuffle();
}

void BatchStream::reshuffle() {
  Rng r(mix_seed({seed_, 0x65706f6368ULL, static_cast<uint64_t>(epoch_)}));
  r.shuffle(order_);
  cursor_ = 0;
}

Batch BatchStream::build(bool materialize) {
  const int B = cfg_.batch_size;
  const int P = cfg_.patch_side;
  Rng rng(mix_seed({seed_, 0x6261746368ULL, static_cast<uint64_t>(step_)}));

  // Slot plan: labeled vs unlabeled, then concrete centers.
  std::vector<int> slot_entry(B, -1);          // entry index or -1 for unlabeled
  std::vector<std::pair<int, int64_t>> uncoord(B, {-1, 0});
  for (int s = 0; s < B; ++s) {
    const bool unlabeled = entries_.empty() || rng.uniform() < cfg_.unlabeled_fraction;
    if (unlabeled) {
      const int64_t g = static_cast<int64_t>(rng.uniform() * static_cast<double>(pixel_cum_.back()));
      int img = 0;
      while (pixel_cum_[img] <= g) ++img;
      const int64_t local = g - (img == 0 ? 0 : pixel_cum_[img - 1]);
      uncoord[s] = {img, local};
    } else {
      if (cursor_ >= order_.size()) {
        ++epoch_;
        reshuffle();
      }
      slot_entry[s] = order_[cursor_++];
    }
  }

  // Keep at least two distinct labels per batch when the label set allows it.
  if (distinct_classes_ >= 2) {
    int first = -1;
    bool all_same = true;
    int labeled_slots = 0, last_labeled = -1;
    for (int s = 0; s < B; ++s) {
      if (slot_entry[s] < 0) continue;
      ++labeled_slots;
      last_labeled = s;
      const int cls = entries_[slot_entry[s]].cls;
      if (first == -1)
        first = cls;
      else if (cls != first)
        all_same = false;
    }
    if (labeled_slots >= 2 && all_same) {
      std::vector<int> others;
      for (size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].cls != first) others.push_back(static_cast<int>(i));
      slot_entry[last_labeled] = others[rng.uniform_int(static_cast<int>(others.size()))];
    }
  }

  Batch b;
  b.window = mask_window(P, cfg_.mask.side);
  b.labels.resize(B, kNoLabel);
  if (materialize) {
    b.masked = Tensor({B, 1, P, P});
    b.full = Tensor({B, 1, P, P});
  }
  for (int s = 0; s < B; ++s) {
    int img_idx, row, col;
    if (slot_entry[s] >= 0) {
      const SparseEntry& e = entries_[slot_entry[s]];
      img_idx = image_of_entry_[slot_entry[s]];
      row = e.row;
      col = e.col;
      b.labels[s] = e.cls;
    } else {
      img_idx = uncoord[s].first;
      row = static_cast<int>(uncoord[s].second / (*images_)[img_idx].w);
      col = static_cast<int>(uncoord[s].second % (*images_)[img_idx].w);
    }
    if (materialize) {
      PatchSample ps = extract_patch((*images_)[img_idx], row, col, P, cfg_.mask);
      double* mdst = b.masked.data() + b.masked.idx4(s, 0, 0, 0);
      double* fdst = b.full.data() + b.full.idx4(s, 0, 0, 0);
      for (int64_t i = 0; i < ps.patch.numel(); ++i) {
        mdst[i] = ps.masked_patch[i];
        fdst[i] = ps.patch[i];
      }
    }
  }
  ++step_;
  return b;
}

Batch BatchStream::next() { return build(true); }

void BatchStream::skip(int64_t n) {
  for (int64_t i = 0; i < n; ++i) build(false);
}

}  // namespace epsseg

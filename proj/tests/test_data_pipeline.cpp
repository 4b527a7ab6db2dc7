#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <filesystem>
#include <set>

#include "epsseg/data.hpp"
#include "test_util.hpp"

using namespace epsseg;
using testutil::bitwise_equal;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("epsseg_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

LabeledImage flat_image(int side, int cls, double value, const std::string& id) {
  LabeledImage img;
  img.id = id;
  img.h = side;
  img.w = side;
  img.pixels = Tensor::full({side, side}, value);
  img.labels.assign(static_cast<size_t>(side) * side, cls);
  return img;
}

}  // namespace

TEST_CASE("reflect_index mirrors without repeating the edge") {
  CHECK(reflect_index(0, 5) == 0);
  CHECK(reflect_index(4, 5) == 4);
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(-2, 5) == 2);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(6, 5) == 2);
  CHECK(reflect_index(0, 1) == 0);
}

TEST_CASE("synthetic generation: classes, determinism, noiseless constancy") {
  SynthSpec spec;
  spec.num_classes = 3;
  spec.image_side = 96;
  spec.num_images = 8;
  spec.noise_std = 0.0;
  spec.seed = 5;

  auto images = synth_generate(spec);
  CHECK(images.size() == 8);
  std::set<int> classes;
  for (const auto& img : images)
    for (int v : img.labels) classes.insert(v);
  CHECK(classes.size() == 3);

  // class-0 regions are exactly constant without noise
  for (const auto& img : images) {
    double v0 = -1;
    for (size_t i = 0; i < img.labels.size(); ++i) {
      if (img.labels[i] != 0) continue;
      if (v0 < 0) v0 = img.pixels[i];
      CHECK(img.pixels[i] == v0);
    }
  }

  // bit-identical for the same seed
  auto again = synth_generate(spec);
  for (size_t i = 0; i < images.size(); ++i) {
    CHECK(bitwise_equal(images[i].pixels, again[i].pixels));
    CHECK(images[i].labels == again[i].labels);
  }

  SynthSpec bad = spec;
  bad.noise_std = -0.1;
  CHECK_THROWS(synth_generate(bad));
  bad = spec;
  bad.num_classes = 1;
  CHECK_THROWS(synth_generate(bad));
}

TEST_CASE("dataset write/load round trip and error reporting") {
  TempDir tmp;
  SynthSpec spec;
  spec.num_classes = 3;
  spec.image_side = 64;
  spec.num_images = 3;
  spec.noise_std = 0.02;
  spec.seed = 1;
  write_synth_dataset(spec, tmp.path.string());
  CHECK(fs::exists(tmp.path / "synth_spec.json"));

  auto images = load_images(tmp.path.string(), (tmp.path / "manifest.txt").string(), 3);
  CHECK(images.size() == 3);  // manifest of 3 pairs -> 3 images
  for (const auto& img : images) {
    CHECK(img.h == 64);
    CHECK(img.w == 64);
    for (int64_t i = 0; i < img.pixels.numel(); ++i) {
      CHECK(img.pixels[i] >= 0.0);
      CHECK(img.pixels[i] <= 1.0);
    }
  }

  // constant image normalizes to all zeros
  write_image_png16((tmp.path / "const.png").string(), Tensor::full({16, 16}, 0.5));
  write_label_png((tmp.path / "const_labels.png").string(),
                  std::vector<int>(256, 0), 16, 16);
  {
    std::ofstream m(tmp.path / "const_manifest.txt");
    m << "const.png\tconst_labels.png\n";
  }
  auto cimg = load_images(tmp.path.string(), (tmp.path / "const_manifest.txt").string(), 3);
  for (int64_t i = 0; i < cimg[0].pixels.numel(); ++i) CHECK(cimg[0].pixels[i] == 0.0);

  // label value >= C is rejected naming the offending file
  write_label_png((tmp.path / "bad_labels.png").string(), std::vector<int>(256, 3), 16, 16);
  {
    std::ofstream m(tmp.path / "bad_manifest.txt");
    m << "const.png\tbad_labels.png\n";
  }
  CHECK_THROWS_WITH_AS(
      load_images(tmp.path.string(), (tmp.path / "bad_manifest.txt").string(), 3),
      doctest::Contains("bad_labels.png"), std::runtime_error);

  // shape mismatch reports both shapes
  write_label_png((tmp.path / "small_labels.png").string(), std::vector<int>(64, 0), 8, 8);
  {
    std::ofstream m(tmp.path / "mismatch_manifest.txt");
    m << "const.png\tsmall_labels.png\n";
  }
  try {
    load_images(tmp.path.string(), (tmp.path / "mismatch_manifest.txt").string(), 3);
    CHECK(false);
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(16,16)") != std::string::npos);
    CHECK(msg.find("(8,8)") != std::string::npos);
  }
}

TEST_CASE("sparse label sampling: budget, determinism, stratification, purity") {
  SynthSpec spec;
  spec.num_classes = 3;
  spec.image_side = 256;
  spec.num_images = 2;
  spec.noise_std = 0.05;
  spec.seed = 2;
  auto images = synth_generate(spec);

  // 2 * 256 * 256 * 0.0005 = 65.5 -> at most 65 entries
  auto s = sample_sparse_labels(images, 0.0005, 7, true, 3);
  CHECK(static_cast<int64_t>(s.entries.size()) <= 65);
  CHECK(s.entries.size() > 0);

  // deterministic for a fixed seed
  auto s2 = sample_sparse_labels(images, 0.0005, 7, true, 3);
  REQUIRE(s.entries.size() == s2.entries.size());
  for (size_t i = 0; i < s.entries.size(); ++i) {
    CHECK(s.entries[i].image_id == s2.entries[i].image_id);
    CHECK(s.entries[i].row == s2.entries[i].row);
    CHECK(s.entries[i].col == s2.entries[i].col);
    CHECK(s.entries[i].cls == s2.entries[i].cls);
  }
  auto s3 = sample_sparse_labels(images, 0.0005, 8, true, 3);
  bool any_diff = s3.entries.size() != s.entries.size();
  for (size_t i = 0; !any_diff && i < s.entries.size(); ++i)
    any_diff = s.entries[i].row != s3.entries[i].row || s.entries[i].col != s3.entries[i].col;
  CHECK(any_diff);  // different seeds pick different pixels

  // stratified counts differ by at most one (all classes have huge populations)
  std::vector<int64_t> counts(3, 0);
  for (const auto& e : s.entries) ++counts[e.cls];
  const int64_t mx = std::max({counts[0], counts[1], counts[2]});
  const int64_t mn = std::min({counts[0], counts[1], counts[2]});
  CHECK(mx - mn <= 1);

  // every selected pixel has a class-pure mask window (mask invariant)
  for (const auto& e : s.entries) {
    const LabeledImage& img = e.image_id == images[0].id ? images[0] : images[1];
    const int k = 1;  // mask_side 3
    for (int dr = -k; dr <= k; ++dr)
      for (int dc = -k; dc <= k; ++dc) {
        const int r = e.row + dr, c = e.col + dc;
        if (r < 0 || r >= img.h || c < 0 || c >= img.w) continue;
        CHECK(img.labels[static_cast<size_t>(r) * img.w + c] == e.cls);
      }
  }

  // full budget selects every eligible pixel
  auto tiny = flat_image(16, 0, 0.3, "tiny");
  auto all = sample_sparse_labels({tiny}, 1.0, 0, false, 3);
  CHECK(all.entries.size() == 256);  // every window is pure on a flat image

  // zero-eligible class warns and is skipped; empty result throws
  LabeledImage island = flat_image(16, 0, 0.3, "island");
  island.labels[5 * 16 + 5] = 1;  // single pixel of class 1: no pure 3x3 window
  std::vector<std::string> warnings;
  auto sk = sample_sparse_labels({island}, 0.5, 0, true, 3, &warnings);
  REQUIRE(warnings.size() >= 1);
  CHECK(warnings[0].find("class 1") != std::string::npos);
  for (const auto& e : sk.entries) CHECK(e.cls == 0);

  LabeledImage checker = flat_image(16, 0, 0.3, "checker");
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) checker.labels[r * 16 + c] = (r + c) % 2;
  CHECK_THROWS(sample_sparse_labels({checker}, 0.5, 0, false, 3));

  CHECK_THROWS(sample_sparse_labels(images, 0.0, 0, true, 3));
  CHECK_THROWS(sample_sparse_labels(images, 1.5, 0, true, 3));
}

TEST_CASE("sparse label CSV round trip") {
  TempDir tmp;
  SparseLabelSet s;
  s.budget_fraction = 0.001;
  s.entries = {{"img_a", 3, 4, 0}, {"img_b", 10, 20, 2}};
  const std::string path = (tmp.path / "labels.csv").string();
  save_sparse_csv(s, path);
  auto r = load_sparse_csv(path);
  REQUIRE(r.entries.size() == 2);
  CHECK(r.entries[1].image_id == "img_b");
  CHECK(r.entries[1].row == 10);
  CHECK(r.entries[1].col == 20);
  CHECK(r.entries[1].cls == 2);

  std::ofstream bad(tmp.path / "bad.csv");
  bad << "wrong,header\n";
  bad.close();
  CHECK_THROWS(load_sparse_csv((tmp.path / "bad.csv").string()));
}

TEST_CASE("patch extraction: masking geometry and restoration") {
  SynthSpec spec;
  spec.num_classes = 3;
  spec.image_side = 64;
  spec.num_images = 1;
  spec.noise_std = 0.05;
  spec.seed = 3;
  auto img = synth_generate(spec)[0];

  MaskSpec mask;
  mask.side = 1;
  PatchSample ps = extract_patch(img, 30, 30, 9, mask);
  CHECK(ps.patch.dim(0) == 9);
  int zeroed = 0;
  for (int64_t i = 0; i < ps.patch.numel(); ++i)
    if (ps.masked_patch[i] != ps.patch[i]) {
      ++zeroed;
      CHECK(ps.masked_patch[i] == 0.0);
    }
  CHECK(zeroed <= 1);  // exactly the center (or 0 if the pixel was already 0)
  CHECK(ps.masked_patch[4 * 9 + 4] == 0.0);

  // mask side = patch side - 2 zeroes everything but a 1-pixel border
  MaskSpec big;
  big.side = 7;
  PatchSample pb = extract_patch(img, 30, 30, 9, big);
  int filled = 0;
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 9; ++c)
      if (pb.masked_patch[r * 9 + c] == 0.0 && r >= 1 && r <= 7 && c >= 1 && c <= 7) ++filled;
  CHECK(filled == 49);  // (9-2)^2
  for (int c = 0; c < 9; ++c) {
    CHECK(pb.masked_patch[c] == pb.patch[c]);
    CHECK(pb.masked_patch[8 * 9 + c] == pb.patch[8 * 9 + c]);
  }

  // restoring the mask target reproduces the patch bit-exactly
  Tensor restored = pb.masked_patch.clone();
  const Window w = mask_window(9, 7);
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 7; ++c)
      restored[(w.r0 + r) * 9 + (w.c0 + c)] = pb.mask_target[r * 7 + c];
  CHECK(bitwise_equal(restored, pb.patch));

  // contracts
  CHECK_THROWS_WITH_AS(extract_patch(img, 30, 30, 8, mask), doctest::Contains("odd"),
                       std::invalid_argument);
  MaskSpec even;
  even.side = 4;
  CHECK_THROWS(extract_patch(img, 30, 30, 9, even));
  MaskSpec toobig;
  toobig.side = 9;
  CHECK_THROWS(extract_patch(img, 30, 30, 9, toobig));
  CHECK_THROWS(extract_patch(img, -1, 30, 9, mask));

  // border centers use reflective padding
  PatchSample pc = extract_patch(img, 0, 0, 9, mask);
  CHECK(pc.patch[0 * 9 + 0] ==
        img.pixels[4 * 64 + 4]);  // reflected corner: (-4,-4) -> (4,4)
  CHECK(pc.patch[4 * 9 + 4] == img.pixels[0]);
}

TEST_CASE("batch stream: composition, determinism, label diversity") {
  SynthSpec spec;
  spec.num_classes = 3;
  spec.image_side = 96;
  spec.num_images = 2;
  spec.noise_std = 0.05;
  spec.seed = 4;
  auto images = synth_generate(spec);
  auto labels = sample_sparse_labels(images, 0.01, 1, true, 3);

  BatchConfig bc;
  bc.batch_size = 16;
  bc.unlabeled_fraction = 0.5;
  bc.patch_side = 17;
  bc.mask.side = 3;

  // unlabeled_fraction 0 -> everything labeled
  BatchConfig all_lab = bc;
  all_lab.unlabeled_fraction = 0.0;
  BatchStream s0(images, labels, all_lab, 11);
  for (int t = 0; t < 5; ++t) {
    Batch b = s0.next();
    for (int l : b.labels) CHECK(l != kNoLabel);
  }

  // expected unlabeled count ~ B/2 within 5% over 1000 batches
  BatchStream s1(images, labels, bc, 12);
  int64_t unlabeled = 0;
  for (int t = 0; t < 1000; ++t) {
    Batch b = s1.next();
    for (int l : b.labels) unlabeled += l == kNoLabel ? 1 : 0;
  }
  const double mean_unlabeled = static_cast<double>(unlabeled) / 1000.0;
  CHECK(mean_unlabeled > 8.0 * 0.95);
  CHECK(mean_unlabeled < 8.0 * 1.05);

  // identical seeds give identical streams
  BatchStream a(images, labels, bc, 13), b(images, labels, bc, 13);
  for (int t = 0; t < 5; ++t) {
    Batch ba = a.next(), bb = b.next();
    CHECK(bitwise_equal(ba.masked, bb.masked));
    CHECK(bitwise_equal(ba.full, bb.full));
    CHECK(ba.labels == bb.labels);
  }

  // skip() reproduces the same position in the stream
  BatchStream c(images, labels, bc, 13), d(images, labels, bc, 13);
  for (int t = 0; t < 3; ++t) c.next();
  d.skip(3);
  Batch bc1 = c.next(), bd1 = d.next();
  CHECK(bitwise_equal(bc1.masked, bd1.masked));
  CHECK(bc1.labels == bd1.labels);

  // batches with >= 2 labeled slots carry >= 2 distinct labels
  BatchStream e(images, labels, bc, 14);
  for (int t = 0; t < 200; ++t) {
    Batch bb = e.next();
    std::set<int> distinct;
    int labeled = 0;
    for (int l : bb.labels)
      if (l != kNoLabel) {
        ++labeled;
        distinct.insert(l);
      }
    if (labeled >= 2) CHECK(distinct.size() >= 2);
  }

  // masked/full agree outside the window; inside, masked is the fill value
  Batch bb = BatchStream(images, labels, bc, 15).next();
  for (int r = 0; r < 17; ++r)
    for (int cc = 0; cc < 17; ++cc) {
      const bool inside = r >= bb.window.r0 && r < bb.window.r0 + bb.window.side &&
                          cc >= bb.window.c0 && cc < bb.window.c0 + bb.window.side;
      for (int i = 0; i < 16; ++i) {
        if (inside)
          CHECK(bb.masked.at4(i, 0, r, cc) == 0.0);
        else
          CHECK(bb.masked.at4(i, 0, r, cc) == bb.full.at4(i, 0, r, cc));
      }
    }

  // single labeled class with labeled slots -> negative-pair warning
  auto single = flat_image(32, 0, 0.4, "single");
  auto sl = sample_sparse_labels({single}, 0.01, 0, false, 3);
  BatchConfig warn_cfg = bc;
  warn_cfg.unlabeled_fraction = 0.0;
  BatchStream warn_stream({single}, sl, warn_cfg, 0);
  REQUIRE(warn_stream.warnings().size() == 1);
  CHECK(warn_stream.warnings()[0].find("negative pairs") != std::string::npos);

  BatchConfig bad = bc;
  bad.batch_size = 1;
  CHECK_THROWS(BatchStream(images, labels, bad, 0));
}

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "epsseg/gmm.hpp"
#include "epsseg/losses.hpp"
#include "epsseg/rng.hpp"
#include "epsseg/tensor.hpp"

namespace epsseg {

struct LabeledImage {
  std::string id;
  int h = 0, w = 0;
  Tensor pixels;            // (H, W), min-max normalized to [0,1]
  std::vector<int> labels;  // row-major class ids, empty when unlabeled input
};

struct MaskSpec {
  int side = 3;
  double fill_value = 0.0;
};

struct SparseEntry {
  std::string image_id;
  int row = 0, col = 0, cls = 0;
};

struct SparseLabelSet {
  std::vector<SparseEntry> entries;
  double budget_fraction = 0.0;
};

struct SynthSpec {
  int num_classes = 3;
  int image_side = 256;
  int num_images = 8;
  double noise_std = 0.05;
  uint64_t seed = 0;
};

struct PatchSample {
  Tensor patch;         // (P, P)
  Tensor masked_patch;  // (P, P), fill_value inside the mask window
  Tensor mask_target;   // (m, m) original center values
  int label = kNoLabel;
  int row = 0, col = 0;
  std::string image_id;
};

struct Batch {
  Tensor masked;  // (B,1,P,P) network input
  Tensor full;    // (B,1,P,P) pre-mask patches
  Window window;  // mask window in patch coordinates
  std::vector<int> labels;
};

// Mirror-without-edge-repeat index reflection into [0, size).
int reflect_index(int i, int size);

/// Centered mask window for a patch of side p and mask of side m (both odd).
Window mask_window(int patch_side, int mask_side);

// ---- Image and dataset I/O (PNG/TIFF via OpenCV).

std::vector<LabeledImage> load_images(const std::string& dir, const std::string& manifest,
                                      int num_classes, bool require_labels = true);

void write_image_png16(const std::string& path, const Tensor& pixels);
void write_label_png(const std::string& path, const std::vector<int>& labels, int h, int w);

/// Writes images, label maps, the manifest, and a JSON sidecar with the spec.
void write_synth_dataset(const SynthSpec& spec, const std::string& dir);

std::vector<LabeledImage> synth_generate(const SynthSpec& spec);

void save_sparse_csv(const SparseLabelSet& s, const std::string& path);
SparseLabelSet load_sparse_csv(const std::string& path);

// ---- Sparse label sampling.

/// Pixels are eligible when the mask-sized window around them is class-pure,
/// so labeled patches satisfy the mask purity invariant by construction.
std::vector<uint8_t> eligibility_map(const LabeledImage& img, int mask_side);

SparseLabelSet sample_sparse_labels(const std::vector<LabeledImage>& images,
                                    double budget_fraction, uint64_t seed,
                                    bool stratified, int mask_side,
                                    std::vector<std::string>* warnings = nullptr);

// ---- Patch extraction.

PatchSample extract_patch(const LabeledImage& img, int row, int col, int patch_side,
                          const MaskSpec& mask);

struct BatchConfig {
  int batch_size = 16;
  double unlabeled_fraction = 0.5;
  int patch_side = 33;
  MaskSpec mask;
};

/// Deterministic batch stream. Labeled centers cycle through per-epoch
/// shuffles of the sparse set; unlabeled centers are uniform over all pixels.
/// The sequence is a pure function of (images, labels, config, seed).
class BatchStream {
 public:
  BatchStream(const std::vector<LabeledImage>& images, const SparseLabelSet& labels,
              BatchConfig cfg, uint64_t seed);

  Batch next();
  void skip(int64_t n);  // advance the sequence without extracting patches
  int64_t position() const { return step_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  Batch build(bool materialize);
  void reshuffle();

  const std::vector<LabeledImage>* images_;
  std::vector<SparseEntry> entries_;
  BatchConfig cfg_;
  uint64_t seed_;
  std::vector<int> order_;
  size_t cursor_ = 0;
  int64_t epoch_ = 0;
  int64_t step_ = 0;
  std::vector<int64_t> pixel_cum_;  // cumulative pixel counts for uniform draws
  std::vector<int> image_of_entry_;
  int distinct_classes_ = 0;
  std::vector<std::string> warnings_;
};

}  // namespace epsseg

#pragma once

#include <string>
#include <vector>

#include "epsseg/data.hpp"
#include "epsseg/hvae.hpp"

namespace epsseg {

struct SegmentationMap {
  int h = 0, w = 0;
  std::vector<int> labels;
  std::vector<double> confidence;  // max softmax per pixel
};

struct EvalReport {
  std::vector<double> dice;        // per class; NaN marks N/A
  std::vector<bool> in_truth, in_pred;
  std::vector<int64_t> truth_counts, pred_counts;
  double mean_dice = 0.0;          // over classes present in the truth

  std::string to_json() const;
};

struct SegmentOptions {
  int stride = 1;
  int batch_size = 128;
  bool apply_mask = false;  // training mask is off at inference by default
  MaskSpec mask;
};

/// Per-pixel class map by sliding-patch center classification; pixels between
/// stride centers take the nearest evaluated center's label.
SegmentationMap segment_image(const Hvae& model, const LabeledImage& image,
                              const SegmentOptions& opt);

double dice_score(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b);

EvalReport evaluate(const SegmentationMap& seg, const std::vector<int>& truth,
                    int num_classes);

/// Mean Dice over a set of labeled images (validation helper).
double mean_dice_over(const Hvae& model, const std::vector<LabeledImage>& images,
                      const SegmentOptions& opt);

void write_segmentation_png(const std::string& path, const SegmentationMap& seg);
void write_overlay_png(const std::string& path, const LabeledImage& image,
                       const SegmentationMap& seg);

}  // namespace epsseg

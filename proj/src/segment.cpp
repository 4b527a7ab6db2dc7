#include "epsseg/segment.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace epsseg {

namespace {

// Copy a reflected patch centered at (row, col) into dst (P*P doubles).
void copy_patch(const LabeledImage& img, int row, int col, int P, double* dst) {
  const int half = P / 2;
  for (int r = 0; r < P; ++r) {
    const int sr = reflect_index(row - half + r, img.h);
    const double* srow = img.pixels.data() + static_cast<int64_t>(sr) * img.w;
    for (int c = 0; c < P; ++c)
      dst[static_cast<int64_t>(r) * P + c] = srow[reflect_index(col - half + c, img.w)];
  }
}

}  // namespace

SegmentationMap segment_image(const Hvae& model, const LabeledImage& image,
                              const SegmentOptions& opt) {
  const int P = model.config().patch_side;
  const int C = model.config().num_classes;
  if (opt.stride < 1) throw std::invalid_argument("segment_image: stride must be >= 1");
  if (opt.stride > P)
    throw std::invalid_argument("segment_image: stride " + std::to_string(opt.stride) +
                                " exceeds patch side " + std::to_string(P));

  std::vector<int> rows, cols;
  for (int r = 0; r < image.h; r += opt.stride) rows.push_back(r);
  for (int c = 0; c < image.w; c += opt.stride) cols.push_back(c);
  const int64_t n_centers = static_cast<int64_t>(rows.size()) * cols.size();

  std::vector<int> center_label(n_centers);
  std::vector<double> center_conf(n_centers);

  const Window w = mask_window(P, opt.mask.side);
  const int B = std::max(1, opt.batch_size);
  Tensor batch({B, 1, P, P});
  int64_t done = 0;
  while (done < n_centers) {
    const int take = static_cast<int>(std::min<int64_t>(B, n_centers - done));
    for (int i = 0; i < take; ++i) {
      const int64_t ci = done + i;
      const int r = rows[ci / cols.size()];
      const int c = cols[ci % cols.size()];
      double* dst = batch.data() + batch.idx4(i, 0, 0, 0);
      copy_patch(image, r, c, P, dst);
      if (opt.apply_mask)
        for (int rr = w.r0; rr < w.r0 + w.side; ++rr)
          for (int cc = w.c0; cc < w.c0 + w.side; ++cc)
            dst[static_cast<int64_t>(rr) * P + cc] = opt.mask.fill_value;
    }
    Tensor logits;
    if (take == B) {
      logits = model.classify_logits(batch);
    } else {
      Tensor partial({take, 1, P, P});
      std::copy(batch.data(), batch.data() + partial.numel(), partial.data());
      logits = model.classify_logits(partial);
    }
    Tensor y = infer_assignment(logits);
    for (int i = 0; i < take; ++i) {
      const double* row = y.data() + static_cast<int64_t>(i) * C;
      const int arg = argmax_row(row, C);
      center_label[done + i] = arg;
      center_conf[done + i] = row[arg];
    }
    done += take;
  }

  SegmentationMap seg;
  seg.h = image.h;
  seg.w = image.w;
  seg.labels.resize(static_cast<size_t>(image.h) * image.w);
  seg.confidence.resize(seg.labels.size());
  const int s = opt.stride;
  for (int r = 0; r < image.h; ++r) {
    // Nearest evaluated center per axis, ties toward the lower index.
    size_t gr = std::min<size_t>((r + (s - 1) / 2) / s, rows.size() - 1);
    for (int c = 0; c < image.w; ++c) {
      size_t gc = std::min<size_t>((c + (s - 1) / 2) / s, cols.size() - 1);
      const int64_t ci = static_cast<int64_t>(gr) * cols.size() + gc;
      seg.labels[static_cast<size_t>(r) * image.w + c] = center_label[ci];
      seg.confidence[static_cast<size_t>(r) * image.w + c] = center_conf[ci];
    }
  }
  return seg;
}

double dice_score(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("dice_score: mask shapes differ (" +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  int64_t na = 0, nb = 0, inter = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    na += a[i] ? 1 : 0;
    nb += b[i] ? 1 : 0;
    inter += (a[i] && b[i]) ? 1 : 0;
  }
  if (na + nb == 0) return 1.0;  // both empty
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

EvalReport evaluate(const SegmentationMap& seg, const std::vector<int>& truth,
                    int num_classes) {
  if (truth.size() != seg.labels.size())
    throw std::invalid_argument("evaluate: segmentation/truth shape mismatch");
  EvalReport rep;
  rep.dice.assign(num_classes, std::nan(""));
  rep.in_truth.assign(num_classes, false);
  rep.in_pred.assign(num_classes, false);
  rep.truth_counts.assign(num_classes, 0);
  rep.pred_counts.assign(num_classes, 0);
  for (int v : truth) ++rep.truth_counts[v];
  for (int v : seg.labels) ++rep.pred_counts[v];
  for (int c = 0; c < num_classes; ++c) {
    rep.in_truth[c] = rep.truth_counts[c] > 0;
    rep.in_pred[c] = rep.pred_counts[c] > 0;
  }
  double acc = 0.0;
  int n = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (!rep.in_truth[c] && !rep.in_pred[c]) continue;  // absent everywhere: N/A
    std::vector<uint8_t> a(truth.size()), b(truth.size());
    for (size_t i = 0; i < truth.size(); ++i) {
      a[i] = truth[i] == c ? 1 : 0;
      b[i] = seg.labels[i] == c ? 1 : 0;
    }
    rep.dice[c] = dice_score(b, a);
    if (rep.in_truth[c]) {
      acc += rep.dice[c];
      ++n;
    }
  }
  rep.mean_dice = n > 0 ? acc / n : 0.0;
  return rep;
}

double mean_dice_over(const Hvae& model, const std::vector<LabeledImage>& images,
                      const SegmentOptions& opt) {
  if (images.empty()) throw std::invalid_argument("mean_dice_over: no images");
  double acc = 0.0;
  for (const auto& img : images) {
    SegmentationMap seg = segment_image(model, img, opt);
    acc += evaluate(seg, img.labels, model.config().num_classes).mean_dice;
  }
  return acc / images.size();
}

std::string EvalReport::to_json() const {
  std::ostringstream os;
  os.precision(10);
  os << "{\"per_class_dice\":[";
  for (size_t c = 0; c < dice.size(); ++c) {
    if (c) os << ",";
    if (std::isnan(dice[c]))
      os << "null";
    else
      os << dice[c];
  }
  os << "],\"mean_dice\":" << mean_dice << ",\"truth_counts\":[";
  for (size_t c = 0; c < truth_counts.size(); ++c) os << (c ? "," : "") << truth_counts[c];
  os << "],\"pred_counts\":[";
  for (size_t c = 0; c < pred_counts.size(); ++c) os << (c ? "," : "") << pred_counts[c];
  os << "]}";
  return os.str();
}

void write_segmentation_png(const std::string& path, const SegmentationMap& seg) {
  cv::Mat m(seg.h, seg.w, CV_8UC1);
  for (int r = 0; r < seg.h; ++r)
    for (int c = 0; c < seg.w; ++c)
      m.at<uint8_t>(r, c) = static_cast<uint8_t>(seg.labels[static_cast<size_t>(r) * seg.w + c]);
  if (!cv::imwrite(path, m)) throw std::runtime_error("cannot write " + path);
}

void write_overlay_png(const std::string& path, const LabeledImage& image,
                       const SegmentationMap& seg) {
  static const uint8_t palette[10][3] = {
      {230, 25, 75},  {60, 180, 75},   {0, 130, 200},  {255, 225, 25}, {145, 30, 180},
      {70, 240, 240}, {245, 130, 48},  {240, 50, 230}, {210, 245, 60}, {128, 128, 128}};
  cv::Mat m(seg.h, seg.w, CV_8UC3);
  for (int r = 0; r < seg.h; ++r)
    for (int c = 0; c < seg.w; ++c) {
      const double v = image.pixels[static_cast<int64_t>(r) * image.w + c];
      const int cls = seg.labels[static_cast<size_t>(r) * seg.w + c] % 10;
      const double a = 0.45;
      cv::Vec3b& px = m.at<cv::Vec3b>(r, c);
      // BGR order.
      px[0] = static_cast<uint8_t>((1 - a) * v * 255 + a * palette[cls][2]);
      px[1] = static_cast<uint8_t>((1 - a) * v * 255 + a * palette[cls][1]);
      px[2] = static_cast<uint8_t>((1 - a) * v * 255 + a * palette[cls][0]);
    }
  if (!cv::imwrite(path, m)) throw std::runtime_error("cannot write " + path);
}

}  // namespace epsseg

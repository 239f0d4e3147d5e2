#pragma once

// Confusion-count metrics (IoU, F-beta, MAE, BER), reliability curves and
// TP/FP/FN overlays.

#include "lgnet/data.hpp"
#include "lgnet/image.hpp"

#include <json.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lgnet {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt);

/// tp / (tp + fp + fn); 1 when both masks are empty.
double iou(const ConfusionCounts& c);

/// (1 + b2) P R / (b2 P + R). 1 when there is nothing to find and nothing
/// predicted, 0 when tp == 0 otherwise.
double f_beta(const ConfusionCounts& c, double beta_sq = 0.3);

/// 100 (1 - (TPR + TNR) / 2). A class missing from the ground truth counts
/// as fully recalled.
double ber(const ConfusionCounts& c);

double mae(const BinaryMask& pred, const BinaryMask& gt);
double mae(const ConfidenceMap& pred, const BinaryMask& gt);

enum class MaeMode { binary, confidence };

struct MetricConfig {
  double beta_sq = 0.3;
  double threshold = 0.5;
  MaeMode mae_mode = MaeMode::binary;
  bool global_pooling = false;  // pool pixel counts over the dataset instead of averaging images

  void validate() const;
};

MaeMode parse_mae_mode(const std::string& s);
std::string to_string(MaeMode m);

struct ImageMetrics {
  std::string id;
  double iou = 0.0;
  double f_beta = 0.0;
  double mae = 0.0;
  double ber = 0.0;
  ConfusionCounts counts;
};

ImageMetrics score_image(const ConfidenceMap& conf, const BinaryMask& gt, const MetricConfig& cfg);

struct MetricReport {
  double iou = 0.0;
  double f_beta = 0.0;
  double mae = 0.0;
  double ber = 0.0;
  std::size_t n_images = 0;
  std::vector<ImageMetrics> per_image;
  bool global_pooling = false;
};

/// Averages per-image metrics uniformly (or pools counts when configured).
MetricReport aggregate(std::vector<ImageMetrics> per_image, const MetricConfig& cfg);

nlohmann::json to_json(const MetricReport& r);

/// Scores `predict(sample)` (a confidence map the size of sample.mask) on
/// every sample, in dataset order.
template <typename Predict>
MetricReport evaluate_dataset(Predict&& predict, const std::vector<Sample>& dataset, const MetricConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("evaluate_dataset: empty dataset");
  cfg.validate();
  std::vector<ImageMetrics> per_image;
  per_image.reserve(dataset.size());
  for (const auto& s : dataset) {
    ImageMetrics m = score_image(predict(s), s.mask, cfg);
    m.id = s.id;
    per_image.push_back(std::move(m));
  }
  return aggregate(std::move(per_image), cfg);
}

struct CalibrationBin {
  double low = 0.0;
  double high = 0.0;
  double mean_confidence = 0.0;
  double frequency = 0.0;  // share of glass pixels
  std::uint64_t count = 0;
  bool occupied() const { return count > 0; }
};

struct CalibrationCurve {
  std::vector<CalibrationBin> bins;
  std::uint64_t total = 0;
};

/// Equal-width bins over [0, 1]; a confidence of exactly 1 falls in the last bin.
CalibrationCurve calibration_curve(const std::vector<ConfidenceMap>& conf, const std::vector<BinaryMask>& gt,
                                   int n_bins = 10);

/// bin_low,bin_high,mean_conf,frequency,count per bin (empty bins included
/// with count 0).
void write_calibration_csv(const std::string& path, const CalibrationCurve& curve);

/// Reliability diagram: diagonal reference in gray, occupied bins joined in
/// orange, bin-count bars along the bottom.
RgbImage render_calibration_plot(const CalibrationCurve& curve, int size = 256);

enum class PixelCategory { true_positive, false_positive, false_negative, true_negative };

PixelCategory categorize(std::uint8_t pred, std::uint8_t gt);

struct OverlayStyle {
  double opacity = 0.5;
};

/// TP blended toward green, FP red, FN blue; TN pixels untouched.
RgbImage render_overlay(const RgbImage& image, const BinaryMask& pred, const BinaryMask& gt, OverlayStyle style = {});

}  // namespace lgnet

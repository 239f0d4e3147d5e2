#include "lgnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace lgnet {

namespace {

void require_same_size(int h1, int w1, int h2, int w2, const char* what) {
  if (h1 != h2 || w1 != w2) throw std::invalid_argument(std::string(what) + ": size mismatch");
}

double ratio(std::uint64_t num, std::uint64_t den) { return static_cast<double>(num) / static_cast<double>(den); }

}  // namespace

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_size(pred.height, pred.width, gt.height, gt.width, "confusion");
  ConfusionCounts c;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred.values[i] != 0;
    const bool g = gt.values[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double iou(const ConfusionCounts& c) {
  const std::uint64_t den = c.tp + c.fp + c.fn;
  return den == 0 ? 1.0 : ratio(c.tp, den);
}

double f_beta(const ConfusionCounts& c, double beta_sq) {
  if (c.tp + c.fp + c.fn == 0) return 1.0;
  if (c.tp == 0) return 0.0;
  const double p = ratio(c.tp, c.tp + c.fp);
  const double r = ratio(c.tp, c.tp + c.fn);
  return (1.0 + beta_sq) * p * r / (beta_sq * p + r);
}

double ber(const ConfusionCounts& c) {
  const double tpr = c.tp + c.fn == 0 ? 1.0 : ratio(c.tp, c.tp + c.fn);
  const double tnr = c.tn + c.fp == 0 ? 1.0 : ratio(c.tn, c.tn + c.fp);
  return 100.0 * (1.0 - 0.5 * (tpr + tnr));
}

double mae(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_size(pred.height, pred.width, gt.height, gt.width, "mae");
  if (gt.size() == 0) throw std::invalid_argument("mae: empty mask");
  std::uint64_t wrong = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) wrong += (pred.values[i] != 0) != (gt.values[i] != 0);
  return ratio(wrong, gt.size());
}

double mae(const ConfidenceMap& pred, const BinaryMask& gt) {
  require_same_size(pred.height, pred.width, gt.height, gt.width, "mae");
  if (gt.size() == 0) throw std::invalid_argument("mae: empty mask");
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) sum += std::abs(pred.values(static_cast<Eigen::Index>(i)) - gt.values[i]);
  return sum / static_cast<double>(gt.size());
}

void MetricConfig::validate() const {
  if (!(beta_sq > 0.0)) throw std::invalid_argument("metrics: beta_sq must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("metrics: threshold must lie in (0, 1)");
}

MaeMode parse_mae_mode(const std::string& s) {
  if (s == "binary") return MaeMode::binary;
  if (s == "confidence") return MaeMode::confidence;
  throw std::invalid_argument("unknown mae mode: " + s);
}

std::string to_string(MaeMode m) { return m == MaeMode::binary ? "binary" : "confidence"; }

ImageMetrics score_image(const ConfidenceMap& conf, const BinaryMask& gt, const MetricConfig& cfg) {
  require_same_size(conf.height, conf.width, gt.height, gt.width, "score_image");
  BinaryMask pred = BinaryMask::zeros(conf.height, conf.width);
  for (std::size_t i = 0; i < pred.size(); ++i) pred.values[i] = conf.values(static_cast<Eigen::Index>(i)) >= cfg.threshold;
  ImageMetrics m;
  m.counts = confusion(pred, gt);
  m.iou = iou(m.counts);
  m.f_beta = f_beta(m.counts, cfg.beta_sq);
  m.ber = ber(m.counts);
  m.mae = cfg.mae_mode == MaeMode::binary ? mae(pred, gt) : mae(conf, gt);
  return m;
}

MetricReport aggregate(std::vector<ImageMetrics> per_image, const MetricConfig& cfg) {
  if (per_image.empty()) throw std::invalid_argument("aggregate: no images");
  MetricReport r;
  r.n_images = per_image.size();
  r.global_pooling = cfg.global_pooling;
  if (cfg.global_pooling) {
    ConfusionCounts pooled;
    double abs_err = 0.0;
    for (const auto& m : per_image) {
      pooled += m.counts;
      abs_err += m.mae * static_cast<double>(m.counts.total());
    }
    r.iou = iou(pooled);
    r.f_beta = f_beta(pooled, cfg.beta_sq);
    r.ber = ber(pooled);
    r.mae = abs_err / static_cast<double>(pooled.total());
  } else {
    for (const auto& m : per_image) {
      r.iou += m.iou;
      r.f_beta += m.f_beta;
      r.mae += m.mae;
      r.ber += m.ber;
    }
    const auto n = static_cast<double>(per_image.size());
    r.iou /= n;
    r.f_beta /= n;
    r.mae /= n;
    r.ber /= n;
  }
  r.per_image = std::move(per_image);
  return r;
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& m : r.per_image)
    per.push_back({{"id", m.id},
                   {"iou", m.iou},
                   {"f_beta", m.f_beta},
                   {"mae", m.mae},
                   {"ber", m.ber},
                   {"tp", m.counts.tp},
                   {"fp", m.counts.fp},
                   {"tn", m.counts.tn},
                   {"fn", m.counts.fn}});
  return {{"iou", r.iou},
          {"f_beta", r.f_beta},
          {"mae", r.mae},
          {"ber", r.ber},
          {"n_images", r.n_images},
          {"aggregation", r.global_pooling ? "global" : "per_image"},
          {"per_image", per}};
}

CalibrationCurve calibration_curve(const std::vector<ConfidenceMap>& conf, const std::vector<BinaryMask>& gt, int n_bins) {
  if (conf.empty()) throw std::invalid_argument("calibration_curve: empty input");
  if (conf.size() != gt.size()) throw std::invalid_argument("calibration_curve: unpaired inputs");
  if (n_bins < 1) throw std::invalid_argument("calibration_curve: n_bins must be positive");
  CalibrationCurve curve;
  curve.bins.resize(static_cast<std::size_t>(n_bins));
  std::vector<double> conf_sum(curve.bins.size(), 0.0);
  std::vector<std::uint64_t> glass(curve.bins.size(), 0);
  for (std::size_t k = 0; k < conf.size(); ++k) {
    require_same_size(conf[k].height, conf[k].width, gt[k].height, gt[k].width, "calibration_curve");
    for (std::size_t i = 0; i < gt[k].size(); ++i) {
      const double c = conf[k].values(static_cast<Eigen::Index>(i));
      const auto b = static_cast<std::size_t>(std::clamp(static_cast<int>(std::floor(c * n_bins)), 0, n_bins - 1));
      conf_sum[b] += c;
      glass[b] += gt[k].values[i] != 0;
      ++curve.bins[b].count;
    }
  }
  for (std::size_t b = 0; b < curve.bins.size(); ++b) {
    auto& bin = curve.bins[b];
    bin.low = static_cast<double>(b) / n_bins;
    bin.high = static_cast<double>(b + 1) / n_bins;
    if (bin.count > 0) {
      bin.mean_confidence = conf_sum[b] / static_cast<double>(bin.count);
      bin.frequency = ratio(glass[b], bin.count);
    }
    curve.total += bin.count;
  }
  return curve;
}

void write_calibration_csv(const std::string& path, const CalibrationCurve& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "bin_low,bin_high,mean_conf,frequency,count\n" << std::setprecision(17);
  for (const auto& b : curve.bins)
    out << b.low << ',' << b.high << ',' << b.mean_confidence << ',' << b.frequency << ',' << b.count << '\n';
}

namespace {

void draw_line(RgbImage& img, double x0, double y0, double x1, double y1, const Eigen::Array3f& color) {
  const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
    const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
    if (x >= 0 && x < img.width && y >= 0 && y < img.height) img.pixels.col(img.index(y, x)) = color;
  }
}

}  // namespace

RgbImage render_calibration_plot(const CalibrationCurve& curve, int size) {
  if (size < 32) throw std::invalid_argument("render_calibration_plot: size too small");
  RgbImage img = RgbImage::zeros(size, size);
  img.pixels.setOnes();
  const double margin = size * 0.08;
  const double span = size - 2 * margin;
  auto px = [&](double v) { return margin + v * span; };
  auto py = [&](double v) { return size - 1 - (margin + v * span); };
  const Eigen::Array3f axis(0.0f, 0.0f, 0.0f);
  const Eigen::Array3f gray(0.6f, 0.6f, 0.6f);
  const Eigen::Array3f bar(0.75f, 0.82f, 0.95f);
  const Eigen::Array3f orange(0.9f, 0.45f, 0.05f);

  std::uint64_t max_count = 1;
  for (const auto& b : curve.bins) max_count = std::max(max_count, b.count);
  for (const auto& b : curve.bins) {
    if (!b.occupied()) continue;
    const double h = 0.25 * static_cast<double>(b.count) / static_cast<double>(max_count);
    for (double x = px(b.low) + 1; x < px(b.high) - 1; x += 1.0) draw_line(img, x, py(0.0), x, py(h), bar);
  }
  draw_line(img, px(0), py(0), px(1), py(0), axis);
  draw_line(img, px(0), py(0), px(0), py(1), axis);
  draw_line(img, px(0), py(0), px(1), py(1), gray);

  const CalibrationBin* prev = nullptr;
  for (const auto& b : curve.bins) {
    if (!b.occupied()) continue;
    const double x = px(b.mean_confidence);
    const double y = py(b.frequency);
    if (prev) draw_line(img, px(prev->mean_confidence), py(prev->frequency), x, y, orange);
    for (int dy = -2; dy <= 2; ++dy) draw_line(img, x - 2, y + dy, x + 2, y + dy, orange);
    prev = &b;
  }
  return img;
}

PixelCategory categorize(std::uint8_t pred, std::uint8_t gt) {
  if (pred && gt) return PixelCategory::true_positive;
  if (pred) return PixelCategory::false_positive;
  if (gt) return PixelCategory::false_negative;
  return PixelCategory::true_negative;
}

RgbImage render_overlay(const RgbImage& image, const BinaryMask& pred, const BinaryMask& gt, OverlayStyle style) {
  require_same_size(pred.height, pred.width, gt.height, gt.width, "render_overlay");
  require_same_size(image.height, image.width, gt.height, gt.width, "render_overlay");
  RgbImage out = image;
  const auto a = static_cast<float>(style.opacity);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    Eigen::Array3f color;
    switch (categorize(pred.values[i], gt.values[i])) {
      case PixelCategory::true_positive: color << 0.0f, 1.0f, 0.0f; break;
      case PixelCategory::false_positive: color << 1.0f, 0.0f, 0.0f; break;
      case PixelCategory::false_negative: color << 0.0f, 0.0f, 1.0f; break;
      case PixelCategory::true_negative: continue;
    }
    const auto col = static_cast<Eigen::Index>(i);
    out.pixels.col(col) = (1.0f - a) * image.pixels.col(col) + a * color;
  }
  return out;
}

}  // namespace lgnet

#include "lgnet/decoder.hpp"

#include <algorithm>
#include <cmath>

namespace lgnet {

void DecoderConfig::validate() const {
  if (embed_dim <= 0 || n_queries <= 0 || n_layers <= 0 || n_heads <= 0 || ffn_dim <= 0)
    throw std::invalid_argument("decoder: sizes must be positive");
  if (embed_dim % n_heads != 0) throw std::invalid_argument("decoder: embed_dim not divisible by n_heads");
}

namespace {

Eigen::ArrayXd glass_probability(const Eigen::MatrixXd& class_logits) {
  Eigen::ArrayXd p(class_logits.rows());
  for (Eigen::Index q = 0; q < class_logits.rows(); ++q) {
    const auto row = class_logits.row(q);
    const double m = row.maxCoeff();
    const Eigen::ArrayXd e = (row.array() - m).exp().transpose();
    p(q) = e(kGlassClass) / e.sum();
  }
  return p;
}

Eigen::ArrayXd sigmoid(const Eigen::ArrayXd& z) { return 1.0 / (1.0 + (-z).exp()); }

}  // namespace

ConfidenceMap semantic_inference(const Eigen::MatrixXd& class_logits, const Eigen::MatrixXd& mask_logits, int mask_h,
                                 int mask_w, int out_h, int out_w) {
  if (class_logits.rows() != mask_logits.rows() || class_logits.cols() != 2)
    throw std::invalid_argument("semantic_inference: query count mismatch");
  if (mask_logits.cols() != static_cast<Eigen::Index>(mask_h) * mask_w)
    throw std::invalid_argument("semantic_inference: mask size mismatch");
  const Eigen::ArrayXd pg = glass_probability(class_logits);
  Eigen::ArrayXd low = Eigen::ArrayXd::Zero(mask_logits.cols());
  for (Eigen::Index q = 0; q < mask_logits.rows(); ++q) {
    if (pg(q) == 0.0) continue;
    low += pg(q) * sigmoid(mask_logits.row(q).transpose().array());
  }
  low = low.min(1.0).max(0.0);

  ConfidenceMap out{out_h, out_w, Eigen::ArrayXd(static_cast<Eigen::Index>(out_h) * out_w)};
  const auto ty = linear_taps(mask_h, out_h);
  const auto tx = linear_taps(mask_w, out_w);
  for (int y = 0; y < out_h; ++y) {
    const auto& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_w; ++x) {
      const auto& b = tx[static_cast<std::size_t>(x)];
      const double top = (1.0 - b.frac) * low(a.lo * mask_w + b.lo) + b.frac * low(a.lo * mask_w + b.hi);
      const double bot = (1.0 - b.frac) * low(a.hi * mask_w + b.lo) + b.frac * low(a.hi * mask_w + b.hi);
      out.values(static_cast<Eigen::Index>(y) * out_w + x) = std::clamp((1.0 - a.frac) * top + a.frac * bot, 0.0, 1.0);
    }
  }
  return out;
}

BinaryMask binarize(const ConfidenceMap& conf, double threshold) {
  BinaryMask m = BinaryMask::zeros(conf.height, conf.width);
  for (Eigen::Index i = 0; i < conf.values.size(); ++i) m.values[static_cast<std::size_t>(i)] = conf.values(i) >= threshold ? 1 : 0;
  return m;
}

BinaryMask resize_mask_nearest(const BinaryMask& mask, int out_h, int out_w) {
  if (mask.height == out_h && mask.width == out_w) return mask;
  const auto ys = nearest_taps(mask.height, out_h);
  const auto xs = nearest_taps(mask.width, out_w);
  BinaryMask out = BinaryMask::zeros(out_h, out_w);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) out.at(y, x) = mask.at(ys[static_cast<std::size_t>(y)], xs[static_cast<std::size_t>(x)]);
  return out;
}

Eigen::MatrixXd matching_cost(const Eigen::MatrixXd& class_logits, const Eigen::MatrixXd& mask_logits,
                              const std::vector<Eigen::RowVectorXd>& gt_masks, const LossWeights& w) {
  const Eigen::ArrayXd pg = glass_probability(class_logits);
  Eigen::MatrixXd cost(mask_logits.rows(), static_cast<Eigen::Index>(gt_masks.size()));
  for (Eigen::Index q = 0; q < mask_logits.rows(); ++q) {
    const Eigen::ArrayXd z = mask_logits.row(q).transpose().array();
    const Eigen::ArrayXd s = sigmoid(z);
    const Eigen::ArrayXd softplus = z.max(0.0) + (1.0 + (-z.abs()).exp()).log();
    for (std::size_t j = 0; j < gt_masks.size(); ++j) {
      const Eigen::ArrayXd t = gt_masks[j].transpose().array();
      const double bce = (softplus - z * t).mean();
      const double dice = 1.0 - (2.0 * (s * t).sum() + 1.0) / (s.sum() + t.sum() + 1.0);
      cost(q, static_cast<Eigen::Index>(j)) = -w.cls * pg(q) + w.bce * bce + w.dice * dice;
    }
  }
  return cost;
}

}  // namespace lgnet

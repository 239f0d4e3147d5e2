#pragma once

// Straight per-pixel reimplementations of the metrics, kept independent of
// the library code they check.

#include "lgnet/image.hpp"
#include "lgnet/rng.hpp"

#include <cmath>
#include <cstdint>

namespace lgnet::testing {

struct OracleScores {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  double iou = 0, f_beta = 0, mae = 0, ber = 0;
};

inline OracleScores oracle_scores(const BinaryMask& pred, const BinaryMask& gt, double beta_sq = 0.3) {
  OracleScores o;
  double abs_err = 0;
  for (int y = 0; y < gt.height; ++y) {
    for (int x = 0; x < gt.width; ++x) {
      const int p = pred.at(y, x);
      const int g = gt.at(y, x);
      if (p == 1 && g == 1) ++o.tp;
      if (p == 1 && g == 0) ++o.fp;
      if (p == 0 && g == 0) ++o.tn;
      if (p == 0 && g == 1) ++o.fn;
      abs_err += std::abs(p - g);
    }
  }
  const double tp = static_cast<double>(o.tp), fp = static_cast<double>(o.fp);
  const double tn = static_cast<double>(o.tn), fn = static_cast<double>(o.fn);
  o.iou = (tp + fp + fn) == 0 ? 1.0 : tp / (tp + fp + fn);
  if (tp + fp + fn == 0) {
    o.f_beta = 1.0;
  } else if (tp == 0) {
    o.f_beta = 0.0;
  } else {
    const double prec = tp / (tp + fp);
    const double rec = tp / (tp + fn);
    o.f_beta = (1 + beta_sq) * prec * rec / (beta_sq * prec + rec);
  }
  o.mae = abs_err / (gt.height * gt.width);
  const double tpr = (tp + fn) == 0 ? 1.0 : tp / (tp + fn);
  const double tnr = (tn + fp) == 0 ? 1.0 : tn / (tn + fp);
  o.ber = 100.0 * (1.0 - (tpr + tnr) / 2.0);
  return o;
}

/// Random mask with a per-mask density so that empty and full masks occur.
inline BinaryMask random_mask(int h, int w, CounterRng& rng) {
  BinaryMask m = BinaryMask::zeros(h, w);
  const int mode = rng.uniform_int(0, 9);
  const double density = mode == 0 ? 0.0 : mode == 1 ? 1.0 : rng.uniform();
  for (auto& v : m.values) v = rng.bernoulli(density) ? 1 : 0;
  return m;
}

}  // namespace lgnet::testing

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace lgnet {

/// Source taps for one output coordinate of a 1-D linear resample.
struct LinearTap {
  int lo = 0;
  int hi = 0;
  double frac = 0.0;  // weight of `hi`
};

/// Half-pixel-centred linear interpolation table (the align_corners=false
/// convention); out-of-range source positions clamp to the border.
inline std::vector<LinearTap> linear_taps(int in_size, int out_size) {
  std::vector<LinearTap> taps(static_cast<std::size_t>(out_size));
  const double ratio = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in_size - 1) lo = in_size - 1;
    const int hi = std::min(lo + 1, in_size - 1);
    taps[static_cast<std::size_t>(o)] = {lo, hi, src - lo};
  }
  return taps;
}

/// Nearest-neighbour source index for each output coordinate.
inline std::vector<int> nearest_taps(int in_size, int out_size) {
  std::vector<int> idx(static_cast<std::size_t>(out_size));
  const double ratio = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    const int s = static_cast<int>(std::floor((o + 0.5) * ratio));
    idx[static_cast<std::size_t>(o)] = std::min(s, in_size - 1);
  }
  return idx;
}

}  // namespace lgnet

#pragma once

#include "lgnet/feature_map.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace lgnet {

/// Interleaved RGB in [0, 1]; column y*W + x holds one pixel.
struct RgbImage {
  int height = 0;
  int width = 0;
  Eigen::Array<float, 3, Eigen::Dynamic> pixels;

  static RgbImage zeros(int h, int w) {
    RgbImage img{h, w, Eigen::Array<float, 3, Eigen::Dynamic>::Zero(3, static_cast<Eigen::Index>(h) * w)};
    return img;
  }
  Eigen::Index index(int y, int x) const { return static_cast<Eigen::Index>(y) * width + x; }
};

/// Per-pixel {0, 1} labels, 1 = glass, row-major.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  static BinaryMask zeros(int h, int w) {
    return {h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0)};
  }
  std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : values) n += v;
    return n;
  }
  bool operator==(const BinaryMask&) const = default;
};

/// Per-pixel glass probability in [0, 1], row-major.
struct ConfidenceMap {
  int height = 0;
  int width = 0;
  Eigen::ArrayXd values;

  double at(int y, int x) const { return values(static_cast<Eigen::Index>(y) * width + x); }
};

/// Per-channel mean/std applied to [0, 1] RGB before the model sees it.
struct Normalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stddev{0.229, 0.224, 0.225};
};

template <typename Scalar>
ImageTensor<Scalar> to_tensor(const RgbImage& image, const Normalization& norm) {
  ImageTensor<Scalar> t{image.height, image.width, Matrix<Scalar>(3, image.pixels.cols())};
  for (int c = 0; c < 3; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    t.values.row(c) = ((image.pixels.row(c).cast<double>() - norm.mean[ci]) / norm.stddev[ci]).cast<Scalar>().matrix();
  }
  return t;
}

}  // namespace lgnet

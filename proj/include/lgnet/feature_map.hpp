#pragma once

#include "lgnet/autograd.hpp"

#include <array>
#include <stdexcept>
#include <string>

namespace lgnet {

/// C x (H*W) activation grid tagged with its stride relative to the image.
template <typename Scalar>
struct FeatureMap {
  Var<Scalar> data;
  int height = 0;
  int width = 0;
  int scale = 1;

  int channels() const { return static_cast<int>(data.rows()); }
  const Matrix<Scalar>& values() const { return data.value(); }
};

/// Four levels at strides 4, 8, 16 and 32, finest first.
template <typename Scalar>
struct MultiScaleFeatures {
  static constexpr std::array<int, 4> kScales{4, 8, 16, 32};

  std::array<FeatureMap<Scalar>, 4> levels;

  /// Checks stride order and that all levels imply the same image size.
  void validate() const {
    const int image_h = levels[0].height * levels[0].scale;
    const int image_w = levels[0].width * levels[0].scale;
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& l = levels[i];
      if (l.scale != kScales[i]) throw std::invalid_argument("pyramid level " + std::to_string(i) + " has wrong scale");
      if (l.height * l.scale != image_h || l.width * l.scale != image_w)
        throw std::invalid_argument("pyramid levels disagree on image size");
      if (l.data.cols() != static_cast<Eigen::Index>(l.height) * l.width)
        throw std::invalid_argument("pyramid level data does not match its grid");
    }
  }

  std::array<int, 4> channels() const {
    return {levels[0].channels(), levels[1].channels(), levels[2].channels(), levels[3].channels()};
  }
};

/// Normalized 3 x (H*W) model input.
template <typename Scalar>
struct ImageTensor {
  int height = 0;
  int width = 0;
  Matrix<Scalar> values;

  template <typename Other>
  ImageTensor<Other> cast() const {
    return {height, width, values.template cast<Other>()};
  }
};

}  // namespace lgnet

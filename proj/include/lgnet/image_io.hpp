#pragma once

#include "lgnet/image.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lgnet {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;
};

/// Reads PNG or JPEG (detected from the file signature) as RGB in [0, 1].
RgbImage read_rgb(const std::string& path);

/// Reads an 8-bit single-channel PNG.
GrayImage read_gray_png(const std::string& path);

/// Writes RGB (values clamped to [0, 1], rounded to 8 bits).
void write_png(const std::string& path, const RgbImage& image);
void write_png(const std::string& path, const GrayImage& image);

/// Mask as a gray PNG with glass = 255.
void write_mask_png(const std::string& path, const BinaryMask& mask);

}  // namespace lgnet

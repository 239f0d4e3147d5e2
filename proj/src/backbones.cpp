#include "lgnet/backbones.hpp"

namespace lgnet {

void LearnedBackboneConfig::validate() const {
  for (std::size_t i = 0; i < 4; ++i) {
    if (stage_channels[i] <= 0) throw std::invalid_argument("learned backbone: stage channels must be positive");
    if (i > 0 && stage_channels[i] < stage_channels[i - 1])
      throw std::invalid_argument("learned backbone: stage channels must be non-decreasing");
  }
  if (blocks_per_stage <= 0) throw std::invalid_argument("learned backbone: blocks_per_stage must be positive");
}

void GeneralBackboneConfig::validate() const {
  if (patch_size <= 0 || embed_dim <= 0 || num_blocks <= 0 || num_heads <= 0 || mlp_ratio <= 0)
    throw std::invalid_argument("general backbone: sizes must be positive");
  if (embed_dim % num_heads != 0) throw std::invalid_argument("general backbone: embed_dim not divisible by num_heads");
  for (std::size_t i = 0; i < 4; ++i) {
    if (tap_indices[i] < 1 || tap_indices[i] > num_blocks)
      throw std::out_of_range("general backbone: tap index " + std::to_string(tap_indices[i]) + " out of range");
    if (i > 0 && tap_indices[i] <= tap_indices[i - 1])
      throw std::invalid_argument("general backbone: tap indices must be strictly increasing");
  }
  if (tap_indices[3] != num_blocks) throw std::invalid_argument("general backbone: last tap must be the final block");
}

std::array<int, 4> default_taps(int depth) {
  if (depth < 4 || depth % 4 != 0) throw std::invalid_argument("default_taps: depth must be a positive multiple of 4");
  return {depth / 4, depth / 2, 3 * depth / 4, depth};
}

void check_input_size(int height, int width) {
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0)
    throw std::invalid_argument("input size " + std::to_string(height) + "x" + std::to_string(width) +
                                " is not divisible by 32");
}

}  // namespace lgnet

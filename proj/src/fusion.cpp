#include "lgnet/fusion.hpp"

namespace lgnet {

int channel_mid(int c_in, int c_out) {
  if (c_in < 1 || c_out < 1) throw std::invalid_argument("channel_mid: channel counts must be positive");
  return std::max(c_in / 2, c_out);
}

}  // namespace lgnet

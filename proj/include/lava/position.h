#pragma once

#include <algorithm>

namespace lava {

// Bucket of the clipped key-minus-query offset, in [0, 2k].
constexpr int relative_offset(int i, int j, int k) {
  return std::clamp(j - i, -k, k) + k;
}

}  // namespace lava

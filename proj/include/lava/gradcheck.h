#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lava {

struct GradCheckEntry {
  std::string name;  // "<op>.<input>" or "lava_loss.<parameter>"
  double rel_error = 0.0;
};

// Central-difference checks of every differentiable op and of the full
// student loss (tiny config, 2-token pair) against backward().
std::vector<GradCheckEntry> gradient_suite(std::uint64_t seed = 7);

}  // namespace lava

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "lava/config.h"
#include "lava/data.h"
#include "lava/tensor.h"

namespace lava_test {

inline lava::ModelConfig small_config(int vocab = 16) {
  lava::ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.d_ff = 24;
  cfg.enc_layers = 2;
  cfg.dec_layers = 2;
  cfg.max_len = 24;
  cfg.rel_k = 4;
  cfg.dropout = 0.0;
  return cfg;
}

inline std::vector<int> random_ids(std::mt19937_64& rng, int len, int vocab) {
  std::uniform_int_distribution<int> tok(lava::kNumSpecials, vocab - 1);
  std::vector<int> ids(len);
  for (int& t : ids) t = tok(rng);
  return ids;
}

inline double max_abs_diff(const lava::Tensor& a, const lava::Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a.at(i) - b.at(i)));
  return worst;
}

}  // namespace lava_test

#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

namespace lava {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Architecture hyperparameters shared by the teacher and the NAT model.
// Defaults are the desk-scale setting; 6 layers / 512 / 8 heads / 2048 is
// the full-size configuration.
struct ModelConfig {
  int vocab_size = 32;
  int d_model = 64;
  int heads = 4;
  int d_ff = 128;
  int enc_layers = 2;
  int dec_layers = 2;
  int max_len = 64;
  int rel_k = 4;
  double dropout = 0.1;
  int left_size = 1;   // LS
  int right_size = 1;  // RS
  bool vocab_attention = true;
  bool cross_attention = true;
  std::uint64_t init_seed = 1;

  int head_dim() const { return d_model / heads; }
  void validate() const;

  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

// Number of length-difference classes, covering Δm in [-20, 20].
inline constexpr int kLengthClasses = 41;
inline constexpr int kMaxLengthOffset = 20;

}  // namespace lava

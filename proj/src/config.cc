#include "lava/config.h"

#include <sstream>

namespace lava {

void ModelConfig::validate() const {
  if (vocab_size < 5) throw ConfigError("vocab_size must be >= 5");
  if (d_model < 1 || heads < 1 || d_model % heads != 0)
    throw ConfigError("heads must divide d_model");
  if (d_ff < 1) throw ConfigError("d_ff must be >= 1");
  if (enc_layers < 1 || dec_layers < 1) throw ConfigError("layer counts must be >= 1");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  if (rel_k < 0) throw ConfigError("rel_k must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  if (left_size < 0 || left_size > 1 || right_size < 0 || right_size > 1)
    throw ConfigError("unsupported look-around size: LS and RS must be 0 or 1");
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
  std::ostringstream dp;
  dp.precision(17);
  dp << dropout;
  return {
      {"vocab_size", std::to_string(vocab_size)},
      {"d_model", std::to_string(d_model)},
      {"heads", std::to_string(heads)},
      {"d_ff", std::to_string(d_ff)},
      {"enc_layers", std::to_string(enc_layers)},
      {"dec_layers", std::to_string(dec_layers)},
      {"max_len", std::to_string(max_len)},
      {"rel_k", std::to_string(rel_k)},
      {"dropout", dp.str()},
      {"left_size", std::to_string(left_size)},
      {"right_size", std::to_string(right_size)},
      {"vocab_attention", vocab_attention ? "1" : "0"},
      {"cross_attention", cross_attention ? "1" : "0"},
      {"init_seed", std::to_string(init_seed)},
  };
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  try {
    if (auto v = get("vocab_size")) c.vocab_size = std::stoi(*v);
    if (auto v = get("d_model")) c.d_model = std::stoi(*v);
    if (auto v = get("heads")) c.heads = std::stoi(*v);
    if (auto v = get("d_ff")) c.d_ff = std::stoi(*v);
    if (auto v = get("enc_layers")) c.enc_layers = std::stoi(*v);
    if (auto v = get("dec_layers")) c.dec_layers = std::stoi(*v);
    if (auto v = get("max_len")) c.max_len = std::stoi(*v);
    if (auto v = get("rel_k")) c.rel_k = std::stoi(*v);
    if (auto v = get("dropout")) c.dropout = std::stod(*v);
    if (auto v = get("left_size")) c.left_size = std::stoi(*v);
    if (auto v = get("right_size")) c.right_size = std::stoi(*v);
    if (auto v = get("vocab_attention")) c.vocab_attention = *v == "1";
    if (auto v = get("cross_attention")) c.cross_attention = *v == "1";
    if (auto v = get("init_seed")) c.init_seed = std::stoull(*v);
  } catch (const std::logic_error& e) {
    throw ConfigError(std::string("malformed model config value: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace lava

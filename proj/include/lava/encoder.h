#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lava/config.h"
#include "lava/params.h"
#include "lava/position.h"
#include "lava/tensor.h"

namespace lava {

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  // (2k+1) × head_dim relative key table; undefined for cross-attention.
  Tensor rel_keys;
};

// One post-norm transformer block: self-attention, optional cross-attention,
// position-wise FFN, each followed by residual + layer norm.
struct TransformerBlockParams {
  AttentionParams self_attn;
  bool has_cross = false;
  AttentionParams cross_attn;
  Tensor ln_self_gain, ln_self_bias;
  Tensor ln_cross_gain, ln_cross_bias;
  Tensor ln_ffn_gain, ln_ffn_bias;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;

  static TransformerBlockParams create(ParamStore& store, const std::string& prefix,
                                       const ModelConfig& cfg, bool with_cross,
                                       std::mt19937_64& rng);
};

struct BlockContext {
  int heads = 1;
  int rel_k = 4;
  bool causal = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;  // null: eval mode
  const Tensor* memory = nullptr;  // cross-attention source
  const std::vector<std::uint8_t>* memory_mask = nullptr;
  // When set, receives the per-head self-attention weight matrices.
  std::vector<Tensor>* attention_out = nullptr;
};

Tensor multi_head_attention(const Tensor& queries, const Tensor& keys_values,
                            const AttentionParams& p, int heads,
                            const std::vector<std::uint8_t>& allow, int rel_k,
                            std::vector<Tensor>* weights_out = nullptr);

// Row-major n × n_keys allow matrix from a key mask and optional causality.
std::vector<std::uint8_t> attention_allow(std::size_t n_queries,
                                          const std::vector<std::uint8_t>& key_mask,
                                          bool causal);

Tensor self_attention_block(const Tensor& x, const TransformerBlockParams& params,
                            const std::vector<std::uint8_t>& mask,
                            const BlockContext& ctx);

// Token rows scaled by √d plus absolute position rows.
Tensor embed_tokens(std::span<const int> ids, const Tensor& token_table,
                    const Tensor& pos_table);

struct EncoderOutput {
  Tensor H;
  int n = 0;
  std::vector<std::uint8_t> mask;
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(ParamStore& store, const std::string& prefix, const ModelConfig& cfg,
          std::mt19937_64& rng);

  // `dropout_rng` null means eval mode.
  EncoderOutput encode(std::span<const int> ids, const std::vector<std::uint8_t>& mask,
                       std::mt19937_64* dropout_rng = nullptr) const;
  EncoderOutput encode(std::span<const int> ids,
                       std::mt19937_64* dropout_rng = nullptr) const;

  const Tensor& token_table() const { return token_table_; }
  const Tensor& pos_table() const { return pos_table_; }
  const std::vector<TransformerBlockParams>& blocks() const { return blocks_; }

 private:
  ModelConfig cfg_;
  Tensor token_table_;
  Tensor pos_table_;
  std::vector<TransformerBlockParams> blocks_;
};

}  // namespace lava

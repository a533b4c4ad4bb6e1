#include "lava/encoder.h"

#include <cmath>

namespace lava {

namespace {

AttentionParams make_attention(ParamStore& store, const std::string& prefix,
                               const ModelConfig& cfg, bool relative,
                               std::mt19937_64& rng) {
  const auto d = static_cast<std::size_t>(cfg.d_model);
  AttentionParams p;
  p.wq = store.add(prefix + ".wq", init::xavier(d, d, rng));
  p.bq = store.add(prefix + ".bq", init::constant({d}, 0.0));
  p.wk = store.add(prefix + ".wk", init::xavier(d, d, rng));
  p.bk = store.add(prefix + ".bk", init::constant({d}, 0.0));
  p.wv = store.add(prefix + ".wv", init::xavier(d, d, rng));
  p.bv = store.add(prefix + ".bv", init::constant({d}, 0.0));
  p.wo = store.add(prefix + ".wo", init::xavier(d, d, rng));
  p.bo = store.add(prefix + ".bo", init::constant({d}, 0.0));
  if (relative) {
    const auto hd = static_cast<std::size_t>(cfg.head_dim());
    p.rel_keys = store.add(prefix + ".rel_keys",
                           init::normal({static_cast<std::size_t>(2 * cfg.rel_k + 1), hd},
                                        1.0 / std::sqrt(static_cast<double>(hd)), rng));
  }
  return p;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_row(matmul(x, w), b);
}

}  // namespace

TransformerBlockParams TransformerBlockParams::create(ParamStore& store,
                                                      const std::string& prefix,
                                                      const ModelConfig& cfg,
                                                      bool with_cross,
                                                      std::mt19937_64& rng) {
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto ff = static_cast<std::size_t>(cfg.d_ff);
  TransformerBlockParams p;
  p.self_attn = make_attention(store, prefix + ".self", cfg, true, rng);
  p.ln_self_gain = store.add(prefix + ".ln_self.gain", init::constant({d}, 1.0));
  p.ln_self_bias = store.add(prefix + ".ln_self.bias", init::constant({d}, 0.0));
  p.has_cross = with_cross;
  if (with_cross) {
    p.cross_attn = make_attention(store, prefix + ".cross", cfg, false, rng);
    p.ln_cross_gain = store.add(prefix + ".ln_cross.gain", init::constant({d}, 1.0));
    p.ln_cross_bias = store.add(prefix + ".ln_cross.bias", init::constant({d}, 0.0));
  }
  p.ffn_w1 = store.add(prefix + ".ffn.w1", init::xavier(d, ff, rng));
  p.ffn_b1 = store.add(prefix + ".ffn.b1", init::constant({ff}, 0.0));
  p.ffn_w2 = store.add(prefix + ".ffn.w2", init::xavier(ff, d, rng));
  p.ffn_b2 = store.add(prefix + ".ffn.b2", init::constant({d}, 0.0));
  p.ln_ffn_gain = store.add(prefix + ".ln_ffn.gain", init::constant({d}, 1.0));
  p.ln_ffn_bias = store.add(prefix + ".ln_ffn.bias", init::constant({d}, 0.0));
  return p;
}

std::vector<std::uint8_t> attention_allow(std::size_t n_queries,
                                          const std::vector<std::uint8_t>& key_mask,
                                          bool causal) {
  const std::size_t nk = key_mask.size();
  std::vector<std::uint8_t> allow(n_queries * nk, 0);
  for (std::size_t i = 0; i < n_queries; ++i)
    for (std::size_t j = 0; j < nk; ++j)
      allow[i * nk + j] = key_mask[j] && (!causal || j <= i);
  return allow;
}

Tensor multi_head_attention(const Tensor& queries, const Tensor& keys_values,
                            const AttentionParams& p, int heads,
                            const std::vector<std::uint8_t>& allow, int rel_k,
                            std::vector<Tensor>* weights_out) {
  const std::size_t d = queries.cols();
  const std::size_t hd = d / static_cast<std::size_t>(heads);
  const std::size_t nk = keys_values.rows();
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  const Tensor q = linear(queries, p.wq, p.bq);
  const Tensor k = linear(keys_values, p.wk, p.bk);
  const Tensor v = linear(keys_values, p.wv, p.bv);

  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * hd;
    const Tensor qh = slice_cols(q, off, hd);
    const Tensor kh = slice_cols(k, off, hd);
    const Tensor vh = slice_cols(v, off, hd);
    Tensor scores = matmul_nt(qh, kh);
    if (p.rel_keys.defined()) {
      scores = add(scores, relative_scores(matmul_nt(qh, p.rel_keys), nk, rel_k));
    }
    const Tensor weights = masked_softmax(scale(scores, inv_scale), allow);
    if (weights_out) weights_out->push_back(weights);
    head_out.push_back(matmul(weights, vh));
  }
  const Tensor merged = heads == 1 ? head_out.front() : concat_cols(head_out);
  return linear(merged, p.wo, p.bo);
}

Tensor self_attention_block(const Tensor& x, const TransformerBlockParams& params,
                            const std::vector<std::uint8_t>& mask,
                            const BlockContext& ctx) {
  if (mask.size() != x.rows()) {
    throw DimensionError("self_attention_block: mask length " +
                         std::to_string(mask.size()) + " vs " +
                         std::to_string(x.rows()) + " rows");
  }
  auto drop = [&](const Tensor& t) {
    return ctx.rng ? dropout(t, ctx.dropout, *ctx.rng) : t;
  };
  const auto allow = attention_allow(x.rows(), mask, ctx.causal);
  Tensor h = multi_head_attention(x, x, params.self_attn, ctx.heads, allow,
                                  ctx.rel_k, ctx.attention_out);
  Tensor out = layer_norm(add(x, drop(h)), params.ln_self_gain, params.ln_self_bias);
  if (params.has_cross && ctx.memory) {
    const auto cross_allow = attention_allow(out.rows(), *ctx.memory_mask, false);
    Tensor c = multi_head_attention(out, *ctx.memory, params.cross_attn, ctx.heads,
                                    cross_allow, ctx.rel_k);
    out = layer_norm(add(out, drop(c)), params.ln_cross_gain, params.ln_cross_bias);
  }
  Tensor ff = linear(relu(linear(out, params.ffn_w1, params.ffn_b1)),
                     params.ffn_w2, params.ffn_b2);
  return layer_norm(add(out, drop(ff)), params.ln_ffn_gain, params.ln_ffn_bias);
}

Tensor embed_tokens(std::span<const int> ids, const Tensor& token_table,
                    const Tensor& pos_table) {
  if (ids.size() > pos_table.rows()) {
    throw DimensionError("embed_tokens: sequence of length " +
                         std::to_string(ids.size()) + " exceeds max_len " +
                         std::to_string(pos_table.rows()));
  }
  const double s = std::sqrt(static_cast<double>(token_table.cols()));
  const Tensor tokens = scale(gather_rows(token_table, ids), s);
  return add(tokens, slice_rows(pos_table, 0, ids.size()));
}

Encoder::Encoder(ParamStore& store, const std::string& prefix, const ModelConfig& cfg,
                 std::mt19937_64& rng)
    : cfg_(cfg) {
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
  token_table_ = store.add(prefix + ".embed.token",
                           init::normal({static_cast<std::size_t>(cfg.vocab_size), d},
                                        emb_std, rng));
  pos_table_ = store.add(prefix + ".embed.pos",
                         init::normal({static_cast<std::size_t>(cfg.max_len), d},
                                      emb_std, rng));
  for (int l = 0; l < cfg.enc_layers; ++l) {
    blocks_.push_back(TransformerBlockParams::create(
        store, prefix + ".block" + std::to_string(l), cfg, false, rng));
  }
}

EncoderOutput Encoder::encode(std::span<const int> ids,
                              const std::vector<std::uint8_t>& mask,
                              std::mt19937_64* dropout_rng) const {
  if (ids.empty()) throw ContractError("encode: empty source");
  if (mask.size() != ids.size()) throw DimensionError("encode: mask length mismatch");
  BlockContext ctx;
  ctx.heads = cfg_.heads;
  ctx.rel_k = cfg_.rel_k;
  ctx.dropout = cfg_.dropout;
  ctx.rng = dropout_rng;
  Tensor x = embed_tokens(ids, token_table_, pos_table_);
  if (dropout_rng) x = dropout(x, cfg_.dropout, *dropout_rng);
  for (const auto& block : blocks_) x = self_attention_block(x, block, mask, ctx);
  return {x, static_cast<int>(ids.size()), mask};
}

EncoderOutput Encoder::encode(std::span<const int> ids,
                              std::mt19937_64* dropout_rng) const {
  return encode(ids, std::vector<std::uint8_t>(ids.size(), 1), dropout_rng);
}

}  // namespace lava

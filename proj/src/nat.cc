#include "lava/nat.h"

#include <algorithm>
#include <cmath>

namespace lava {

namespace {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_row(matmul(x, w), b);
}

}  // namespace

std::vector<double> row_softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

// ---- length prediction --------------------------------------------------------

Tensor length_logits(const EncoderOutput& enc, const LengthPredictorParams& p) {
  if (std::none_of(enc.mask.begin(), enc.mask.end(), [](auto v) { return v != 0; })) {
    throw ContractError("predict_length: every encoder row is masked");
  }
  const Tensor pooled = max_rows(enc.H, enc.mask);
  return linear(reshape(pooled, {1, pooled.numel()}), p.w, p.b);
}

std::vector<double> predict_length(const EncoderOutput& enc,
                                   const LengthPredictorParams& p) {
  NoGradGuard no_grad;
  return row_softmax(length_logits(enc, p).data());
}

int length_class(int delta) {
  return std::clamp(delta, -kMaxLengthOffset, kMaxLengthOffset) + kMaxLengthOffset;
}

int class_delta(int cls) { return cls - kMaxLengthOffset; }

int resolve_target_length(int n, int delta) {
  if (n < 1) throw ContractError("resolve_target_length: n must be >= 1");
  return std::max(1, n + delta);
}

// ---- decoder input and vocabulary attention ------------------------------------

std::vector<int> copy_source_indices(int n, int m) {
  if (m < 1 || n < 1) throw ContractError("copy_source_input: n and m must be >= 1");
  std::vector<int> idx(m);
  for (int i = 0; i < m; ++i) {
    // Integer form of floor((n / m) * i); always < n.
    idx[i] = static_cast<int>((static_cast<long long>(n) * i) / m);
  }
  return idx;
}

Tensor copy_source_input(const Tensor& H, int n, int m) {
  if (static_cast<int>(H.rows()) < n) throw DimensionError("copy_source_input: H has fewer than n rows");
  const auto idx = copy_source_indices(n, m);
  return gather_rows(H, idx);
}

Tensor vocabulary_attention(const Tensor& z, const Tensor& vocab_table,
                            Tensor* weights_out) {
  if (z.cols() != vocab_table.cols()) {
    throw DimensionError("vocabulary_attention: width " + std::to_string(z.cols()) +
                         " vs embedding width " + std::to_string(vocab_table.cols()));
  }
  // Scaled like attention scores; the unscaled product saturates the softmax
  // once table rows have the width-matched norm the fusion layer needs.
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(z.cols()));
  const Tensor weights = softmax(scale(matmul_nt(z, vocab_table), inv_sqrt), 1);
  if (weights_out) *weights_out = weights;
  return matmul(weights, vocab_table);
}

Tensor peaked_softmax_embed(const Tensor& logits, double alpha,
                            const Tensor& vocab_table) {
  if (!(alpha > 0.0)) throw ContractError("peaked_softmax_embed: alpha must be > 0");
  const Tensor& rows = logits.ndim() == 1 ? reshape(logits, {1, logits.numel()}) : logits;
  return matmul(softmax(scale(rows, alpha), 1), vocab_table);
}

// ---- model ------------------------------------------------------------------

NatModel::NatModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.init_seed);
  encoder_ = Encoder(store_, "encoder", cfg_, rng);
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const auto v = static_cast<std::size_t>(cfg_.vocab_size);
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));

  // Unit-variance rows keep A^(i) on the same scale as the layer-normed Z^(i).
  vocab_table_ = store_.add("decoder.vocab", init::normal({v, d}, 1.0, rng));
  length_.w = store_.add("length.w",
                         init::xavier(d, static_cast<std::size_t>(kLengthClasses), rng));
  length_.b = store_.add("length.b",
                         init::constant({static_cast<std::size_t>(kLengthClasses)}, 0.0));
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    const std::string prefix = "decoder.layer" + std::to_string(l);
    if (cfg_.vocab_attention) {
      fuse_w_.push_back(store_.add(prefix + ".fuse.w", init::xavier(2 * d, d, rng)));
      fuse_b_.push_back(store_.add(prefix + ".fuse.b", init::constant({d}, 0.0)));
    }
    blocks_.push_back(TransformerBlockParams::create(store_, prefix + ".block", cfg_,
                                                     cfg_.cross_attention, rng));
  }
  la_.left_w = store_.add("la.left.w", init::xavier(d, v, rng));
  la_.left_b = store_.add("la.left.b", init::constant({v}, 0.0));
  la_.right_w = store_.add("la.right.w", init::xavier(d, v, rng));
  la_.right_b = store_.add("la.right.b", init::constant({v}, 0.0));
  la_.current_w = store_.add("la.current.w", init::xavier(3 * d, v, rng));
  la_.current_b = store_.add("la.current.b", init::constant({v}, 0.0));
  la_.gate_left_w = store_.add("la.gate_left.w", init::xavier(d, d, rng));
  la_.gate_left_b = store_.add("la.gate_left.b", init::constant({d}, 0.0));
  la_.gate_right_w = store_.add("la.gate_right.w", init::xavier(d, d, rng));
  la_.gate_right_b = store_.add("la.gate_right.b", init::constant({d}, 0.0));
  la_.sentinel_left = store_.add("la.sentinel_left", init::normal({1, d}, emb_std, rng));
  la_.sentinel_right = store_.add("la.sentinel_right", init::normal({1, d}, emb_std, rng));
}

EncoderOutput NatModel::encode(std::span<const int> source,
                               std::mt19937_64* dropout_rng) const {
  for (int t : source) {
    if (t < 0 || t >= cfg_.vocab_size) {
      throw ContractError("source token " + std::to_string(t) + " outside vocabulary");
    }
  }
  return encoder_.encode(source, dropout_rng);
}

DecoderTrace NatModel::decoder_forward(const Tensor& D, const EncoderOutput& enc,
                                       std::mt19937_64* dropout_rng) const {
  const std::size_t m = D.rows();
  if (m < 1 || static_cast<int>(m) > cfg_.max_len) {
    throw DimensionError("decoder_forward: target length " + std::to_string(m) +
                         " outside [1, max_len]");
  }
  BlockContext ctx;
  ctx.heads = cfg_.heads;
  ctx.rel_k = cfg_.rel_k;
  ctx.dropout = cfg_.dropout;
  ctx.rng = dropout_rng;
  if (cfg_.cross_attention) {
    ctx.memory = &enc.H;
    ctx.memory_mask = &enc.mask;
  }
  const std::vector<std::uint8_t> mask(m, 1);

  DecoderTrace trace;
  Tensor z = add(D, slice_rows(encoder_.pos_table(), 0, m));
  if (dropout_rng) z = dropout(z, cfg_.dropout, *dropout_rng);
  trace.Z.push_back(z);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    Tensor input = z;
    if (cfg_.vocab_attention) {
      const Tensor a = vocabulary_attention(z, vocab_table_);
      trace.A.push_back(a);
      input = linear(concat_cols({z, a}), fuse_w_[l], fuse_b_[l]);
    }
    z = self_attention_block(input, blocks_[l], mask, ctx);
    trace.Z.push_back(z);
  }
  if (cfg_.vocab_attention) {
    trace.A.push_back(vocabulary_attention(z, vocab_table_));
    trace.final_z = trace.A.back();
  } else {
    trace.final_z = z;
  }
  return trace;
}

ReadoutPositions NatModel::readout_positions(int m, int first, int count) const {
  if (count < 1 || first < 0 || first + count > m || m > cfg_.max_len) {
    throw DimensionError("readout_positions: rows outside sequence");
  }
  const Tensor& pos = encoder_.pos_table();
  ReadoutPositions p;
  p.cur = slice_rows(pos, first, count);
  if (first == 0) {
    p.prev = count == 1 ? la_.sentinel_left
                        : concat_rows({la_.sentinel_left, slice_rows(pos, 0, count - 1)});
  } else {
    p.prev = slice_rows(pos, first - 1, count);
  }
  if (first + count == m) {
    p.next = count == 1 ? la_.sentinel_right
                        : concat_rows({slice_rows(pos, first + 1, count - 1), la_.sentinel_right});
  } else {
    p.next = slice_rows(pos, first + 1, count);
  }
  return p;
}

ReadoutOutput NatModel::look_around_readout(const Tensor& z, const ReadoutRequest& req) const {
  return look_around_readout(z, static_cast<int>(z.rows()), 0, req);
}

ReadoutOutput NatModel::look_around_readout(const Tensor& z_rows, int m, int first,
                                            const ReadoutRequest& req) const {
  if (req.left_size < 0 || req.left_size > 1 || req.right_size < 0 || req.right_size > 1) {
    throw ConfigError("unsupported look-around size: LS and RS must be 0 or 1");
  }
  const int count = static_cast<int>(z_rows.rows());
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const bool needs_targets = req.mode == ReadoutMode::kTeacherForced ||
                             req.mode == ReadoutMode::kScheduledSampling;
  if (needs_targets && static_cast<int>(req.targets.size()) != m) {
    throw DimensionError("look_around_readout: target length " +
                         std::to_string(req.targets.size()) + " vs " + std::to_string(m));
  }
  if (req.mode == ReadoutMode::kScheduledSampling && !req.rng) {
    throw ContractError("look_around_readout: scheduled sampling needs an rng");
  }

  const ReadoutPositions pos = readout_positions(m, first, count);
  ReadoutOutput out;

  // Embeds the neighbor on one side. `explicit_ids` overrides the head's
  // prediction at inference; `boundary` is the target used past the edge.
  auto neighbor = [&](const Tensor& logits, std::span<const int> explicit_ids,
                      int offset, int boundary, std::vector<int>& ids_out) -> Tensor {
    if (req.mode == ReadoutMode::kDifferentiable) {
      return peaked_softmax_embed(logits, req.alpha, vocab_table_);
    }
    ids_out.assign(count, 0);
    for (int r = 0; r < count; ++r) {
      const int i = first + r;
      const int j = i + offset;
      const int truth = (j < 0 || j >= m) ? boundary
                        : needs_targets   ? req.targets[j]
                                          : -1;
      int chosen = -1;
      switch (req.mode) {
        case ReadoutMode::kTeacherForced:
          chosen = truth;
          break;
        case ReadoutMode::kScheduledSampling: {
          std::bernoulli_distribution coin(req.ground_truth_prob);
          if (coin(*req.rng)) chosen = truth;
          break;
        }
        case ReadoutMode::kInfer:
          if (!explicit_ids.empty()) chosen = explicit_ids[i];
          break;
        case ReadoutMode::kDifferentiable:
          break;
      }
      if (chosen < 0) chosen = argmax(logits.data().subspan(r * logits.cols(), logits.cols()));
      ids_out[r] = chosen;
    }
    return gather_rows(vocab_table_, ids_out);
  };

  auto all_explicit = [&](std::span<const int> ids) {
    if (req.mode != ReadoutMode::kInfer || ids.empty()) return false;
    for (int r = 0; r < count; ++r)
      if (ids[first + r] < 0) return false;
    return true;
  };

  const Tensor zeros = Tensor::zeros({static_cast<std::size_t>(count), d});
  Tensor slot_left = zeros, slot_right = zeros;
  out.gate_left = zeros;
  out.gate_right = zeros;

  if (req.left_size == 1) {
    if (!all_explicit(req.left_tokens))
      out.left_logits = linear(add(z_rows, pos.prev), la_.left_w, la_.left_b);
    const Tensor w = neighbor(out.left_logits, req.left_tokens, -1, kBos, out.left_ids);
    if (!req.force_gates_zero)
      out.gate_left = sigmoid(linear(add(w, pos.prev), la_.gate_left_w, la_.gate_left_b));
    slot_left = mul(out.gate_left, w);
  }
  if (req.right_size == 1) {
    if (!all_explicit(req.right_tokens))
      out.right_logits = linear(add(z_rows, pos.next), la_.right_w, la_.right_b);
    const Tensor w = neighbor(out.right_logits, req.right_tokens, +1, kEos, out.right_ids);
    if (!req.force_gates_zero)
      out.gate_right = sigmoid(linear(add(w, pos.next), la_.gate_right_w, la_.gate_right_b));
    slot_right = mul(out.gate_right, w);
  }
  out.fused = concat_cols({add(z_rows, pos.cur), slot_left, slot_right});
  out.current_logits = linear(out.fused, la_.current_w, la_.current_b);
  return out;
}

Tensor NatModel::current_logits_with_neighbors(const Tensor& z_rows, int m, int first,
                                               std::span<const int> left_ids,
                                               std::span<const int> right_ids,
                                               bool force_gates_zero) const {
  ReadoutRequest req;
  req.mode = ReadoutMode::kInfer;
  req.left_size = cfg_.left_size;
  req.right_size = cfg_.right_size;
  req.left_tokens = left_ids;
  req.right_tokens = right_ids;
  req.force_gates_zero = force_gates_zero;
  return look_around_readout(z_rows, m, first, req).current_logits;
}

int NatModel::predicted_length(const EncoderOutput& enc) const {
  const auto dist = predict_length(enc, length_);
  const int m = resolve_target_length(enc.n, class_delta(argmax(dist)));
  return std::min(m, cfg_.max_len);
}

Tensor NatModel::decode_representation(const EncoderOutput& enc, int m) const {
  NoGradGuard no_grad;
  return decoder_forward(copy_source_input(enc.H, enc.n, m), enc).final_z;
}

NatPass NatModel::nat_forward(std::span<const int> source) const {
  NoGradGuard no_grad;
  EncoderOutput enc = encode(source);
  const int m = predicted_length(enc);
  return nat_forward(enc, m);
}

NatPass NatModel::nat_forward(const EncoderOutput& enc, int m) const {
  NoGradGuard no_grad;
  NatPass pass;
  pass.n = enc.n;
  pass.m = m;
  pass.enc = enc;
  pass.z = decode_representation(enc, m);
  ReadoutRequest req;
  req.left_size = cfg_.left_size;
  req.right_size = cfg_.right_size;
  const ReadoutOutput ro = look_around_readout(pass.z, req);
  const std::size_t v = static_cast<std::size_t>(cfg_.vocab_size);
  for (int i = 0; i < m; ++i) {
    auto row = [&](const Tensor& logits) {
      return logits.defined() ? row_softmax(logits.data().subspan(i * v, v))
                              : std::vector<double>{};
    };
    pass.left_dist.push_back(row(ro.left_logits));
    pass.right_dist.push_back(row(ro.right_logits));
    pass.current_dist.push_back(row(ro.current_logits));
  }
  return pass;
}

void NatModel::import_encoder_weights(const NamedTensors& weights) {
  store_.assign(weights, "encoder.");
}

}  // namespace lava

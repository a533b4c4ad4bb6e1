#include "lava/teacher.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lava {

Teacher::Teacher(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.init_seed);
  encoder_ = Encoder(store_, "encoder", cfg_, rng);
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
  tgt_embed_ = store_.add("decoder.embed.token",
                          init::normal({static_cast<std::size_t>(cfg_.vocab_size), d},
                                       emb_std, rng));
  // One extra row: decoder inputs are BOS + up to max_len tokens.
  tgt_pos_ = store_.add("decoder.embed.pos",
                        init::normal({static_cast<std::size_t>(cfg_.max_len + 1), d},
                                     emb_std, rng));
  out_bias_ = store_.add("decoder.out_bias",
                         init::constant({static_cast<std::size_t>(cfg_.vocab_size)}, 0.0));
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    blocks_.push_back(TransformerBlockParams::create(
        store_, "decoder.block" + std::to_string(l), cfg_, true, rng));
  }
}

Tensor Teacher::decoder_logits(const EncoderOutput& enc, std::span<const int> inputs,
                               std::mt19937_64* dropout_rng) const {
  BlockContext ctx;
  ctx.heads = cfg_.heads;
  ctx.rel_k = cfg_.rel_k;
  ctx.causal = true;
  ctx.dropout = cfg_.dropout;
  ctx.rng = dropout_rng;
  ctx.memory = &enc.H;
  ctx.memory_mask = &enc.mask;
  Tensor x = embed_tokens(inputs, tgt_embed_, tgt_pos_);
  if (dropout_rng) x = dropout(x, cfg_.dropout, *dropout_rng);
  const std::vector<std::uint8_t> mask(inputs.size(), 1);
  for (const auto& block : blocks_) x = self_attention_block(x, block, mask, ctx);
  return add_row(matmul_nt(x, tgt_embed_), out_bias_);
}

void Teacher::check_target(std::span<const int> target) const {
  if (target.empty()) throw ContractError("score_sequence: empty target");
  if (static_cast<int>(target.size()) > cfg_.max_len) {
    throw ContractError("score_sequence: target longer than max_len");
  }
  for (int t : target) {
    if (t < 0 || t >= cfg_.vocab_size) {
      throw ContractError("score_sequence: token " + std::to_string(t) +
                          " outside vocabulary");
    }
    if (t == kPad) throw ContractError("score_sequence: PAD inside target");
  }
}

namespace {

std::vector<int> with_bos(std::span<const int> target) {
  std::vector<int> in{kBos};
  in.insert(in.end(), target.begin(), target.end());
  return in;
}

std::vector<int> with_eos(std::span<const int> target) {
  std::vector<int> out(target.begin(), target.end());
  out.push_back(kEos);
  return out;
}

}  // namespace

Tensor Teacher::loss(const SentencePair& pair, double smoothing,
                     std::mt19937_64* dropout_rng) const {
  check_target(pair.target);
  const EncoderOutput enc = encoder_.encode(pair.source, dropout_rng);
  const Tensor logits = decoder_logits(enc, with_bos(pair.target), dropout_rng);
  return cross_entropy(logits, with_eos(pair.target), smoothing);
}

double Teacher::score_sequence(std::span<const int> source,
                               std::span<const int> target) const {
  NoGradGuard no_grad;
  return score_sequence(encoder_.encode(source), target);
}

double Teacher::score_sequence(const EncoderOutput& enc,
                               std::span<const int> target) const {
  check_target(target);
  NoGradGuard no_grad;
  const Tensor logp = log_softmax(decoder_logits(enc, with_bos(target)));
  const auto next = with_eos(target);
  const std::size_t v = logp.cols();
  double total = 0.0;
  for (std::size_t t = 0; t < next.size(); ++t) total += logp.data()[t * v + next[t]];
  return total;
}

std::vector<double> Teacher::stepwise_log_probs(std::span<const int> source,
                                                std::span<const int> target) const {
  check_target(target);
  NoGradGuard no_grad;
  const EncoderOutput enc = encoder_.encode(source);
  const auto inputs = with_bos(target);
  const auto next = with_eos(target);
  std::vector<double> out;
  for (std::size_t t = 0; t < next.size(); ++t) {
    const Tensor logits = decoder_logits(enc, std::span(inputs).first(t + 1));
    const Tensor last = log_softmax(slice_rows(logits, t, 1));
    out.push_back(last.data()[next[t]]);
  }
  return out;
}

BeamResult Teacher::beam_decode(std::span<const int> source, int beam_width,
                                int max_len) const {
  NoGradGuard no_grad;
  return beam_decode(encoder_.encode(source), beam_width, max_len);
}

BeamResult Teacher::beam_decode(const EncoderOutput& enc, int beam_width,
                                int max_len) const {
  if (beam_width < 1) throw ContractError("beam_decode: beam_width must be >= 1");
  NoGradGuard no_grad;
  max_len = std::clamp(max_len, 1, cfg_.max_len);
  BeamResult best = search(enc, 1, max_len);
  if (beam_width > 1) {
    // The greedy completion stays in the candidate pool so a wider beam
    // never returns a worse normalized score.
    BeamResult wide = search(enc, beam_width, max_len);
    wide.decoder_passes += best.decoder_passes;
    if (wide.score > best.score) {
      best = std::move(wide);
    } else {
      best.decoder_passes = wide.decoder_passes;
    }
  }
  return best;
}

BeamResult Teacher::search(const EncoderOutput& enc, int beam_width, int max_len) const {
  struct Hyp {
    std::vector<int> tokens;
    double log_prob;
  };
  // Hypotheses hold at least one token before EOS may be chosen.
  std::vector<Hyp> live{{{}, 0.0}};
  std::vector<BeamResult> finished;
  const int v = cfg_.vocab_size;
  long passes = 0;

  while (!live.empty() && static_cast<int>(finished.size()) < beam_width) {
    struct Expansion {
      std::size_t parent;
      int token;
      double log_prob;
    };
    std::vector<Expansion> expansions;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const auto inputs = with_bos(live[h].tokens);
      const Tensor logits = decoder_logits(enc, inputs);
      ++passes;
      const Tensor logp = log_softmax(slice_rows(logits, inputs.size() - 1, 1));
      const auto row = logp.data();
      if (static_cast<int>(live[h].tokens.size()) >= max_len) {
        expansions.push_back({h, kEos, live[h].log_prob + row[kEos]});
        continue;
      }
      std::vector<int> ids;
      for (int t = 0; t < v; ++t)
        if (t != kPad && t != kBos && (t != kEos || !live[h].tokens.empty()))
          ids.push_back(t);
      const auto k = std::min<std::size_t>(beam_width, ids.size());
      std::partial_sort(ids.begin(), ids.begin() + k, ids.end(), [&](int a, int b) {
        return row[a] > row[b] || (row[a] == row[b] && a < b);
      });
      for (std::size_t i = 0; i < k; ++i)
        expansions.push_back({h, ids[i], live[h].log_prob + row[ids[i]]});
    }
    std::stable_sort(expansions.begin(), expansions.end(),
                     [](const Expansion& a, const Expansion& b) {
                       return a.log_prob > b.log_prob;
                     });
    std::vector<Hyp> next;
    for (const auto& e : expansions) {
      if (static_cast<int>(next.size()) >= beam_width) break;
      if (e.token == kEos) {
        BeamResult r;
        r.tokens = live[e.parent].tokens;
        r.log_prob = e.log_prob;
        r.score = e.log_prob / static_cast<double>(r.tokens.size() + 1);
        finished.push_back(std::move(r));
        if (static_cast<int>(finished.size()) >= beam_width) break;
      } else {
        Hyp h{live[e.parent].tokens, e.log_prob};
        h.tokens.push_back(e.token);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }
  if (finished.empty()) throw ContractError("beam_decode: no hypothesis finished");
  BeamResult best = *std::max_element(finished.begin(), finished.end(),
                                      [](const BeamResult& a, const BeamResult& b) {
                                        return a.score < b.score;
                                      });
  best.decoder_passes = passes;
  return best;
}

NamedTensors Teacher::export_encoder_weights() const {
  return store_.snapshot("encoder.");
}

std::vector<SentencePair> distill_dataset(const Teacher& teacher,
                                          const std::vector<SentencePair>& pairs,
                                          int beam_width) {
  std::vector<SentencePair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    BeamResult r = teacher.beam_decode(p.source, beam_width, teacher.config().max_len);
    out.push_back({p.source, std::move(r.tokens)});
  }
  return out;
}

}  // namespace lava

#pragma once

#include <random>
#include <span>
#include <vector>

#include "lava/config.h"
#include "lava/data.h"
#include "lava/encoder.h"
#include "lava/params.h"

namespace lava {

struct BeamResult {
  std::vector<int> tokens;  // without BOS/EOS
  double log_prob = 0.0;    // includes the EOS term
  double score = 0.0;       // log_prob / (tokens + 1)
  long decoder_passes = 0;  // full decoder evaluations spent on the search
};

// Autoregressive encoder-decoder used for distillation, rescoring, and the
// sequential latency baseline. Output projection is tied to the target
// embedding table.
class Teacher {
 public:
  explicit Teacher(const ModelConfig& cfg);
  Teacher(const Teacher&) = delete;
  Teacher& operator=(const Teacher&) = delete;
  Teacher(Teacher&&) = default;
  Teacher& operator=(Teacher&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const Encoder& encoder() const { return encoder_; }

  // Logits [len(inputs) × V] for decoder inputs starting with BOS.
  Tensor decoder_logits(const EncoderOutput& enc, std::span<const int> inputs,
                        std::mt19937_64* dropout_rng = nullptr) const;

  // Teacher-forced token-level cross entropy (sum over y and EOS).
  Tensor loss(const SentencePair& pair, double smoothing,
              std::mt19937_64* dropout_rng = nullptr) const;

  // Σ_t log p(y_t | y_<t, x) including the final EOS term.
  double score_sequence(std::span<const int> source, std::span<const int> target) const;
  double score_sequence(const EncoderOutput& enc, std::span<const int> target) const;
  // Same quantity from a token-at-a-time rollout; one entry per step.
  std::vector<double> stepwise_log_probs(std::span<const int> source,
                                         std::span<const int> target) const;

  BeamResult beam_decode(std::span<const int> source, int beam_width, int max_len) const;
  BeamResult beam_decode(const EncoderOutput& enc, int beam_width, int max_len) const;

  // Every encoder.* parameter under its canonical name.
  NamedTensors export_encoder_weights() const;

 private:
  void check_target(std::span<const int> target) const;
  BeamResult search(const EncoderOutput& enc, int beam_width, int max_len) const;

  ModelConfig cfg_;
  ParamStore store_;
  Encoder encoder_;
  Tensor tgt_embed_;
  Tensor tgt_pos_;
  Tensor out_bias_;
  std::vector<TransformerBlockParams> blocks_;
};

std::vector<SentencePair> distill_dataset(const Teacher& teacher,
                                          const std::vector<SentencePair>& pairs,
                                          int beam_width);

}  // namespace lava

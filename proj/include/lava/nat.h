#pragma once

#include <random>
#include <span>
#include <vector>

#include "lava/config.h"
#include "lava/data.h"
#include "lava/encoder.h"
#include "lava/params.h"

namespace lava {

// ---- length prediction --------------------------------------------------------

struct LengthPredictorParams {
  Tensor w;  // d × 41
  Tensor b;  // 41
};

// Logits [1 × 41] over Δm = class − 20, from the max-pool of unmasked rows.
Tensor length_logits(const EncoderOutput& enc, const LengthPredictorParams& p);
std::vector<double> predict_length(const EncoderOutput& enc,
                                   const LengthPredictorParams& p);

int length_class(int delta);  // clips Δm into [-20, 20], returns 0..40
int class_delta(int cls);
int resolve_target_length(int n, int delta);

// ---- decoder input and vocabulary attention ------------------------------------

// Row i of the decoder input copies encoder row floor(n * i / m).
std::vector<int> copy_source_indices(int n, int m);
Tensor copy_source_input(const Tensor& H, int n, int m);

// Rows of softmax(Z · Wᵀ / √d) · W. When `weights_out` is set it receives the
// attention weights over the vocabulary.
Tensor vocabulary_attention(const Tensor& z, const Tensor& vocab_table,
                            Tensor* weights_out = nullptr);

// Σ_y W[y] · softmax(α · s)[y] for each row of `logits`.
Tensor peaked_softmax_embed(const Tensor& logits, double alpha,
                            const Tensor& vocab_table);

struct DecoderTrace {
  std::vector<Tensor> Z;  // Z^(0) .. Z^(N)
  std::vector<Tensor> A;  // A^(0) .. A^(N); empty when vocabulary attention is off
  Tensor final_z;         // A^(N), or Z^(N) with vocabulary attention off
};

// ---- look-around readout --------------------------------------------------------

struct LAHeadParams {
  Tensor left_w, left_b;
  Tensor right_w, right_b;
  Tensor current_w, current_b;  // (3d) × V
  Tensor gate_left_w, gate_left_b;
  Tensor gate_right_w, gate_right_b;
  Tensor sentinel_left;   // 1 × d, stands in for p_{-1}
  Tensor sentinel_right;  // 1 × d, stands in for p_m
};

enum class ReadoutMode { kTeacherForced, kScheduledSampling, kDifferentiable, kInfer };

struct ReadoutRequest {
  ReadoutMode mode = ReadoutMode::kInfer;
  int left_size = 1;
  int right_size = 1;
  // Ground-truth target, required for teacher-forced and scheduled sampling.
  std::span<const int> targets;
  double ground_truth_prob = 1.0;  // scheduled sampling
  std::mt19937_64* rng = nullptr;  // scheduled sampling coin flips
  double alpha = 10.0;             // peaked softmax temperature
  bool force_gates_zero = false;
  // Explicit neighbor tokens (size m each, -1 = use the head's own argmax).
  // Only read in kInfer mode.
  std::span<const int> left_tokens;
  std::span<const int> right_tokens;
};

struct ReadoutOutput {
  Tensor left_logits;   // m × V, undefined when LS = 0
  Tensor right_logits;  // m × V, undefined when RS = 0
  Tensor current_logits;
  Tensor fused;  // z̄, m × 3d
  Tensor gate_left;
  Tensor gate_right;
  std::vector<int> left_ids;   // neighbor tokens embedded (hard modes)
  std::vector<int> right_ids;
};

// Position rows used by the readout: p_{i-1}, p_i, p_{i+1} for i in [first,
// first + count) of a length-m sequence, with sentinels past either edge.
struct ReadoutPositions {
  Tensor prev, cur, next;
};

// ---- model ------------------------------------------------------------------

struct NatPass {
  int n = 0;
  int m = 0;
  EncoderOutput enc;
  Tensor z;  // final decoder representation, m × d
  std::vector<std::vector<double>> left_dist, right_dist, current_dist;
};

class NatModel {
 public:
  explicit NatModel(const ModelConfig& cfg);
  NatModel(const NatModel&) = delete;
  NatModel& operator=(const NatModel&) = delete;
  NatModel(NatModel&&) = default;
  NatModel& operator=(NatModel&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const Encoder& encoder() const { return encoder_; }
  const Tensor& vocab_table() const { return vocab_table_; }
  const Tensor& pos_table() const { return encoder_.pos_table(); }
  const LengthPredictorParams& length_params() const { return length_; }
  const LAHeadParams& heads() const { return la_; }

  EncoderOutput encode(std::span<const int> source,
                       std::mt19937_64* dropout_rng = nullptr) const;

  // Z^(0) = D + positions; N layers of [Z; A] fusion followed by a block.
  DecoderTrace decoder_forward(const Tensor& D, const EncoderOutput& enc,
                               std::mt19937_64* dropout_rng = nullptr) const;

  ReadoutPositions readout_positions(int m, int first, int count) const;

  // Readout over all m rows of z.
  ReadoutOutput look_around_readout(const Tensor& z, const ReadoutRequest& req) const;
  // Readout for rows [first, first + count) of a length-m sequence whose final
  // representations for those rows are `z_rows`.
  ReadoutOutput look_around_readout(const Tensor& z_rows, int m, int first,
                                    const ReadoutRequest& req) const;

  // Current-token logits [count × V] from explicit neighbor tokens.
  Tensor current_logits_with_neighbors(const Tensor& z_rows, int m, int first,
                                       std::span<const int> left_ids,
                                       std::span<const int> right_ids,
                                       bool force_gates_zero = false) const;

  // Target length from the length predictor, clamped to [1, max_len].
  int predicted_length(const EncoderOutput& enc) const;

  // Decoder representation for a given target length (no readout).
  Tensor decode_representation(const EncoderOutput& enc, int m) const;

  // One-pass inference: encode, predict length, copy, decode, read out.
  NatPass nat_forward(std::span<const int> source) const;
  NatPass nat_forward(const EncoderOutput& enc, int m) const;

  void import_encoder_weights(const NamedTensors& weights);

 private:
  ModelConfig cfg_;
  ParamStore store_;
  Encoder encoder_;
  Tensor vocab_table_;
  LengthPredictorParams length_;
  std::vector<Tensor> fuse_w_, fuse_b_;
  std::vector<TransformerBlockParams> blocks_;
  LAHeadParams la_;
};

std::vector<double> row_softmax(std::span<const double> logits);

}  // namespace lava

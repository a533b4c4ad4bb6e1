#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lava/data.h"
#include "lava/nat.h"
#include "lava/teacher.h"

namespace lava {

// ---- schedules ------------------------------------------------------------------

struct LambdaSchedule {
  enum class Kind { kConstant, kLinear };
  Kind kind = Kind::kLinear;
  double value = 0.1;    // constant value, or λ_max for linear
  double horizon = 5.0;  // epochs to reach λ_max (linear only)

  static LambdaSchedule constant(double value);
  static LambdaSchedule linear(double max_value, double horizon);
  // "constant:0.1" or "linear:0.1:5".
  static LambdaSchedule parse(std::string_view text);
  std::string to_string() const;
};

double lambda_schedule(const LambdaSchedule& spec, double epoch);

enum class SamplingMode { kTeacherForced, kScheduled, kDifferentiable };

SamplingMode parse_sampling(std::string_view name);  // tf | ss | dss
std::string_view sampling_name(SamplingMode mode);

struct TrainConfig {
  double alpha = 10.0;
  LambdaSchedule lambda;
  bool use_bow = true;
  SamplingMode sampling = SamplingMode::kDifferentiable;
  double smoothing = 0.1;
  double ss_final_prob = 0.5;  // ground-truth probability at the end of training
  double peak_lr = 2e-3;
  long warmup_steps = 200;
  int epochs = 10;
  int batch_size = 32;
  std::uint64_t seed = 1;
  bool use_kd = false;
  int kd_beam = 4;
  bool init_encoder_from_teacher = false;
  int average_best = 5;  // checkpoints averaged at the end, ranked by dev loss

  void validate() const;
};

// ---- losses ---------------------------------------------------------------------

// Label-smoothed NLL of the current head plus plain NLL of the left and right
// heads against y*_{i-1} / y*_{i+1} (BOS and EOS past the edges). Undefined
// neighbor logits are skipped. PAD target positions contribute nothing.
Tensor ce_loss(const Tensor& current_logits, const Tensor& left_logits,
               const Tensor& right_logits, std::span<const int> targets,
               double smoothing);

// −Σ_{v ∈ set(y*)} log σ(Σ_i logits_i[v]) over non-PAD positions.
Tensor bow_loss_from_logits(const Tensor& current_logits, std::span<const int> targets);
Tensor bow_loss(const Tensor& fused, const Tensor& w, const Tensor& b,
                std::span<const int> targets);

Tensor combined_loss(const Tensor& ce, const Tensor& bow, double lambda);

// Targets shifted for the neighbor heads.
std::vector<int> left_targets(std::span<const int> targets);
std::vector<int> right_targets(std::span<const int> targets);

// ---- NAT step ---------------------------------------------------------------------

struct NatLossParts {
  Tensor total;   // ce + λ·bow + length
  Tensor ce;
  Tensor bow;     // undefined when BOW is off
  Tensor length;  // length-predictor CE
  int tokens = 0;
};

struct NatStepOptions {
  ReadoutMode mode = ReadoutMode::kDifferentiable;
  double alpha = 10.0;
  double lambda = 0.0;
  bool use_bow = true;
  double smoothing = 0.1;
  double ground_truth_prob = 1.0;
  std::mt19937_64* sampling_rng = nullptr;
  std::mt19937_64* dropout_rng = nullptr;  // null: no dropout
};

// Ground-truth-length forward and loss for one pair.
NatLossParts nat_loss(const NatModel& model, const SentencePair& pair,
                      const NatStepOptions& opts);

// ---- training loops ---------------------------------------------------------------

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;  // per target token, training set
  double ce = 0.0;
  double bow = 0.0;
  double lambda = 0.0;
  double dev_loss = 0.0;
  double length_acc = 0.0;  // dev
  double token_acc = 0.0;   // dev, ground-truth length
  double repeat_rate = 0.0; // dev, ground-truth length

  std::string to_json() const;
};

struct TrainLog {
  std::vector<EpochMetrics> epochs;
  std::vector<int> averaged_epochs;
  long steps = 0;
};

// Trains the student. With use_kd the targets are replaced by the teacher's
// beam outputs first; init_encoder_from_teacher copies encoder.* weights.
// Metrics are written as one JSON line per epoch when `metrics_out` is set.
TrainLog train_nat(NatModel& model, const std::vector<SentencePair>& train,
                   const std::vector<SentencePair>& dev, const TrainConfig& cfg,
                   const Teacher* teacher = nullptr, std::ostream* metrics_out = nullptr);

struct TeacherMetrics {
  int epoch = 0;
  double loss = 0.0;
  double dev_loss = 0.0;
  double token_acc = 0.0;  // dev, teacher-forced, EOS included

  std::string to_json() const;
};

struct TeacherLog {
  std::vector<TeacherMetrics> epochs;
  long steps = 0;
};

TeacherLog train_teacher(Teacher& teacher, const std::vector<SentencePair>& train,
                         const std::vector<SentencePair>& dev, const TrainConfig& cfg,
                         std::ostream* metrics_out = nullptr);

// Teacher-forced next-token accuracy over the set, EOS included.
double teacher_token_accuracy(const Teacher& teacher, const std::vector<SentencePair>& pairs);

// Element-wise mean of snapshots with identical keys and shapes.
NamedTensors average_snapshots(const std::vector<NamedTensors>& snapshots);

}  // namespace lava

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lava/nat.h"
#include "lava/teacher.h"

namespace lava {

enum class Strategy { kGreedy, kNpd, kLinkRescore, kL2R, kR2L, kDynamic, kAtBeam };

// greedy | npd | link | l2r | r2l | dynamic | at-beam
Strategy parse_strategy(std::string_view name);
std::string_view strategy_name(Strategy s);

// Per-position (left, current, right) predictions; -1 marks an absent head.
struct Triple {
  int left = -1;
  int current = -1;
  int right = -1;
  double left_prob = 0.0;
  double current_prob = 0.0;
  double right_prob = 0.0;
};

struct RefinementRound {
  int round = 0;
  std::vector<int> positions;
};

struct DecodeResult {
  std::vector<int> tokens;
  std::vector<double> token_probs;
  std::vector<Triple> triples;
  std::vector<RefinementRound> refinement_trace;
  double latency_ms = 0.0;
  Strategy strategy = Strategy::kGreedy;
  int candidates_scored = 0;
  long decoder_passes = 0;  // full decoder-stack evaluations
  long readout_sweeps = 0;  // look-around readout evaluations over the sequence
  double teacher_score = 0.0;  // rescoring strategies only
};

// Read-only view of one decoded sequence's look-around readout. The model
// adapter and hand-built fixtures both implement it.
class LookAroundSource {
 public:
  virtual ~LookAroundSource() = default;
  virtual int length() const = 0;
  virtual bool has_left() const = 0;
  virtual bool has_right() const = 0;
  virtual std::span<const double> left_dist(int i) const = 0;
  virtual std::span<const double> right_dist(int i) const = 0;
  virtual std::span<const double> current_dist(int i) const = 0;
  // Current-token distribution at i with the given neighbor tokens embedded
  // on the gate pathway; -1 keeps the head's own prediction.
  virtual std::vector<double> current_given(int i, int left_id, int right_id) const = 0;
};

class NatSource : public LookAroundSource {
 public:
  NatSource(const NatModel& model, NatPass pass);

  int length() const override { return pass_.m; }
  bool has_left() const override { return model_->config().left_size == 1; }
  bool has_right() const override { return model_->config().right_size == 1; }
  std::span<const double> left_dist(int i) const override;
  std::span<const double> right_dist(int i) const override;
  std::span<const double> current_dist(int i) const override;
  std::vector<double> current_given(int i, int left_id, int right_id) const override;

  const NatPass& pass() const { return pass_; }

 private:
  const NatModel* model_;
  NatPass pass_;
};

// Strategies over a readout source.
DecodeResult greedy_from(const LookAroundSource& src);
DecodeResult dynamic_from(const LookAroundSource& src, double threshold, int max_rounds);
DecodeResult sequential_from(const LookAroundSource& src, bool left_to_right, int beam_width);

using SequenceScorer = std::function<double(std::span<const int>)>;
// Candidate sets per position: {right prediction of i-1, current i, left
// prediction of i+1}, members missing at the edges.
std::vector<std::vector<int>> link_candidates(const LookAroundSource& src);
DecodeResult link_rescore_from(const LookAroundSource& src, const SequenceScorer& score,
                               int num_samples, std::uint64_t seed);

// Length offsets tried by NPD: 0, +1, -1, +2, -2, ...
std::vector<int> npd_lengths(int predicted, int num_candidates, int max_len);

// Strategies over a trained model. `teacher` may be null where unused.
DecodeResult greedy_decode(const NatModel& model, std::span<const int> source);
DecodeResult npd_decode(const NatModel& model, const Teacher* teacher,
                        std::span<const int> source, int num_candidates);
DecodeResult link_rescore_decode(const NatModel& model, const Teacher* teacher,
                                 std::span<const int> source, int num_samples,
                                 std::uint64_t seed);
DecodeResult sequential_decode(const NatModel& model, std::span<const int> source,
                               bool left_to_right, int beam_width);
DecodeResult dynamic_decode(const NatModel& model, std::span<const int> source,
                            double threshold = 0.5, int max_rounds = 4);
DecodeResult at_beam_decode(const Teacher& teacher, std::span<const int> source,
                            int beam_width);

struct DecodeOptions {
  Strategy strategy = Strategy::kGreedy;
  int num_candidates = 10;  // npd
  int num_samples = 10;     // link
  std::uint64_t seed = 1;   // link
  int beam_width = 1;       // l2r / r2l; at-beam uses `at_beam`
  int at_beam = 4;
  double threshold = 0.5;   // dynamic
  int max_rounds = 4;       // dynamic
};

DecodeResult decode(const NatModel* model, const Teacher* teacher,
                    std::span<const int> source, const DecodeOptions& opts);

}  // namespace lava

#pragma once

#include <string>
#include <vector>

#include "lava/decoding.h"

namespace lava {

struct StrategyReport {
  std::string name;
  double mean_latency_ms = 0.0;  // per sentence
  double speedup = 0.0;          // AT beam latency / this latency
  double bleu = 0.0;
  double repeat_rate = 0.0;
  double candidates_scored = 0.0;  // mean per sentence
  double decoder_passes = 0.0;     // mean per sentence
  double readout_sweeps = 0.0;     // mean per sentence
};

struct BenchReport {
  int sentences = 0;
  int warmup = 0;
  double mean_target_length = 0.0;
  double at_latency_ms = 0.0;
  std::vector<StrategyReport> strategies;

  const StrategyReport& find(const std::string& name) const;
  std::string to_json() const;
};

// Label used in reports: the strategy name, with "@k" for npd candidates and
// link samples ("npd@10").
std::string strategy_label(const DecodeOptions& opts);

// Batch size one, single thread, wall-clock per sentence over the whole test
// set after `warmup` excluded decodes per strategy. The teacher's beam-4
// decode is always measured as the speedup baseline and always reported.
BenchReport latency_bench(const NatModel* model, const Teacher& teacher,
                          const std::vector<DecodeOptions>& strategies,
                          const std::vector<SentencePair>& test, int warmup = 5);

}  // namespace lava

#include "lava/bench.h"

#include <algorithm>
#include <chrono>

#include <json.hpp>

#include "lava/metrics.h"

namespace lava {

std::string strategy_label(const DecodeOptions& opts) {
  std::string name(strategy_name(opts.strategy));
  if (opts.strategy == Strategy::kNpd) name += "@" + std::to_string(opts.num_candidates);
  if (opts.strategy == Strategy::kLinkRescore) name += "@" + std::to_string(opts.num_samples);
  if (opts.strategy == Strategy::kAtBeam) name += "@" + std::to_string(opts.at_beam);
  if ((opts.strategy == Strategy::kL2R || opts.strategy == Strategy::kR2L) && opts.beam_width > 1)
    name += "@" + std::to_string(opts.beam_width);
  return name;
}

const StrategyReport& BenchReport::find(const std::string& name) const {
  for (const auto& s : strategies)
    if (s.name == name) return s;
  throw ContractError("bench report has no strategy '" + name + "'");
}

std::string BenchReport::to_json() const {
  nlohmann::ordered_json j;
  j["sentences"] = sentences;
  j["warmup"] = warmup;
  j["mean_target_length"] = mean_target_length;
  j["at_latency_ms"] = at_latency_ms;
  auto& arr = j["strategies"] = nlohmann::ordered_json::array();
  for (const auto& s : strategies) {
    nlohmann::ordered_json e;
    e["name"] = s.name;
    e["mean_latency_ms"] = s.mean_latency_ms;
    e["speedup"] = s.speedup;
    e["bleu"] = s.bleu;
    e["repeat_rate"] = s.repeat_rate;
    e["candidates_scored"] = s.candidates_scored;
    e["decoder_passes"] = s.decoder_passes;
    e["readout_sweeps"] = s.readout_sweeps;
    arr.push_back(e);
  }
  return j.dump();
}

namespace {

StrategyReport measure(const NatModel* model, const Teacher& teacher, const DecodeOptions& opts,
                       const std::vector<SentencePair>& test, int warmup) {
  for (int w = 0; w < warmup; ++w) {
    decode(model, &teacher, test[static_cast<std::size_t>(w) % test.size()].source, opts);
  }
  StrategyReport rep;
  rep.name = strategy_label(opts);
  std::vector<std::vector<int>> hyps, refs;
  double total_ms = 0.0, scored = 0.0, passes = 0.0, sweeps = 0.0;
  for (const auto& pair : test) {
    const auto start = std::chrono::steady_clock::now();
    DecodeResult r = decode(model, &teacher, pair.source, opts);
    total_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                    .count();
    scored += r.candidates_scored;
    passes += static_cast<double>(r.decoder_passes);
    sweeps += static_cast<double>(r.readout_sweeps);
    hyps.push_back(std::move(r.tokens));
    refs.push_back(pair.target);
  }
  const double n = static_cast<double>(test.size());
  rep.mean_latency_ms = total_ms / n;
  rep.candidates_scored = scored / n;
  rep.decoder_passes = passes / n;
  rep.readout_sweeps = sweeps / n;
  rep.bleu = bleu(hyps, refs);
  rep.repeat_rate = repeated_token_rate(hyps);
  return rep;
}

}  // namespace

BenchReport latency_bench(const NatModel* model, const Teacher& teacher,
                          const std::vector<DecodeOptions>& strategies,
                          const std::vector<SentencePair>& test, int warmup) {
  if (test.empty()) throw ContractError("latency_bench: empty test set");
  if (warmup < 0) throw ContractError("latency_bench: warmup must be >= 0");
  BenchReport report;
  report.sentences = static_cast<int>(test.size());
  report.warmup = warmup;
  double len = 0.0;
  for (const auto& p : test) len += static_cast<double>(p.target.size());
  report.mean_target_length = len / static_cast<double>(test.size());

  DecodeOptions baseline;
  baseline.strategy = Strategy::kAtBeam;
  baseline.at_beam = 4;
  const StrategyReport at = measure(model, teacher, baseline, test, warmup);
  report.at_latency_ms = at.mean_latency_ms;
  for (const auto& opts : strategies) {
    StrategyReport rep = strategy_label(opts) == at.name ? at
                                                         : measure(model, teacher, opts, test, warmup);
    rep.speedup = at.mean_latency_ms / rep.mean_latency_ms;
    report.strategies.push_back(std::move(rep));
  }
  const bool listed = std::any_of(report.strategies.begin(), report.strategies.end(),
                                  [&](const StrategyReport& r) { return r.name == at.name; });
  if (!listed) {
    StrategyReport rep = at;
    rep.speedup = 1.0;
    report.strategies.push_back(std::move(rep));
  }
  return report;
}

}  // namespace lava

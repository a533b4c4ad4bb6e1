#include "lava/decoding.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <random>

namespace lava {

Strategy parse_strategy(std::string_view name) {
  if (name == "greedy") return Strategy::kGreedy;
  if (name == "npd") return Strategy::kNpd;
  if (name == "link") return Strategy::kLinkRescore;
  if (name == "l2r") return Strategy::kL2R;
  if (name == "r2l") return Strategy::kR2L;
  if (name == "dynamic") return Strategy::kDynamic;
  if (name == "at-beam") return Strategy::kAtBeam;
  throw ConfigError("unknown strategy '" + std::string(name) +
                    "' (greedy, npd, link, l2r, r2l, dynamic, at-beam)");
}

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kGreedy: return "greedy";
    case Strategy::kNpd: return "npd";
    case Strategy::kLinkRescore: return "link";
    case Strategy::kL2R: return "l2r";
    case Strategy::kR2L: return "r2l";
    case Strategy::kDynamic: return "dynamic";
    case Strategy::kAtBeam: return "at-beam";
  }
  return "?";
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

bool emittable(int t) { return t != kPad && t != kBos && t != kEos; }

// Argmax over tokens that may appear inside an output sequence.
int best_token(std::span<const double> dist) {
  int best = -1;
  for (int t = 0; t < static_cast<int>(dist.size()); ++t) {
    if (emittable(t) && (best < 0 || dist[t] > dist[best])) best = t;
  }
  return best;
}

}  // namespace

// ---- model adapter ----------------------------------------------------------------

NatSource::NatSource(const NatModel& model, NatPass pass)
    : model_(&model), pass_(std::move(pass)) {}

std::span<const double> NatSource::left_dist(int i) const { return pass_.left_dist.at(i); }
std::span<const double> NatSource::right_dist(int i) const { return pass_.right_dist.at(i); }
std::span<const double> NatSource::current_dist(int i) const {
  return pass_.current_dist.at(i);
}

std::vector<double> NatSource::current_given(int i, int left_id, int right_id) const {
  NoGradGuard no_grad;
  const int m = pass_.m;
  std::vector<int> left(m, -1), right(m, -1);
  left[i] = left_id;
  right[i] = right_id;
  const Tensor logits = model_->current_logits_with_neighbors(slice_rows(pass_.z, i, 1), m, i,
                                                              left, right);
  return row_softmax(logits.data());
}

// ---- strategies over a readout --------------------------------------------------------

DecodeResult greedy_from(const LookAroundSource& src) {
  DecodeResult r;
  r.strategy = Strategy::kGreedy;
  const int m = src.length();
  r.tokens.resize(m);
  r.token_probs.resize(m);
  r.triples.resize(m);
  for (int i = 0; i < m; ++i) {
    Triple& t = r.triples[i];
    const auto cur = src.current_dist(i);
    t.current = best_token(cur);
    t.current_prob = cur[t.current];
    if (src.has_left()) {
      const auto l = src.left_dist(i);
      t.left = argmax(l);
      t.left_prob = l[t.left];
    }
    if (src.has_right()) {
      const auto rd = src.right_dist(i);
      t.right = argmax(rd);
      t.right_prob = rd[t.right];
    }
    r.tokens[i] = t.current;
    r.token_probs[i] = t.current_prob;
  }
  r.readout_sweeps = 1;
  return r;
}

DecodeResult dynamic_from(const LookAroundSource& src, double threshold, int max_rounds) {
  if (!(threshold >= 0.0 && threshold < 1.0)) {
    throw ContractError("dynamic_decode: threshold must be in [0, 1)");
  }
  if (max_rounds < 0) throw ContractError("dynamic_decode: max_rounds must be >= 0");
  DecodeResult r = greedy_from(src);
  r.strategy = Strategy::kDynamic;
  const int m = src.length();
  std::vector<bool> done(m, false);
  std::vector<bool> changed(m, false);
  for (int round = 1; round <= max_rounds; ++round) {
    const std::vector<int> before = r.tokens;
    auto neighbors_of = [&](int i) {
      return std::pair{i == 0 ? kBos : before[i - 1], i + 1 == m ? kEos : before[i + 1]};
    };
    // A position whose neighbor changed last round is re-scored against the
    // new neighbors; its token stays, only its confidence moves.
    bool swept = false;
    for (int i = 0; i < m; ++i) {
      const bool stale = (i > 0 && changed[i - 1]) || (i + 1 < m && changed[i + 1]);
      if (done[i] || !stale) continue;
      const auto [left, right] = neighbors_of(i);
      r.token_probs[i] = src.current_given(i, left, right)[r.tokens[i]];
      r.triples[i].current_prob = r.token_probs[i];
      swept = true;
    }
    std::vector<int> picked;
    for (int i = 0; i < m; ++i) {
      if (!done[i] && r.token_probs[i] < threshold) picked.push_back(i);
    }
    if (swept || !picked.empty()) ++r.readout_sweeps;
    if (picked.empty()) break;
    // Every picked position reads its neighbors from the pre-round sequence.
    std::fill(changed.begin(), changed.end(), false);
    for (int i : picked) {
      const auto [left, right] = neighbors_of(i);
      const auto dist = src.current_given(i, left, right);
      r.tokens[i] = best_token(dist);
      r.token_probs[i] = dist[r.tokens[i]];
      r.triples[i].current = r.tokens[i];
      r.triples[i].current_prob = r.token_probs[i];
      changed[i] = r.tokens[i] != before[i];
      done[i] = true;
    }
    r.refinement_trace.push_back({round, std::move(picked)});
  }
  return r;
}

DecodeResult sequential_from(const LookAroundSource& src, bool left_to_right, int beam_width) {
  if (beam_width < 1) throw ContractError("sequential_decode: beam_width must be >= 1");
  if (left_to_right ? !src.has_left() : !src.has_right()) {
    throw ConfigError(std::string("sequential_decode: ") +
                      (left_to_right ? "L2R needs LS = 1" : "R2L needs RS = 1"));
  }
  const int m = src.length();
  struct Hyp {
    std::vector<int> tokens;
    std::vector<double> probs;
    double log_prob = 0.0;
  };
  std::vector<Hyp> beam{{std::vector<int>(m, -1), std::vector<double>(m, 0.0), 0.0}};
  for (int step = 0; step < m; ++step) {
    const int i = left_to_right ? step : m - 1 - step;
    struct Expansion {
      std::size_t parent;
      int token;
      double prob;
      double log_prob;
    };
    std::vector<Expansion> expansions;
    for (std::size_t h = 0; h < beam.size(); ++h) {
      const auto& hyp = beam[h];
      std::vector<double> dist;
      if (left_to_right) {
        dist = src.current_given(i, i == 0 ? kBos : hyp.tokens[i - 1], -1);
      } else {
        dist = src.current_given(i, -1, i + 1 == m ? kEos : hyp.tokens[i + 1]);
      }
      std::vector<int> ids;
      for (int t = 0; t < static_cast<int>(dist.size()); ++t)
        if (emittable(t)) ids.push_back(t);
      const auto k = std::min<std::size_t>(beam_width, ids.size());
      std::partial_sort(ids.begin(), ids.begin() + k, ids.end(), [&](int a, int b) {
        return dist[a] > dist[b] || (dist[a] == dist[b] && a < b);
      });
      for (std::size_t j = 0; j < k; ++j) {
        expansions.push_back(
            {h, ids[j], dist[ids[j]], hyp.log_prob + std::log(dist[ids[j]])});
      }
    }
    std::stable_sort(expansions.begin(), expansions.end(),
                     [](const Expansion& a, const Expansion& b) { return a.log_prob > b.log_prob; });
    std::vector<Hyp> next;
    for (const auto& e : expansions) {
      if (static_cast<int>(next.size()) >= beam_width) break;
      Hyp h = beam[e.parent];
      h.tokens[i] = e.token;
      h.probs[i] = e.prob;
      h.log_prob = e.log_prob;
      next.push_back(std::move(h));
    }
    beam = std::move(next);
  }
  DecodeResult r = greedy_from(src);
  r.strategy = left_to_right ? Strategy::kL2R : Strategy::kR2L;
  r.tokens = beam.front().tokens;
  r.token_probs = beam.front().probs;
  for (int i = 0; i < m; ++i) {
    r.triples[i].current = r.tokens[i];
    r.triples[i].current_prob = r.token_probs[i];
  }
  r.readout_sweeps = m;
  return r;
}

namespace {

struct Candidate {
  int token;
  double prob;  // under the head that proposed it
};

// A neighbor head predicting BOS/EOS/PAD offers no filler for the slot.
std::vector<std::vector<Candidate>> link_slots(const LookAroundSource& src) {
  if (!src.has_left() || !src.has_right()) {
    throw ConfigError("link_rescore_decode: unsupported without LS = RS = 1");
  }
  const int m = src.length();
  std::vector<std::vector<Candidate>> sets(m);
  for (int i = 0; i < m; ++i) {
    if (i > 0) {
      const auto d = src.right_dist(i - 1);
      const int t = argmax(d);
      if (emittable(t)) sets[i].push_back({t, d[t]});
    }
    const auto cur = src.current_dist(i);
    const int c = best_token(cur);
    sets[i].push_back({c, cur[c]});
    if (i + 1 < m) {
      const auto d = src.left_dist(i + 1);
      const int t = argmax(d);
      if (emittable(t)) sets[i].push_back({t, d[t]});
    }
  }
  return sets;
}

}  // namespace

std::vector<std::vector<int>> link_candidates(const LookAroundSource& src) {
  std::vector<std::vector<int>> out;
  for (const auto& slot : link_slots(src)) {
    std::vector<int> ids;
    for (const auto& c : slot) ids.push_back(c.token);
    out.push_back(std::move(ids));
  }
  return out;
}

DecodeResult link_rescore_from(const LookAroundSource& src, const SequenceScorer& score,
                               int num_samples, std::uint64_t seed) {
  if (num_samples < 1) throw ContractError("link_rescore_decode: num_samples must be >= 1");
  const auto sets = link_slots(src);
  const int m = src.length();
  std::mt19937_64 rng(seed);
  std::map<std::vector<int>, std::pair<double, std::vector<double>>> scored;
  for (int s = 0; s < num_samples; ++s) {
    std::vector<int> seq(m);
    std::vector<double> probs(m);
    for (int i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(0, sets[i].size() - 1);
      const Candidate& c = sets[i][pick(rng)];
      seq[i] = c.token;
      probs[i] = c.prob;
    }
    if (!scored.contains(seq)) scored.emplace(seq, std::make_pair(score(seq), probs));
  }
  DecodeResult r = greedy_from(src);
  r.strategy = Strategy::kLinkRescore;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& [seq, entry] : scored) {
    if (entry.first > best) {
      best = entry.first;
      r.tokens = seq;
      r.token_probs = entry.second;
    }
  }
  r.teacher_score = best;
  r.candidates_scored = static_cast<int>(scored.size());
  return r;
}

std::vector<int> npd_lengths(int predicted, int num_candidates, int max_len) {
  if (num_candidates < 1) throw ContractError("npd_decode: num_candidates must be >= 1");
  predicted = std::clamp(predicted, 1, max_len);
  std::vector<int> out{predicted};
  for (int k = 1; static_cast<int>(out.size()) < num_candidates; ++k) {
    if (predicted + k > max_len && predicted - k < 1) break;
    if (predicted + k <= max_len) out.push_back(predicted + k);
    if (static_cast<int>(out.size()) < num_candidates && predicted - k >= 1) {
      out.push_back(predicted - k);
    }
  }
  return out;
}

// ---- strategies over a model --------------------------------------------------------

namespace {

void check_source(const NatModel& model, std::span<const int> source) {
  if (source.empty()) throw ContractError("decode: empty source");
  if (static_cast<int>(source.size()) > model.config().max_len) {
    throw ContractError("decode: source longer than max_len");
  }
}

const Teacher& require_teacher(const Teacher* teacher, const char* who) {
  if (teacher == nullptr) throw ContractError(std::string(who) + ": teacher required");
  return *teacher;
}

}  // namespace

DecodeResult greedy_decode(const NatModel& model, std::span<const int> source) {
  const auto start = Clock::now();
  check_source(model, source);
  NoGradGuard no_grad;
  DecodeResult r = greedy_from(NatSource(model, model.nat_forward(source)));
  r.decoder_passes = 1;
  r.latency_ms = elapsed_ms(start);
  return r;
}

DecodeResult npd_decode(const NatModel& model, const Teacher* teacher,
                        std::span<const int> source, int num_candidates) {
  const auto start = Clock::now();
  const Teacher& t = require_teacher(teacher, "npd_decode");
  check_source(model, source);
  NoGradGuard no_grad;
  const EncoderOutput enc = model.encode(source);
  const EncoderOutput teacher_enc = t.encoder().encode(source);
  const int max_len = std::min(model.config().max_len, t.config().max_len);
  DecodeResult best;
  best.teacher_score = -std::numeric_limits<double>::infinity();
  int scored = 0;
  for (int m : npd_lengths(model.predicted_length(enc), num_candidates, max_len)) {
    DecodeResult cand = greedy_from(NatSource(model, model.nat_forward(enc, m)));
    cand.teacher_score = t.score_sequence(teacher_enc, cand.tokens);
    ++scored;
    if (cand.teacher_score > best.teacher_score) best = std::move(cand);
  }
  best.strategy = Strategy::kNpd;
  best.candidates_scored = scored;
  best.decoder_passes = scored;
  best.readout_sweeps = scored;
  best.latency_ms = elapsed_ms(start);
  return best;
}

DecodeResult link_rescore_decode(const NatModel& model, const Teacher* teacher,
                                 std::span<const int> source, int num_samples,
                                 std::uint64_t seed) {
  const auto start = Clock::now();
  const Teacher& t = require_teacher(teacher, "link_rescore_decode");
  check_source(model, source);
  if (model.config().left_size != 1 || model.config().right_size != 1) {
    throw ConfigError("link_rescore_decode: unsupported without LS = RS = 1");
  }
  NoGradGuard no_grad;
  const EncoderOutput teacher_enc = t.encoder().encode(source);
  const NatSource src(model, model.nat_forward(source));
  DecodeResult r = link_rescore_from(
      src, [&](std::span<const int> seq) { return t.score_sequence(teacher_enc, seq); },
      num_samples, seed);
  r.decoder_passes = 1;
  r.latency_ms = elapsed_ms(start);
  return r;
}

DecodeResult sequential_decode(const NatModel& model, std::span<const int> source,
                               bool left_to_right, int beam_width) {
  const auto start = Clock::now();
  check_source(model, source);
  NoGradGuard no_grad;
  DecodeResult r =
      sequential_from(NatSource(model, model.nat_forward(source)), left_to_right, beam_width);
  r.decoder_passes = 1;
  r.latency_ms = elapsed_ms(start);
  return r;
}

DecodeResult dynamic_decode(const NatModel& model, std::span<const int> source,
                            double threshold, int max_rounds) {
  const auto start = Clock::now();
  check_source(model, source);
  NoGradGuard no_grad;
  DecodeResult r =
      dynamic_from(NatSource(model, model.nat_forward(source)), threshold, max_rounds);
  r.decoder_passes = 1;
  r.latency_ms = elapsed_ms(start);
  return r;
}

DecodeResult at_beam_decode(const Teacher& teacher, std::span<const int> source,
                            int beam_width) {
  const auto start = Clock::now();
  NoGradGuard no_grad;
  BeamResult b = teacher.beam_decode(source, beam_width, teacher.config().max_len);
  DecodeResult r;
  r.strategy = Strategy::kAtBeam;
  r.tokens = std::move(b.tokens);
  r.token_probs.assign(r.tokens.size(), std::exp(b.score));
  r.teacher_score = b.log_prob;
  r.decoder_passes = b.decoder_passes;
  r.latency_ms = elapsed_ms(start);
  return r;
}

DecodeResult decode(const NatModel* model, const Teacher* teacher,
                    std::span<const int> source, const DecodeOptions& opts) {
  if (opts.strategy == Strategy::kAtBeam) {
    return at_beam_decode(require_teacher(teacher, "at-beam"), source, opts.at_beam);
  }
  if (model == nullptr) throw ContractError("decode: NAT model required");
  switch (opts.strategy) {
    case Strategy::kGreedy: return greedy_decode(*model, source);
    case Strategy::kNpd: return npd_decode(*model, teacher, source, opts.num_candidates);
    case Strategy::kLinkRescore:
      return link_rescore_decode(*model, teacher, source, opts.num_samples, opts.seed);
    case Strategy::kL2R: return sequential_decode(*model, source, true, opts.beam_width);
    case Strategy::kR2L: return sequential_decode(*model, source, false, opts.beam_width);
    case Strategy::kDynamic:
      return dynamic_decode(*model, source, opts.threshold, opts.max_rounds);
    case Strategy::kAtBeam: break;
  }
  throw ContractError("decode: unhandled strategy");
}

}  // namespace lava

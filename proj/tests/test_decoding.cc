#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "helpers.h"
#include "lava/decoding.h"

using namespace lava;
using lava_test::random_ids;
using lava_test::small_config;

namespace {

// Hand-built readout: fixed per-position distributions plus a rule table for
// re-prediction given neighbors.
class FakeSource : public LookAroundSource {
 public:
  FakeSource(int vocab, std::vector<std::vector<double>> current,
             std::vector<std::vector<double>> left, std::vector<std::vector<double>> right)
      : vocab_(vocab), current_(std::move(current)), left_(std::move(left)), right_(std::move(right)) {}

  int length() const override { return static_cast<int>(current_.size()); }
  bool has_left() const override { return !left_.empty(); }
  bool has_right() const override { return !right_.empty(); }
  std::span<const double> left_dist(int i) const override { return left_.at(i); }
  std::span<const double> right_dist(int i) const override { return right_.at(i); }
  std::span<const double> current_dist(int i) const override { return current_.at(i); }
  std::vector<double> current_given(int i, int left_id, int right_id) const override {
    ++calls;
    if (rule) {
      const int t = rule(i, left_id, right_id);
      if (t >= 0) return peaked(t, 0.8);
    }
    return current_.at(i);
  }

  std::vector<double> peaked(int token, double p) const {
    std::vector<double> d(vocab_, (1.0 - p) / (vocab_ - 1));
    d[token] = p;
    return d;
  }

  std::function<int(int, int, int)> rule;
  mutable int calls = 0;

 private:
  int vocab_;
  std::vector<std::vector<double>> current_, left_, right_;
};

std::vector<double> dist_with(int vocab, std::vector<std::pair<int, double>> mass) {
  double used = 0.0;
  for (auto [t, p] : mass) used += p;
  const int rest = vocab - static_cast<int>(mass.size());
  std::vector<double> d(vocab, (1.0 - used) / rest);
  for (auto [t, p] : mass) d[t] = p;
  return d;
}

// cat=4 is=5 not=6 small=7 so=8 cute=9
FakeSource cat_scenario() {
  const int v = 12;
  FakeSource src(v,
                 {dist_with(v, {{4, 0.9}}), dist_with(v, {{5, 0.9}}),
                  dist_with(v, {{6, 0.4}, {8, 0.35}}), dist_with(v, {{7, 0.45}, {9, 0.4}})},
                 {dist_with(v, {{kBos, 0.9}}), dist_with(v, {{4, 0.9}}), dist_with(v, {{5, 0.9}}),
                  dist_with(v, {{8, 0.6}})},
                 {dist_with(v, {{5, 0.9}}), dist_with(v, {{8, 0.6}}), dist_with(v, {{9, 0.5}}),
                  dist_with(v, {{kEos, 0.9}})});
  src.rule = [](int i, int left, int) {
    if (i == 2 && left == 5) return 8;
    if (i == 3 && (left == 6 || left == 8)) return 9;
    return -1;
  };
  return src;
}

int masked_argmax(std::span<const double> d) {
  int best = -1;
  for (int t = kNumSpecials; t < static_cast<int>(d.size()); ++t)
    if (best < 0 || d[t] > d[best]) best = t;
  return best;
}

struct Models {
  NatModel nat{small_config()};
  Teacher teacher{small_config()};
};

const Models& models() {
  static Models m;
  return m;
}

}  // namespace

TEST_SUITE("decoding") {

TEST_CASE("strategy names round trip") {
  for (Strategy s : {Strategy::kGreedy, Strategy::kNpd, Strategy::kLinkRescore, Strategy::kL2R,
                     Strategy::kR2L, Strategy::kDynamic, Strategy::kAtBeam})
    CHECK(parse_strategy(strategy_name(s)) == s);
  CHECK_THROWS_AS(parse_strategy("beam"), ConfigError);
}

TEST_CASE("dynamic refinement turns 'cat is not small' into 'cat is so cute'") {
  const FakeSource src = cat_scenario();
  const DecodeResult g = greedy_from(src);
  CHECK(g.tokens == std::vector<int>{4, 5, 6, 7});
  const DecodeResult r = dynamic_from(src, 0.5, 4);
  CHECK(r.tokens == std::vector<int>{4, 5, 8, 9});
  REQUIRE(r.refinement_trace.size() == 1);
  CHECK(r.refinement_trace[0].round == 1);
  CHECK(r.refinement_trace[0].positions == std::vector<int>{2, 3});
  // Greedy, the round-1 re-prediction, and the re-score of "is" next to "so".
  CHECK(r.readout_sweeps == 3);
}

TEST_CASE("a changed neighbor can push a position into the next round") {
  const int v = 12;
  const auto confident = dist_with(v, {{5, 0.9}});
  FakeSource src(v, {confident, confident, dist_with(v, {{6, 0.3}}), confident}, {}, {});
  src.rule = [](int i, int left, int right) {
    if (i == 2) return 7;                // low-confidence slot flips to 7
    if (i == 1 && right == 7) return 8;  // 5 next to 7 is unlikely
    if (i == 3 && left == 7) return 5;   // 5 after 7 stays plausible
    return -1;
  };
  const DecodeResult r = dynamic_from(src, 0.5, 4);
  REQUIRE(r.refinement_trace.size() == 2);
  CHECK(r.refinement_trace[0].positions == std::vector<int>{2});
  CHECK(r.refinement_trace[1].positions == std::vector<int>{1});
  CHECK(r.tokens == std::vector<int>{5, 8, 7, 5});
  CHECK(r.readout_sweeps == 4);

  const DecodeResult capped = dynamic_from(src, 0.5, 1);
  CHECK(capped.refinement_trace.size() == 1);
  CHECK(capped.tokens == std::vector<int>{5, 5, 7, 5});
}

TEST_CASE("dynamic refinement with threshold zero is greedy") {
  const FakeSource src = cat_scenario();
  const DecodeResult r = dynamic_from(src, 0.0, 4);
  CHECK(r.tokens == greedy_from(src).tokens);
  CHECK(r.refinement_trace.empty());
  CHECK(src.calls == 0);
  CHECK_THROWS(dynamic_from(src, 1.0, 4));
  CHECK_THROWS(dynamic_from(src, 0.5, -1));
}

TEST_CASE("each position is re-predicted at most once") {
  const int v = 10;
  std::vector<std::vector<double>> cur;
  for (int i = 0; i < 6; ++i) cur.push_back(dist_with(v, {{4 + i % 3, 0.2}}));
  FakeSource src(v, cur, cur, cur);
  // Re-predictions stay below threshold, so nothing would stop a second try.
  src.rule = [](int, int, int) { return -1; };
  const DecodeResult r = dynamic_from(src, 0.5, 4);
  std::set<int> seen;
  for (const auto& round : r.refinement_trace)
    for (int i : round.positions) CHECK(seen.insert(i).second);
  CHECK(r.refinement_trace.size() == 1);
  CHECK(seen.size() == 6);
}

TEST_CASE("greedy records neighbor triples and skips special tokens") {
  const FakeSource src = cat_scenario();
  const DecodeResult g = greedy_from(src);
  CHECK(g.triples[0].left == kBos);
  CHECK(g.triples[3].right == kEos);
  CHECK(g.triples[1].left == 4);
  CHECK(g.token_probs[0] == doctest::Approx(0.9));
  for (double p : g.token_probs) CHECK((p > 0.0 && p <= 1.0));

  const int v = 8;
  FakeSource pad_heavy(v, {dist_with(v, {{kPad, 0.7}, {6, 0.2}})}, {}, {});
  CHECK(greedy_from(pad_heavy).tokens == std::vector<int>{6});
}

TEST_CASE("link candidates come from the neighbors' predictions") {
  const FakeSource src = cat_scenario();
  const auto sets = link_candidates(src);
  CHECK(sets[0] == std::vector<int>{4, 4});
  CHECK(sets[2] == std::vector<int>{8, 6, 8});
  CHECK(sets[3] == std::vector<int>{9, 7});

  std::vector<std::vector<int>> seen;
  auto scorer = [&](std::span<const int> seq) {
    seen.emplace_back(seq.begin(), seq.end());
    return seq[2] == 8 && seq[3] == 9 ? 0.0 : -1.0;
  };
  const DecodeResult r = link_rescore_from(src, scorer, 20, 7);
  CHECK(r.tokens == std::vector<int>{4, 5, 8, 9});
  for (int i = 0; i < 4; ++i)
    CHECK(std::count(sets[i].begin(), sets[i].end(), r.tokens[i]) > 0);
  CHECK(r.candidates_scored == static_cast<int>(seen.size()));
  CHECK(r.teacher_score == 0.0);
}

TEST_CASE("link rescoring with agreeing candidates is greedy") {
  const int v = 8;
  std::vector<std::vector<double>> cur, left, right;
  const std::vector<int> y{4, 5, 6};
  for (int i = 0; i < 3; ++i) {
    cur.push_back(dist_with(v, {{y[i], 0.9}}));
    left.push_back(dist_with(v, {{i == 0 ? kBos : y[i - 1], 0.9}}));
    right.push_back(dist_with(v, {{i == 2 ? kEos : y[i + 1], 0.9}}));
  }
  const FakeSource src(v, cur, left, right);
  const DecodeResult r = link_rescore_from(src, [](std::span<const int>) { return 0.0; }, 5, 1);
  CHECK(r.tokens == y);
  CHECK(r.candidates_scored == 1);
}

TEST_CASE("link rescoring needs both neighbor heads") {
  const int v = 8;
  const FakeSource src(v, {dist_with(v, {{4, 0.9}})}, {}, {});
  CHECK_THROWS_AS(link_candidates(src), ConfigError);
}

TEST_CASE("sequential decoding walks one position at a time") {
  const FakeSource src = cat_scenario();
  const DecodeResult l2r = sequential_from(src, true, 1);
  CHECK(l2r.tokens.size() == 4);
  CHECK(l2r.readout_sweeps == 4);
  CHECK(l2r.tokens == std::vector<int>{4, 5, 8, 9});
  const DecodeResult wide = sequential_from(src, true, 4);
  CHECK(wide.tokens.size() == 4);
  CHECK(sequential_from(src, false, 2).tokens.size() == 4);
  CHECK_THROWS(sequential_from(src, true, 0));
}

TEST_CASE("NPD length offsets") {
  CHECK(npd_lengths(10, 5, 64) == std::vector<int>{10, 11, 9, 12, 8});
  CHECK(npd_lengths(1, 4, 64) == std::vector<int>{1, 2, 3, 4});
  CHECK(npd_lengths(5, 1, 64) == std::vector<int>{5});
  CHECK(npd_lengths(3, 10, 4) == std::vector<int>{3, 4, 2, 1});
}

TEST_CASE("model-level greedy takes the per-position argmax") {
  const auto& [nat, teacher] = models();
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const auto src = random_ids(rng, 4 + trial, 16);
    const DecodeResult r = greedy_decode(nat, src);
    const NatPass pass = nat.nat_forward(src);
    REQUIRE(static_cast<int>(r.tokens.size()) == pass.m);
    for (int i = 0; i < pass.m; ++i) CHECK(r.tokens[i] == masked_argmax(pass.current_dist[i]));
    CHECK(r.decoder_passes == 1);
    CHECK(dynamic_decode(nat, src, 0.0, 4).tokens == r.tokens);
  }
}

TEST_CASE("NPD with one candidate is greedy and the winner has the best score") {
  const auto& [nat, teacher] = models();
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 4; ++trial) {
    const auto src = random_ids(rng, 5, 16);
    CHECK(npd_decode(nat, &teacher, src, 1).tokens == greedy_decode(nat, src).tokens);
    const DecodeResult r = npd_decode(nat, &teacher, src, 5);
    CHECK(r.candidates_scored == 5);
    const auto enc = nat.encode(src);
    for (int m : npd_lengths(nat.predicted_length(enc), 5, 24)) {
      const DecodeResult cand = greedy_from(NatSource(nat, nat.nat_forward(enc, m)));
      CHECK(r.teacher_score >= teacher.score_sequence(src, cand.tokens) - 1e-9);
    }
    CHECK(std::abs(r.teacher_score - teacher.score_sequence(src, r.tokens)) <= 1e-9);
  }
  CHECK_THROWS(npd_decode(nat, nullptr, std::vector<int>{4, 5}, 3));
}

TEST_CASE("model-level link rescoring is seeded and stays inside its candidate sets") {
  const auto& [nat, teacher] = models();
  const std::vector<int> src{4, 8, 6, 11, 9};
  const DecodeResult a = link_rescore_decode(nat, &teacher, src, 1, 3);
  const DecodeResult b = link_rescore_decode(nat, &teacher, src, 1, 3);
  CHECK(a.tokens == b.tokens);
  const DecodeResult r = link_rescore_decode(nat, &teacher, src, 10, 5);
  const auto sets = link_candidates(NatSource(nat, nat.nat_forward(src)));
  for (std::size_t i = 0; i < r.tokens.size(); ++i)
    CHECK(std::count(sets[i].begin(), sets[i].end(), r.tokens[i]) > 0);
  CHECK(std::abs(r.teacher_score - teacher.score_sequence(src, r.tokens)) <= 1e-9);

  ModelConfig no_la = small_config();
  no_la.left_size = 0;
  const NatModel narrow(no_la);
  CHECK_THROWS_AS(link_rescore_decode(narrow, &teacher, src, 3, 1), ConfigError);
}

TEST_CASE("model-level sequential and dynamic decoding contracts") {
  const auto& [nat, teacher] = models();
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto src = random_ids(rng, 3 + trial % 10, 16);
    const int m = nat.nat_forward(src).m;
    const DecodeResult l2r = sequential_decode(nat, src, true, 1);
    CHECK(static_cast<int>(l2r.tokens.size()) == m);
    CHECK(l2r.readout_sweeps == m);
    CHECK(sequential_decode(nat, src, true, 1).tokens == l2r.tokens);
    CHECK(static_cast<int>(sequential_decode(nat, src, false, 3).tokens.size()) == m);

    const DecodeResult dyn = dynamic_decode(nat, src, 0.5, 4);
    CHECK(static_cast<int>(dyn.tokens.size()) == m);
    CHECK(dyn.refinement_trace.size() <= 4);
    CHECK(dyn.readout_sweeps <= 5);
    std::set<int> seen;
    for (const auto& round : dyn.refinement_trace)
      for (int i : round.positions) CHECK(seen.insert(i).second);
    for (int t : dyn.tokens) CHECK(t >= kNumSpecials);
  }
}

TEST_CASE("decode dispatches on the strategy") {
  const auto& [nat, teacher] = models();
  const std::vector<int> src{4, 5, 6, 7};
  DecodeOptions opts;
  opts.strategy = Strategy::kAtBeam;
  const DecodeResult at = decode(nullptr, &teacher, src, opts);
  CHECK(at.strategy == Strategy::kAtBeam);
  CHECK(at.decoder_passes >= static_cast<long>(at.tokens.size()));
  opts.strategy = Strategy::kDynamic;
  CHECK(decode(&nat, nullptr, src, opts).strategy == Strategy::kDynamic);
  opts.strategy = Strategy::kNpd;
  CHECK_THROWS(decode(&nat, nullptr, src, opts));
}

}  // TEST_SUITE

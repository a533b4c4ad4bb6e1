#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "helpers.h"
#include "lava/training.h"

using namespace lava;
using lava_test::random_ids;
using lava_test::small_config;

namespace {

double distance(const Tensor& a, std::span<const double> row) {
  double s = 0.0;
  for (std::size_t c = 0; c < row.size(); ++c) s += (a.at(c) - row[c]) * (a.at(c) - row[c]);
  return std::sqrt(s);
}

std::span<const double> table_row(const Tensor& t, std::size_t r) {
  return t.data().subspan(r * t.cols(), t.cols());
}

std::vector<double> grad_of(const Tensor& t) {
  const auto g = t.grad();
  return g.empty() ? std::vector<double>(t.numel(), 0.0) : std::vector<double>(g.begin(), g.end());
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("peaked softmax embedding limits") {
  std::mt19937_64 rng(1);
  const Tensor table = init::normal({6, 4}, 1.0, rng);
  const Tensor logits = Tensor::from({6}, {0.1, 1.4, -0.3, 0.9, 0.0, 0.2});

  const Tensor flat = peaked_softmax_embed(logits, 1e-12, table);
  for (std::size_t c = 0; c < 4; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < 6; ++r) mean += table.at(r, c);
    CHECK(flat.at(c) == doctest::Approx(mean / 6.0).epsilon(1e-9));
  }

  // Margin 0.5 between the top two logits.
  CHECK(distance(peaked_softmax_embed(logits, 100.0, table), table_row(table, 1)) <= 1e-6);

  const Tensor tied = peaked_softmax_embed(Tensor::from({6}, {0, 2, 0, 2, 0, 0}), 100.0, table);
  for (std::size_t c = 0; c < 4; ++c)
    CHECK(tied.at(c) == doctest::Approx((table.at(1, c) + table.at(3, c)) / 2.0).epsilon(1e-9));

  double previous = 1e300;
  for (double alpha : {0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0}) {
    const double d = distance(peaked_softmax_embed(logits, alpha, table), table_row(table, 1));
    CHECK(d <= previous + 1e-12);
    previous = d;
  }
  CHECK_THROWS(peaked_softmax_embed(logits, 0.0, table));
}

TEST_CASE("peaked softmax embedding is differentiable") {
  std::mt19937_64 rng(2);
  Tensor logits = init::normal({2, 5}, 1.0, rng);
  logits.set_requires_grad(true);
  const Tensor table = init::normal({5, 3}, 1.0, rng);
  const Tensor r = init::normal({2, 3}, 1.0, rng);
  CHECK(grad_check([&] { return sum(mul(peaked_softmax_embed(logits, 4.0, table), r)); }, logits) <=
        1e-4);
}

TEST_CASE("cross entropy over three heads") {
  const std::vector<int> targets{5};
  const Tensor uniform = Tensor::zeros({1, 4});
  CHECK(ce_loss(uniform, uniform, uniform, std::vector<int>{3}, 0.0).item() ==
        doctest::Approx(3.0 * std::log(4.0)).epsilon(1e-14));

  std::vector<double> cur(8, -1e3), left(8, -1e3), right(8, -1e3);
  cur[5] = 1e3;
  left[kBos] = 1e3;
  right[kEos] = 1e3;
  CHECK(ce_loss(Tensor::from({1, 8}, cur), Tensor::from({1, 8}, left),
                Tensor::from({1, 8}, right), targets, 0.0)
            .item() == doctest::Approx(0.0));
  CHECK_THROWS(ce_loss(uniform, uniform, uniform, std::vector<int>{3, 3}, 0.0));
}

TEST_CASE("neighbor targets shift with BOS and EOS at the edges") {
  const std::vector<int> y{7, 8, 9};
  CHECK(left_targets(y) == std::vector<int>{kBos, 7, 8});
  CHECK(right_targets(y) == std::vector<int>{8, 9, kEos});
}

TEST_CASE("bag of words loss") {
  CHECK(bow_loss_from_logits(Tensor::zeros({1, 6}), std::vector<int>{4}).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
  const Tensor saturated = Tensor::full({2, 6}, 40.0);
  CHECK(bow_loss_from_logits(saturated, std::vector<int>{4, 5}).item() < 1e-15);
}

TEST_CASE("bag of words loss ignores target order") {
  std::mt19937_64 rng(3);
  const Tensor fused = init::normal({5, 6}, 1.0, rng);
  const Tensor w = init::normal({6, 10}, 1.0, rng);
  const Tensor b = init::normal({10}, 1.0, rng);
  std::vector<int> y{4, 7, 9, 4, 5};
  const double base = bow_loss(fused, w, b, y).item();
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(y.begin(), y.end(), rng);
    CHECK(bow_loss(fused, w, b, y).item() == doctest::Approx(base).epsilon(1e-13));
  }
}

TEST_CASE("combined loss is linear in lambda") {
  const Tensor ce = Tensor::scalar(1.5), bow = Tensor::scalar(0.25);
  CHECK(combined_loss(ce, bow, 0.0).item() == 1.5);
  CHECK(combined_loss(ce, bow, 1.0).item() == 1.75);

  std::mt19937_64 rng(4);
  Tensor logits = init::normal({3, 6}, 1.0, rng);
  logits.set_requires_grad(true);
  const std::vector<int> y{4, 5, 4};
  const double lambda = 0.3;
  backward(ce_loss(logits, Tensor{}, Tensor{}, y, 0.1));
  const auto g_ce = grad_of(logits);
  logits.zero_grad();
  backward(bow_loss_from_logits(logits, y));
  const auto g_bow = grad_of(logits);
  logits.zero_grad();
  backward(combined_loss(ce_loss(logits, Tensor{}, Tensor{}, y, 0.1),
                         bow_loss_from_logits(logits, y), lambda));
  const auto g = grad_of(logits);
  for (std::size_t i = 0; i < g.size(); ++i)
    CHECK(g[i] == doctest::Approx(g_ce[i] + lambda * g_bow[i]).epsilon(1e-12));
}

TEST_CASE("lambda schedules") {
  CHECK(lambda_schedule(LambdaSchedule::constant(0.1), 0) == 0.1);
  CHECK(lambda_schedule(LambdaSchedule::constant(0.1), 17) == 0.1);
  const auto lin = LambdaSchedule::linear(0.5, 10);
  CHECK(lambda_schedule(lin, 0) == 0.0);
  CHECK(lambda_schedule(lin, 5) == doctest::Approx(0.25));
  CHECK(lambda_schedule(lin, 20) == 0.5);
  for (int t = 0; t < 30; ++t) CHECK(lambda_schedule(lin, t) >= 0.0);

  const auto parsed = LambdaSchedule::parse("linear:0.5:10");
  CHECK(parsed.kind == LambdaSchedule::Kind::kLinear);
  CHECK(parsed.value == 0.5);
  CHECK(parsed.horizon == 10.0);
  CHECK(LambdaSchedule::parse(parsed.to_string()).value == 0.5);
  CHECK(LambdaSchedule::parse("constant:0.2").kind == LambdaSchedule::Kind::kConstant);
  CHECK_THROWS_AS(LambdaSchedule::parse("cosine:1"), ConfigError);
}

TEST_CASE("train config invariants") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.alpha = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.smoothing = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(parse_sampling("dss") == SamplingMode::kDifferentiable);
  CHECK_THROWS_AS(parse_sampling("greedy"), ConfigError);
}

TEST_CASE("DSS lets the current-token loss reach the neighbor heads") {
  NatModel model(small_config());
  const std::vector<int> src{4, 5, 6, 7}, tgt{8, 9, 10, 11};
  const auto enc = model.encode(src);
  const Tensor z = model.decoder_forward(copy_source_input(enc.H, 4, 4), enc).final_z;
  auto current_only = [&](ReadoutMode mode) {
    model.params().get("la.left.w").zero_grad();
    ReadoutRequest req;
    req.mode = mode;
    req.targets = tgt;
    backward(cross_entropy(model.look_around_readout(z, req).current_logits, tgt));
    const auto g = grad_of(model.params().get("la.left.w"));
    double norm = 0.0;
    for (double v : g) norm += v * v;
    return norm;
  };
  CHECK(current_only(ReadoutMode::kDifferentiable) > 0.0);
  CHECK(current_only(ReadoutMode::kTeacherForced) == 0.0);

  NatModel fresh(small_config());
  NatStepOptions opts;
  backward(nat_loss(fresh, {src, tgt}, opts).total);
  for (const char* name : {"la.left.w", "la.right.w", "length.w"}) {
    double norm = 0.0;
    for (double v : grad_of(fresh.params().get(name))) norm += v * v;
    CHECK(norm > 0.0);
  }
}

TEST_CASE("full student loss passes the gradient check on a two-token pair") {
  ModelConfig cfg = small_config(8);
  cfg.d_model = 8;
  cfg.d_ff = 12;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.max_len = 6;
  cfg.rel_k = 2;
  NatModel model(cfg);
  NatStepOptions opts;
  opts.alpha = 2.0;
  opts.lambda = 0.5;
  auto f = [&] { return nat_loss(model, {{4, 5}, {6, 7}}, opts).total; };
  for (const char* name : {"decoder.vocab", "la.current.w", "la.gate_left.w", "la.sentinel_right",
                           "decoder.layer0.fuse.w", "encoder.embed.token", "length.w"}) {
    INFO(name);
    CHECK(grad_check(f, model.params().get(name)) <= 1e-4);
  }
}

TEST_CASE("student training smoke run lowers the loss") {
  ModelConfig cfg;
  cfg.vocab_size = 32;
  cfg.d_model = 64;
  cfg.max_len = 16;
  NatModel model(cfg);
  SyntheticSpec spec;
  spec.n_pairs = 800;
  spec.min_len = 5;
  spec.max_len = 10;
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.warmup_steps = 50;
  const TrainLog log = train_nat(model, gen_synthetic(spec), {}, tc);
  CHECK(log.steps == 200);
  REQUIRE(log.epochs.size() == 2);
  CHECK(log.epochs[1].loss < log.epochs[0].loss);
}

TEST_CASE("student training is deterministic and logs JSON lines") {
  auto run = [] {
    NatModel model(small_config());
    SyntheticSpec spec;
    spec.vocab_size = 16;
    spec.n_pairs = 60;
    spec.min_len = 3;
    spec.max_len = 8;
    spec.task = Task::kMultimodal;
    const auto pairs = gen_synthetic(spec);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.sampling = SamplingMode::kScheduled;
    std::ostringstream out;
    train_nat(model, pairs, {pairs.begin(), pairs.begin() + 10}, tc, nullptr, &out);
    return out.str();
  };
  const std::string a = run();
  CHECK(a == run());
  std::istringstream lines(a);
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    ++count;
    for (const char* key : {"\"loss\"", "\"ce\"", "\"bow\"", "\"length_acc\"", "\"token_acc\"",
                            "\"repeat_rate\""})
      CHECK(line.find(key) != std::string::npos);
  }
  CHECK(count == 2);
}

TEST_CASE("a NaN loss aborts with diagnostics") {
  NatModel model(small_config());
  model.params().get("la.current.b").mutable_data()[4] = std::nan("");
  SyntheticSpec spec;
  spec.vocab_size = 16;
  spec.n_pairs = 8;
  TrainConfig tc;
  tc.epochs = 1;
  try {
    train_nat(model, gen_synthetic(spec), {}, tc);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("KD and encoder initialisation require a teacher") {
  NatModel model(small_config());
  SyntheticSpec spec;
  spec.vocab_size = 16;
  spec.n_pairs = 8;
  TrainConfig tc;
  tc.epochs = 1;
  tc.use_kd = true;
  CHECK_THROWS(train_nat(model, gen_synthetic(spec), {}, tc));
}

TEST_CASE("snapshot averaging") {
  NamedTensors a{{"x", Tensor::from({2}, {1, 2})}}, b{{"x", Tensor::from({2}, {3, 6})}};
  CHECK(average_snapshots({a, b}).at("x").to_vector() == std::vector<double>{2, 4});
  CHECK_THROWS(average_snapshots({}));
}

}  // TEST_SUITE

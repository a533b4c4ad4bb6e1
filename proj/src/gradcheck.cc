#include "lava/gradcheck.h"

#include <random>

#include "lava/encoder.h"
#include "lava/nat.h"
#include "lava/teacher.h"
#include "lava/training.h"

namespace lava {

namespace {

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : rng_(seed) {}

  Tensor leaf(Shape shape, double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = dist(rng_);
    return Tensor::from(std::move(shape), std::move(v), true);
  }

  // Values bounded away from zero, for ops with a kink there.
  Tensor leaf_off_zero(Shape shape) {
    Tensor t = leaf(std::move(shape), 0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (double& x : t.mutable_data()) x = sign(rng_) ? x : -x;
    return t;
  }

  // Σ out ⊙ R with a fixed random R, so every output element matters.
  Tensor project(const Tensor& out) {
    auto it = weights_.find(out.shape());
    if (it == weights_.end()) {
      Tensor r = leaf(out.shape());
      r.set_requires_grad(false);
      it = weights_.emplace(out.shape(), r).first;
    }
    return sum(mul(out, it->second));
  }

  void check(const std::string& name, const std::function<Tensor()>& f,
             std::vector<std::pair<std::string, Tensor>> inputs) {
    for (auto& [label, x] : inputs) {
      entries_.push_back({name + "." + label, grad_check(f, x)});
    }
  }

  std::mt19937_64& rng() { return rng_; }
  std::vector<GradCheckEntry> take() { return std::move(entries_); }

 private:
  std::mt19937_64 rng_;
  std::map<Shape, Tensor> weights_;
  std::vector<GradCheckEntry> entries_;
};

}  // namespace

std::vector<GradCheckEntry> gradient_suite(std::uint64_t seed) {
  Suite s(seed);
  {
    Tensor a = s.leaf({3, 4}), b = s.leaf({4, 5}), c = s.leaf({5, 4});
    s.check("matmul", [&] { return s.project(matmul(a, b)); }, {{"a", a}, {"b", b}});
    s.check("matmul_nt", [&] { return s.project(matmul_nt(a, c)); }, {{"a", a}, {"b", c}});
    s.check("transpose", [&] { return s.project(transpose(a)); }, {{"x", a}});
  }
  {
    Tensor a = s.leaf({3, 4}), b = s.leaf({3, 4}), row = s.leaf({4});
    s.check("add", [&] { return s.project(add(a, b)); }, {{"a", a}, {"b", b}});
    s.check("sub", [&] { return s.project(sub(a, b)); }, {{"a", a}, {"b", b}});
    s.check("mul", [&] { return s.project(mul(a, b)); }, {{"a", a}, {"b", b}});
    s.check("scale", [&] { return s.project(scale(a, -1.7)); }, {{"x", a}});
    s.check("add_row", [&] { return s.project(add_row(a, row)); }, {{"x", a}, {"b", row}});
    s.check("sigmoid", [&] { return s.project(sigmoid(a)); }, {{"x", a}});
    s.check("log_sigmoid", [&] { return s.project(log_sigmoid(scale(a, 5.0))); }, {{"x", a}});
    s.check("square", [&] { return s.project(square(a)); }, {{"x", a}});
    s.check("softmax_rows", [&] { return s.project(softmax(a, 1)); }, {{"x", a}});
    s.check("softmax_cols", [&] { return s.project(softmax(a, 0)); }, {{"x", a}});
    s.check("log_softmax", [&] { return s.project(log_softmax(a)); }, {{"x", a}});
    s.check("reshape", [&] { return s.project(reshape(a, {2, 6})); }, {{"x", a}});
    s.check("concat_cols", [&] { return s.project(concat_cols({a, b})); }, {{"a", a}, {"b", b}});
    s.check("concat_rows", [&] { return s.project(concat_rows({a, b})); }, {{"a", a}, {"b", b}});
    s.check("slice_cols", [&] { return s.project(slice_cols(a, 1, 2)); }, {{"x", a}});
    s.check("slice_rows", [&] { return s.project(slice_rows(a, 1, 2)); }, {{"x", a}});
    s.check("sum", [&] { return scale(sum(square(a)), 0.5); }, {{"x", a}});
    s.check("sum_rows", [&] { return s.project(sum_rows(a)); }, {{"x", a}});
    const std::vector<std::uint8_t> mask{1, 0, 1};
    s.check("max_rows", [&] { return s.project(max_rows(a, mask)); }, {{"x", a}});
    const std::vector<int> ids{2, 0, 2, 1};
    s.check("gather_rows", [&] { return s.project(gather_rows(a, ids)); }, {{"table", a}});
    const std::vector<int> flat{0, 5, 5, 11};
    s.check("gather_elems", [&] { return s.project(gather_elems(a, flat)); }, {{"x", a}});
  }
  {
    Tensor a = s.leaf_off_zero({3, 4});
    s.check("relu", [&] { return s.project(relu(a)); }, {{"x", a}});
  }
  {
    Tensor x = s.leaf({3, 4});
    const std::vector<std::uint8_t> allow{1, 1, 0, 1, 0, 1, 1, 0, 1, 0, 0, 0};
    s.check("masked_softmax", [&] { return s.project(masked_softmax(x, allow)); }, {{"x", x}});
    Tensor gain = s.leaf({4}, 0.5, 1.5), bias = s.leaf({4});
    s.check("layer_norm", [&] { return s.project(layer_norm(x, gain, bias)); },
            {{"x", x}, {"gain", gain}, {"bias", bias}});
    Tensor qr = s.leaf({3, 5});
    s.check("relative_scores", [&] { return s.project(relative_scores(qr, 4, 2)); }, {{"qr", qr}});
    const std::vector<int> targets{1, 3, 0};
    const std::vector<double> w{1.0, 0.5, 0.0};
    s.check("cross_entropy", [&] { return cross_entropy(x, targets, 0.1, w); }, {{"logits", x}});
    s.check("dropout", [&] {
      std::mt19937_64 fixed(11);
      return s.project(dropout(x, 0.3, fixed));
    }, {{"x", x}});
  }
  {
    Tensor z = s.leaf({3, 4}), table = s.leaf({6, 4}), logits = s.leaf({3, 6});
    s.check("vocabulary_attention", [&] { return s.project(vocabulary_attention(z, table)); },
            {{"z", z}, {"table", table}});
    s.check("peaked_softmax_embed", [&] {
      return s.project(peaked_softmax_embed(logits, 3.0, table));
    }, {{"logits", logits}, {"table", table}});
    Tensor fused = s.leaf({3, 4}), w = s.leaf({4, 6}), b = s.leaf({6});
    const std::vector<int> targets{4, 5, 4};
    s.check("bow_loss", [&] { return bow_loss(fused, w, b, targets); },
            {{"fused", fused}, {"w", w}, {"b", b}});
    Tensor cur = s.leaf({3, 6}), left = s.leaf({3, 6}), right = s.leaf({3, 6});
    s.check("ce_loss", [&] { return ce_loss(cur, left, right, targets, 0.1); },
            {{"current", cur}, {"left", left}, {"right", right}});
  }

  ModelConfig tiny;
  tiny.vocab_size = 8;
  tiny.d_model = 8;
  tiny.heads = 2;
  tiny.d_ff = 12;
  tiny.enc_layers = 1;
  tiny.dec_layers = 1;
  tiny.max_len = 6;
  tiny.rel_k = 2;
  tiny.dropout = 0.0;
  {
    ParamStore store;
    const auto block = TransformerBlockParams::create(store, "block", tiny, true, s.rng());
    Tensor x = s.leaf({3, 8}), memory = s.leaf({2, 8});
    const std::vector<std::uint8_t> mask{1, 1, 1}, memory_mask{1, 1};
    BlockContext ctx;
    ctx.heads = tiny.heads;
    ctx.rel_k = tiny.rel_k;
    ctx.causal = true;
    ctx.memory = &memory;
    ctx.memory_mask = &memory_mask;
    auto f = [&] { return s.project(self_attention_block(x, block, mask, ctx)); };
    std::vector<std::pair<std::string, Tensor>> inputs{{"x", x}, {"memory", memory}};
    for (const auto& name : store.names()) inputs.emplace_back(name, store.get(name));
    s.check("transformer_block", f, inputs);
  }
  {
    NatModel model(tiny);
    const SentencePair pair{{4, 5}, {6, 7}};
    NatStepOptions opts;
    opts.mode = ReadoutMode::kDifferentiable;
    opts.alpha = 2.0;
    opts.lambda = 0.5;
    opts.smoothing = 0.1;
    auto f = [&] { return nat_loss(model, pair, opts).total; };
    std::vector<std::pair<std::string, Tensor>> inputs;
    for (const auto& name : model.params().names()) inputs.emplace_back(name, model.params().get(name));
    s.check("lava_loss", f, inputs);
  }
  {
    Teacher teacher(tiny);
    const SentencePair pair{{4, 5}, {6, 7}};
    auto f = [&] { return teacher.loss(pair, 0.1); };
    std::vector<std::pair<std::string, Tensor>> inputs;
    for (const auto& name : teacher.params().names()) inputs.emplace_back(name, teacher.params().get(name));
    s.check("teacher_loss", f, inputs);
  }
  return s.take();
}

}  // namespace lava

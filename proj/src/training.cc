#include "lava/training.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lava/metrics.h"
#include "lava/optim.h"

namespace lava {

// ---- schedules ------------------------------------------------------------------

LambdaSchedule LambdaSchedule::constant(double value) {
  return {Kind::kConstant, value, 0.0};
}

LambdaSchedule LambdaSchedule::linear(double max_value, double horizon) {
  return {Kind::kLinear, max_value, horizon};
}

LambdaSchedule LambdaSchedule::parse(std::string_view text) {
  std::vector<std::string> parts;
  std::stringstream ss{std::string(text)};
  for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
  try {
    if (parts.size() == 2 && parts[0] == "constant") return constant(std::stod(parts[1]));
    if (parts.size() == 3 && parts[0] == "linear") {
      return linear(std::stod(parts[1]), std::stod(parts[2]));
    }
  } catch (const std::logic_error&) {
  }
  throw ConfigError("bad lambda schedule '" + std::string(text) +
                    "' (expected constant:V or linear:MAX:EPOCHS)");
}

std::string LambdaSchedule::to_string() const {
  std::ostringstream os;
  os.precision(17);
  if (kind == Kind::kConstant) {
    os << "constant:" << value;
  } else {
    os << "linear:" << value << ":" << horizon;
  }
  return os.str();
}

double lambda_schedule(const LambdaSchedule& spec, double epoch) {
  if (epoch < 0) throw ContractError("lambda_schedule: epoch must be >= 0");
  if (spec.kind == LambdaSchedule::Kind::kConstant) return spec.value;
  if (spec.horizon <= 0) return spec.value;
  return spec.value * std::min(1.0, epoch / spec.horizon);
}

SamplingMode parse_sampling(std::string_view name) {
  if (name == "tf") return SamplingMode::kTeacherForced;
  if (name == "ss") return SamplingMode::kScheduled;
  if (name == "dss") return SamplingMode::kDifferentiable;
  throw ConfigError("unknown sampling mode '" + std::string(name) + "' (tf, ss, dss)");
}

std::string_view sampling_name(SamplingMode mode) {
  switch (mode) {
    case SamplingMode::kTeacherForced: return "tf";
    case SamplingMode::kScheduled: return "ss";
    case SamplingMode::kDifferentiable: return "dss";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (!(alpha > 0)) throw ConfigError("alpha must be > 0");
  if (!(smoothing >= 0 && smoothing < 1)) throw ConfigError("label smoothing must be in [0, 1)");
  if (lambda.value < 0) throw ConfigError("lambda must be >= 0");
  if (ss_final_prob < 0 || ss_final_prob > 1) throw ConfigError("ss_final_prob must be in [0, 1]");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (peak_lr <= 0) throw ConfigError("learning rate must be > 0");
  if (kd_beam < 1) throw ConfigError("kd_beam must be >= 1");
  if (average_best < 1) throw ConfigError("average_best must be >= 1");
}

// ---- losses ---------------------------------------------------------------------

std::vector<int> left_targets(std::span<const int> targets) {
  std::vector<int> out(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) out[i] = i == 0 ? kBos : targets[i - 1];
  return out;
}

std::vector<int> right_targets(std::span<const int> targets) {
  std::vector<int> out(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    out[i] = i + 1 == targets.size() ? kEos : targets[i + 1];
  }
  return out;
}

namespace {

std::vector<double> pad_weights(std::span<const int> targets) {
  std::vector<double> w(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) w[i] = targets[i] == kPad ? 0.0 : 1.0;
  return w;
}

void check_rows(const Tensor& logits, std::span<const int> targets, const char* what) {
  if (logits.ndim() != 2 || logits.rows() != targets.size()) {
    throw DimensionError(std::string("ce_loss: ") + what + " has " +
                         std::to_string(logits.ndim() == 2 ? logits.rows() : 0) +
                         " rows for " + std::to_string(targets.size()) + " targets");
  }
}

}  // namespace

Tensor ce_loss(const Tensor& current_logits, const Tensor& left_logits,
               const Tensor& right_logits, std::span<const int> targets,
               double smoothing) {
  check_rows(current_logits, targets, "current logits");
  const auto weights = pad_weights(targets);
  Tensor loss = cross_entropy(current_logits, targets, smoothing, weights);
  if (left_logits.defined()) {
    check_rows(left_logits, targets, "left logits");
    loss = add(loss, cross_entropy(left_logits, left_targets(targets), 0.0, weights));
  }
  if (right_logits.defined()) {
    check_rows(right_logits, targets, "right logits");
    loss = add(loss, cross_entropy(right_logits, right_targets(targets), 0.0, weights));
  }
  return loss;
}

Tensor bow_loss_from_logits(const Tensor& current_logits, std::span<const int> targets) {
  if (current_logits.rows() != targets.size()) {
    throw DimensionError("bow_loss: logits rows vs target length mismatch");
  }
  std::vector<int> rows;
  std::set<int> words;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == kPad) continue;
    rows.push_back(static_cast<int>(i));
    words.insert(targets[i]);
  }
  if (words.empty()) return Tensor::scalar(0.0);
  const Tensor kept = rows.size() == targets.size() ? current_logits
                                                    : gather_rows(current_logits, rows);
  const Tensor log_p = log_sigmoid(sum_rows(kept));
  const std::vector<int> ids(words.begin(), words.end());
  return scale(sum(gather_elems(log_p, ids)), -1.0);
}

Tensor bow_loss(const Tensor& fused, const Tensor& w, const Tensor& b,
                std::span<const int> targets) {
  return bow_loss_from_logits(add_row(matmul(fused, w), b), targets);
}

Tensor combined_loss(const Tensor& ce, const Tensor& bow, double lambda) {
  if (lambda < 0) throw ContractError("combined_loss: lambda must be >= 0");
  return add(ce, scale(bow, lambda));
}

// ---- NAT step ---------------------------------------------------------------------

namespace {

void check_pair(const SentencePair& pair, const ModelConfig& cfg) {
  if (pair.source.empty() || pair.target.empty()) {
    throw ContractError("training pair with empty source or target");
  }
  if (static_cast<int>(pair.source.size()) > cfg.max_len ||
      static_cast<int>(pair.target.size()) > cfg.max_len) {
    throw ContractError("training pair longer than max_len " + std::to_string(cfg.max_len));
  }
}

}  // namespace

NatLossParts nat_loss(const NatModel& model, const SentencePair& pair,
                      const NatStepOptions& opts) {
  const ModelConfig& cfg = model.config();
  check_pair(pair, cfg);
  NatLossParts parts;
  parts.tokens = static_cast<int>(pair.target.size());

  const EncoderOutput enc = model.encode(pair.source, opts.dropout_rng);
  const int m = parts.tokens;
  const int cls = length_class(m - enc.n);
  parts.length = cross_entropy(length_logits(enc, model.length_params()),
                               std::span<const int>(&cls, 1));

  const DecoderTrace trace =
      model.decoder_forward(copy_source_input(enc.H, enc.n, m), enc, opts.dropout_rng);
  ReadoutRequest req;
  req.mode = opts.mode;
  req.left_size = cfg.left_size;
  req.right_size = cfg.right_size;
  req.targets = pair.target;
  req.ground_truth_prob = opts.ground_truth_prob;
  req.rng = opts.sampling_rng;
  req.alpha = opts.alpha;
  const ReadoutOutput ro = model.look_around_readout(trace.final_z, req);

  parts.ce = ce_loss(ro.current_logits, ro.left_logits, ro.right_logits, pair.target,
                     opts.smoothing);
  parts.total = add(parts.ce, parts.length);
  if (opts.use_bow) {
    parts.bow = bow_loss_from_logits(ro.current_logits, pair.target);
    parts.total = add(parts.total, scale(parts.bow, opts.lambda));
  }
  return parts;
}

// ---- metrics lines ----------------------------------------------------------------

std::string EpochMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["loss"] = loss;
  j["ce"] = ce;
  j["bow"] = bow;
  j["lambda"] = lambda;
  j["dev_loss"] = dev_loss;
  j["length_acc"] = length_acc;
  j["token_acc"] = token_acc;
  j["repeat_rate"] = repeat_rate;
  return j.dump();
}

std::string TeacherMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["loss"] = loss;
  j["dev_loss"] = dev_loss;
  j["token_acc"] = token_acc;
  return j.dump();
}

// ---- shared loop pieces -------------------------------------------------------------

NamedTensors average_snapshots(const std::vector<NamedTensors>& snapshots) {
  if (snapshots.empty()) throw ContractError("average_snapshots: nothing to average");
  NamedTensors out;
  const double inv = 1.0 / static_cast<double>(snapshots.size());
  for (const auto& [name, first] : snapshots.front()) {
    std::vector<double> acc(first.numel(), 0.0);
    for (const auto& snap : snapshots) {
      auto it = snap.find(name);
      if (it == snap.end()) throw ContractError("average_snapshots: missing tensor " + name);
      if (it->second.shape() != first.shape()) {
        throw DimensionError("average_snapshots: shape mismatch for " + name);
      }
      const auto d = it->second.data();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += d[i];
    }
    for (double& v : acc) v *= inv;
    out.emplace(name, Tensor::from(first.shape(), std::move(acc)));
  }
  return out;
}

namespace {

// Keeps the `capacity` snapshots with the lowest dev loss.
class BestSnapshots {
 public:
  explicit BestSnapshots(int capacity) : capacity_(capacity) {}

  void offer(double dev_loss, int epoch, NamedTensors snap) {
    entries_.push_back({dev_loss, epoch, std::move(snap)});
    std::stable_sort(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) {
      return a.dev_loss < b.dev_loss;
    });
    if (static_cast<int>(entries_.size()) > capacity_) entries_.pop_back();
  }

  std::vector<int> epochs() const {
    std::vector<int> out;
    for (const auto& e : entries_) out.push_back(e.epoch);
    return out;
  }

  NamedTensors average() const {
    std::vector<NamedTensors> snaps;
    for (const auto& e : entries_) snaps.push_back(e.snap);
    return average_snapshots(snaps);
  }

 private:
  struct Entry {
    double dev_loss;
    int epoch;
    NamedTensors snap;
  };
  int capacity_;
  std::vector<Entry> entries_;
};

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

void check_finite_loss(double value, int epoch, long step, const char* what) {
  if (!std::isfinite(value)) {
    throw NumericError(std::string("non-finite ") + what + " loss at epoch " +
                       std::to_string(epoch) + ", step " + std::to_string(step) +
                       " (value " + std::to_string(value) + ")");
  }
}

ReadoutMode readout_mode(SamplingMode s) {
  switch (s) {
    case SamplingMode::kTeacherForced: return ReadoutMode::kTeacherForced;
    case SamplingMode::kScheduled: return ReadoutMode::kScheduledSampling;
    case SamplingMode::kDifferentiable: return ReadoutMode::kDifferentiable;
  }
  return ReadoutMode::kTeacherForced;
}

struct NatDevStats {
  double loss = 0.0;
  double length_acc = 0.0;
  double token_acc = 0.0;
  double repeat_rate = 0.0;
};

// Inference-mode readout at the ground-truth length. The loss excludes the
// BOW term so epochs trained under different λ rank comparably.
NatDevStats evaluate_nat(const NatModel& model, const std::vector<SentencePair>& dev,
                         const TrainConfig& cfg) {
  NoGradGuard no_grad;
  NatDevStats st;
  if (dev.empty()) return st;
  const int v = model.config().vocab_size;
  double loss = 0.0;
  long tokens = 0, correct = 0, length_hits = 0;
  std::vector<std::vector<int>> predictions;
  for (const auto& pair : dev) {
    check_pair(pair, model.config());
    const EncoderOutput enc = model.encode(pair.source);
    const int m = static_cast<int>(pair.target.size());
    const int cls = length_class(m - enc.n);
    const Tensor len_logits = length_logits(enc, model.length_params());
    if (argmax(len_logits.data()) == cls) ++length_hits;
    const Tensor z = model.decode_representation(enc, m);
    ReadoutRequest req;
    req.left_size = model.config().left_size;
    req.right_size = model.config().right_size;
    const ReadoutOutput ro = model.look_around_readout(z, req);
    loss += ce_loss(ro.current_logits, ro.left_logits, ro.right_logits, pair.target,
                    cfg.smoothing).item();
    loss += cross_entropy(len_logits, std::span<const int>(&cls, 1)).item();
    std::vector<int> pred(m);
    for (int i = 0; i < m; ++i) {
      pred[i] = argmax(ro.current_logits.data().subspan(static_cast<std::size_t>(i) * v, v));
      if (pred[i] == pair.target[i]) ++correct;
    }
    tokens += m;
    predictions.push_back(std::move(pred));
  }
  st.loss = loss / static_cast<double>(tokens);
  st.token_acc = static_cast<double>(correct) / static_cast<double>(tokens);
  st.length_acc = static_cast<double>(length_hits) / static_cast<double>(dev.size());
  st.repeat_rate = repeated_token_rate(predictions);
  return st;
}

}  // namespace

// ---- NAT training -------------------------------------------------------------------

TrainLog train_nat(NatModel& model, const std::vector<SentencePair>& train,
                   const std::vector<SentencePair>& dev, const TrainConfig& cfg,
                   const Teacher* teacher, std::ostream* metrics_out) {
  cfg.validate();
  if (train.empty()) throw ContractError("train_nat: empty training corpus");
  if ((cfg.use_kd || cfg.init_encoder_from_teacher) && teacher == nullptr) {
    throw ContractError("train_nat: distillation or encoder init requested without a teacher");
  }
  if (cfg.init_encoder_from_teacher) {
    model.import_encoder_weights(teacher->export_encoder_weights());
  }
  const std::vector<SentencePair> data =
      cfg.use_kd ? distill_dataset(*teacher, train, cfg.kd_beam) : train;

  std::vector<Tensor> params = model.params().tensors();
  AdamState adam = make_adam_state(params);
  std::mt19937_64 dropout_rng(cfg.seed);
  std::mt19937_64 sampling_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const long steps_per_epoch =
      (static_cast<long>(data.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = steps_per_epoch * cfg.epochs;

  TrainLog log;
  BestSnapshots best(cfg.average_best);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochMetrics em;
    em.epoch = epoch;
    em.lambda = lambda_schedule(cfg.lambda, epoch - 1);
    const auto order = shuffled_order(data.size(), cfg.seed + static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0, ce_sum = 0.0, bow_sum = 0.0;
    long token_sum = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      int batch_tokens = 0;
      for (std::size_t k = start; k < end; ++k) {
        batch_tokens += static_cast<int>(data[order[k]].target.size());
      }
      NatStepOptions opts;
      opts.mode = readout_mode(cfg.sampling);
      opts.alpha = cfg.alpha;
      opts.lambda = em.lambda;
      opts.use_bow = cfg.use_bow;
      opts.smoothing = cfg.smoothing;
      opts.ground_truth_prob =
          1.0 - (1.0 - cfg.ss_final_prob) * static_cast<double>(log.steps) /
                    static_cast<double>(std::max(1L, total_steps - 1));
      opts.sampling_rng = &sampling_rng;
      opts.dropout_rng = model.config().dropout > 0 ? &dropout_rng : nullptr;

      model.params().zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const NatLossParts parts = nat_loss(model, data[order[k]], opts);
        const double value = parts.total.item();
        check_finite_loss(value, epoch, log.steps, "training");
        loss_sum += value;
        ce_sum += parts.ce.item();
        if (parts.bow.defined()) bow_sum += parts.bow.item();
        backward(scale(parts.total, 1.0 / batch_tokens));
      }
      token_sum += batch_tokens;
      ++log.steps;
      adam_step(params, adam, warmup_inverse_sqrt(log.steps, cfg.peak_lr, cfg.warmup_steps));
    }

    em.loss = loss_sum / static_cast<double>(token_sum);
    em.ce = ce_sum / static_cast<double>(token_sum);
    em.bow = bow_sum / static_cast<double>(token_sum);
    const NatDevStats st = evaluate_nat(model, dev, cfg);
    em.dev_loss = dev.empty() ? em.loss : st.loss;
    em.length_acc = st.length_acc;
    em.token_acc = st.token_acc;
    em.repeat_rate = st.repeat_rate;
    best.offer(em.dev_loss, epoch, model.params().snapshot());
    log.epochs.push_back(em);
    if (metrics_out) *metrics_out << em.to_json() << '\n' << std::flush;
  }
  model.params().assign(best.average());
  log.averaged_epochs = best.epochs();
  return log;
}

// ---- teacher training -----------------------------------------------------------------

double teacher_token_accuracy(const Teacher& teacher, const std::vector<SentencePair>& pairs) {
  NoGradGuard no_grad;
  const int v = teacher.config().vocab_size;
  long hits = 0, total = 0;
  for (const auto& pair : pairs) {
    const EncoderOutput enc = teacher.encoder().encode(pair.source);
    std::vector<int> inputs{kBos};
    inputs.insert(inputs.end(), pair.target.begin(), pair.target.end());
    const Tensor logits = teacher.decoder_logits(enc, inputs);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      const int gold = t < pair.target.size() ? pair.target[t] : kEos;
      if (argmax(logits.data().subspan(t * v, v)) == gold) ++hits;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

TeacherLog train_teacher(Teacher& teacher, const std::vector<SentencePair>& train,
                         const std::vector<SentencePair>& dev, const TrainConfig& cfg,
                         std::ostream* metrics_out) {
  cfg.validate();
  if (train.empty()) throw ContractError("train_teacher: empty training corpus");
  std::vector<Tensor> params = teacher.params().tensors();
  AdamState adam = make_adam_state(params);
  std::mt19937_64 dropout_rng(cfg.seed);
  std::mt19937_64* drop = teacher.config().dropout > 0 ? &dropout_rng : nullptr;

  TeacherLog log;
  BestSnapshots best(cfg.average_best);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    TeacherMetrics tm;
    tm.epoch = epoch;
    const auto order = shuffled_order(train.size(), cfg.seed + static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    long token_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      int batch_tokens = 0;
      for (std::size_t k = start; k < end; ++k) {
        batch_tokens += static_cast<int>(train[order[k]].target.size()) + 1;
      }
      teacher.params().zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const Tensor loss = teacher.loss(train[order[k]], cfg.smoothing, drop);
        const double value = loss.item();
        check_finite_loss(value, epoch, log.steps, "teacher");
        loss_sum += value;
        backward(scale(loss, 1.0 / batch_tokens));
      }
      token_sum += batch_tokens;
      ++log.steps;
      adam_step(params, adam, warmup_inverse_sqrt(log.steps, cfg.peak_lr, cfg.warmup_steps));
    }
    tm.loss = loss_sum / static_cast<double>(token_sum);
    if (dev.empty()) {
      tm.dev_loss = tm.loss;
    } else {
      NoGradGuard no_grad;
      double dev_sum = 0.0;
      long dev_tokens = 0;
      for (const auto& pair : dev) {
        dev_sum += teacher.loss(pair, 0.0).item();
        dev_tokens += static_cast<long>(pair.target.size()) + 1;
      }
      tm.dev_loss = dev_sum / static_cast<double>(dev_tokens);
      tm.token_acc = teacher_token_accuracy(teacher, dev);
    }
    best.offer(tm.dev_loss, epoch, teacher.params().snapshot());
    log.epochs.push_back(tm);
    if (metrics_out) *metrics_out << tm.to_json() << '\n' << std::flush;
  }
  teacher.params().assign(best.average());
  return log;
}

}  // namespace lava

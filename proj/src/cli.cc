#include "lava/cli.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lava/bench.h"
#include "lava/checkpoint.h"
#include "lava/decoding.h"
#include "lava/gradcheck.h"
#include "lava/metrics.h"
#include "lava/training.h"

namespace lava {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

const std::vector<std::string> kOnOff{"on", "off"};

bool on(const std::string& v) { return v == "on"; }

// ---- corpus directories -----------------------------------------------------------

struct Corpus {
  Vocabulary vocab;
  std::vector<SentencePair> pairs;
};

void write_corpus_dir(const std::string& dir, const Vocabulary& vocab,
                      const std::vector<SentencePair>& pairs) {
  fs::create_directories(dir);
  write_parallel_corpus(pairs, dir + "/source.txt", dir + "/target.txt", vocab);
  vocab.save(dir + "/vocab.txt");
}

Corpus read_corpus_dir(const std::string& dir, const Vocabulary* vocab = nullptr) {
  Corpus c;
  if (vocab) {
    c.vocab = *vocab;
  } else if (fs::exists(dir + "/vocab.txt")) {
    c.vocab = Vocabulary::load(dir + "/vocab.txt");
  } else {
    std::vector<std::string> lines;
    for (const char* name : {"/source.txt", "/target.txt"}) {
      std::ifstream in(dir + name);
      if (!in) throw std::runtime_error("cannot open " + dir + name);
      for (std::string line; std::getline(in, line);) lines.push_back(line);
    }
    std::vector<std::string> tokens;
    for (const auto& l : lines)
      for (auto& t : split_whitespace(l)) tokens.push_back(std::move(t));
    c.vocab = build_vocab(tokens);
  }
  c.pairs = read_parallel_corpus(dir + "/source.txt", dir + "/target.txt", c.vocab);
  return c;
}

// ---- shared option groups -------------------------------------------------------------

struct ModelFlags {
  ModelConfig cfg;
  std::string va = "on";
  std::string cross = "on";
  std::string la = "1,1";

  void add(CLI::App* app, bool student) {
    app->add_option("--d-model", cfg.d_model, "Model width")->capture_default_str();
    app->add_option("--heads", cfg.heads, "Attention heads")->capture_default_str();
    app->add_option("--d-ff", cfg.d_ff, "Feed-forward width")->capture_default_str();
    app->add_option("--enc-layers", cfg.enc_layers, "Encoder layers")->capture_default_str();
    app->add_option("--dec-layers", cfg.dec_layers, "Decoder layers")->capture_default_str();
    app->add_option("--max-len", cfg.max_len, "Maximum sequence length")->capture_default_str();
    app->add_option("--rel-k", cfg.rel_k, "Relative position clip")->capture_default_str();
    app->add_option("--dropout", cfg.dropout, "Dropout rate")->capture_default_str();
    app->add_option("--init-seed", cfg.init_seed, "Parameter init seed")->capture_default_str();
    if (student) {
      app->add_option("--la", la, "Look-around sizes LS,RS (each 0 or 1)")->capture_default_str();
      app->add_option("--va", va, "Vocabulary attention")
          ->check(CLI::IsMember(kOnOff))->capture_default_str();
      app->add_option("--cross-attention", cross, "Decoder cross-attention")
          ->check(CLI::IsMember(kOnOff))->capture_default_str();
    }
  }

  ModelConfig resolve(int vocab_size) const {
    ModelConfig c = cfg;
    c.vocab_size = vocab_size;
    c.vocab_attention = on(va);
    c.cross_attention = on(cross);
    const auto comma = la.find(',');
    if (comma == std::string::npos) throw ConfigError("--la expects LS,RS");
    try {
      c.left_size = std::stoi(la.substr(0, comma));
      c.right_size = std::stoi(la.substr(comma + 1));
    } catch (const std::logic_error&) {
      throw ConfigError("--la expects LS,RS");
    }
    c.validate();
    return c;
  }
};

struct TrainFlags {
  TrainConfig cfg;
  std::string sampling = "dss";
  std::string lambda = "linear:0.1:5";
  std::string bow = "on";
  std::string kd = "off";
  std::string init_encoder = "off";

  void add(CLI::App* app, bool student) {
    app->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    app->add_option("--batch-size", cfg.batch_size, "Sentences per step")->capture_default_str();
    app->add_option("--lr", cfg.peak_lr, "Peak learning rate")->capture_default_str();
    app->add_option("--warmup", cfg.warmup_steps, "Warmup steps")->capture_default_str();
    app->add_option("--smoothing", cfg.smoothing, "Label smoothing")->capture_default_str();
    app->add_option("--seed", cfg.seed, "Shuffle, dropout and sampling seed")->capture_default_str();
    app->add_option("--average-best", cfg.average_best, "Checkpoints averaged")
        ->capture_default_str();
    if (student) {
      app->add_option("--sampling", sampling, "Neighbor sampling: tf, ss, dss")
          ->check(CLI::IsMember({"tf", "ss", "dss"}))->capture_default_str();
      app->add_option("--alpha", cfg.alpha, "Peaked softmax temperature")->capture_default_str();
      app->add_option("--lambda", lambda, "BOW weight schedule: constant:V or linear:MAX:EPOCHS")
          ->capture_default_str();
      app->add_option("--bow", bow, "BOW loss")->check(CLI::IsMember(kOnOff))->capture_default_str();
      app->add_option("--kd", kd, "Train on teacher beam outputs")
          ->check(CLI::IsMember(kOnOff))->capture_default_str();
      app->add_option("--kd-beam", cfg.kd_beam, "Distillation beam width")->capture_default_str();
      app->add_option("--init-encoder", init_encoder, "Copy encoder weights from the teacher")
          ->check(CLI::IsMember(kOnOff))->capture_default_str();
      app->add_option("--ss-final-prob", cfg.ss_final_prob,
                      "Scheduled sampling ground-truth probability at the end")
          ->capture_default_str();
    }
  }

  TrainConfig resolve() const {
    TrainConfig c = cfg;
    c.sampling = parse_sampling(sampling);
    c.lambda = LambdaSchedule::parse(lambda);
    c.use_bow = on(bow);
    c.use_kd = on(kd);
    c.init_encoder_from_teacher = on(init_encoder);
    c.validate();
    return c;
  }
};

struct StrategyFlags {
  DecodeOptions opts;
  std::string strategy = "greedy";

  void add(CLI::App* app, bool single) {
    if (single) {
      app->add_option("--strategy", strategy, "greedy, npd, link, l2r, r2l, dynamic, at-beam")
          ->check(CLI::IsMember({"greedy", "npd", "link", "l2r", "r2l", "dynamic", "at-beam"}))
          ->capture_default_str();
    }
    app->add_option("--candidates", opts.num_candidates, "NPD length candidates")
        ->capture_default_str();
    app->add_option("--samples", opts.num_samples, "Link-and-rescore samples")->capture_default_str();
    app->add_option("--seed", opts.seed, "Link-and-rescore sampling seed")->capture_default_str();
    app->add_option("--beam", opts.beam_width, "Sequential beam width")->capture_default_str();
    app->add_option("--at-beam", opts.at_beam, "Teacher beam width")->capture_default_str();
    app->add_option("--threshold", opts.threshold, "Dynamic re-prediction threshold")
        ->capture_default_str();
    app->add_option("--max-rounds", opts.max_rounds, "Dynamic refinement rounds")
        ->capture_default_str();
  }

  DecodeOptions resolve(const std::string& name) const {
    DecodeOptions o = opts;
    o.strategy = parse_strategy(name);
    return o;
  }
};

json result_json(const DecodeResult& r, const Vocabulary& vocab) {
  json j;
  j["strategy"] = strategy_name(r.strategy);
  j["tokens"] = r.tokens;
  j["text"] = vocab.decode_line(r.tokens);
  j["token_probs"] = r.token_probs;
  auto& triples = j["triples"] = json::array();
  for (const auto& t : r.triples) {
    triples.push_back({{"left", t.left}, {"current", t.current}, {"right", t.right},
                       {"left_prob", t.left_prob}, {"current_prob", t.current_prob},
                       {"right_prob", t.right_prob}});
  }
  auto& trace = j["refinement_trace"] = json::array();
  for (const auto& round : r.refinement_trace) {
    trace.push_back({{"round", round.round}, {"positions", round.positions}});
  }
  j["latency_ms"] = r.latency_ms;
  j["candidates_scored"] = r.candidates_scored;
  j["decoder_passes"] = r.decoder_passes;
  j["readout_sweeps"] = r.readout_sweeps;
  j["teacher_score"] = r.teacher_score;
  return j;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::optional<Teacher> maybe_teacher(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_teacher(path);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Non-autoregressive translation with vocabulary attention and look-around decoding",
               "lava"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read flags from a key=value file ([subcommand] sections)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic parallel corpus");
  SyntheticSpec spec;
  std::string gen_task = "copy", gen_out;
  gen->add_option("--task", gen_task, "copy, reverse, remap, multimodal")
      ->check(CLI::IsMember({"copy", "reverse", "remap", "multimodal"}))->capture_default_str();
  gen->add_option("--pairs", spec.n_pairs, "Number of pairs")->capture_default_str();
  gen->add_option("--min-len", spec.min_len, "Shortest source")->capture_default_str();
  gen->add_option("--max-len", spec.max_len, "Longest source")->capture_default_str();
  gen->add_option("--vocab-size", spec.vocab_size, "Vocabulary size incl. specials")
      ->capture_default_str();
  gen->add_option("--pool", spec.pool_size, "Distinct multimodal sources (0: pairs/8)")
      ->capture_default_str();
  gen->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train-teacher
  auto* tt = app.add_subcommand("train-teacher", "Train the autoregressive teacher");
  ModelFlags tt_model;
  TrainFlags tt_train;
  std::string tt_data, tt_dev, tt_out;
  tt->add_option("--train", tt_data, "Training corpus directory")->required();
  tt->add_option("--dev", tt_dev, "Dev corpus directory");
  tt->add_option("--out", tt_out, "Checkpoint path")->required();
  tt_model.add(tt, false);
  tt_train.add(tt, false);

  // distill
  auto* dist = app.add_subcommand("distill", "Replace targets with teacher beam outputs");
  std::string dist_teacher, dist_data, dist_out;
  int dist_beam = 4;
  dist->add_option("--teacher", dist_teacher, "Teacher checkpoint")->required();
  dist->add_option("--train", dist_data, "Corpus directory")->required();
  dist->add_option("--out", dist_out, "Output directory")->required();
  dist->add_option("--beam", dist_beam, "Beam width")->capture_default_str();

  // train-nat
  auto* tn = app.add_subcommand("train-nat", "Train the non-autoregressive student");
  ModelFlags tn_model;
  TrainFlags tn_train;
  std::string tn_data, tn_dev, tn_out, tn_teacher;
  tn->add_option("--train", tn_data, "Training corpus directory")->required();
  tn->add_option("--dev", tn_dev, "Dev corpus directory");
  tn->add_option("--out", tn_out, "Checkpoint path")->required();
  tn->add_option("--teacher", tn_teacher, "Teacher checkpoint (for --kd / --init-encoder)");
  tn_model.add(tn, true);
  tn_train.add(tn, true);

  // decode
  auto* dec = app.add_subcommand("decode", "Decode sentences, one JSON line each");
  StrategyFlags dec_flags;
  std::string dec_model, dec_teacher, dec_data, dec_source;
  dec->add_option("--model", dec_model, "Student checkpoint");
  dec->add_option("--teacher", dec_teacher, "Teacher checkpoint");
  auto* dec_in = dec->add_option("--data", dec_data, "Corpus directory (sources decoded)");
  dec->add_option("--source", dec_source, "One whitespace-tokenized sentence")->excludes(dec_in);
  dec_flags.add(dec, true);

  // eval
  auto* ev = app.add_subcommand("eval", "Corpus BLEU and repeated-token rate");
  StrategyFlags ev_flags;
  std::string ev_model, ev_teacher, ev_data;
  bool ev_lower = false;
  ev->add_option("--model", ev_model, "Student checkpoint");
  ev->add_option("--teacher", ev_teacher, "Teacher checkpoint");
  ev->add_option("--data", ev_data, "Corpus directory")->required();
  ev->add_flag("--case-insensitive", ev_lower, "Lowercase before BLEU");
  ev_flags.add(ev, true);

  // bench
  auto* bn = app.add_subcommand("bench", "Single-thread batch-1 latency report");
  StrategyFlags bn_flags;
  std::string bn_model, bn_teacher, bn_data, bn_strategies = "greedy,npd,dynamic,at-beam";
  int bn_warmup = 5, bn_limit = 0;
  bn->add_option("--model", bn_model, "Student checkpoint")->required();
  bn->add_option("--teacher", bn_teacher, "Teacher checkpoint")->required();
  bn->add_option("--data", bn_data, "Test corpus directory")->required();
  bn->add_option("--strategies", bn_strategies, "Comma-separated strategies")->capture_default_str();
  bn->add_option("--warmup", bn_warmup, "Excluded warmup decodes")
      ->check(CLI::Range(5, 1000000))->capture_default_str();
  bn->add_option("--limit", bn_limit, "Use the first N sentences (0: all)")->capture_default_str();
  bn_flags.add(bn, false);

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient suite");
  std::uint64_t gc_seed = 7;
  double gc_tol = 1e-4;
  gc->add_option("--seed", gc_seed, "Input seed")->capture_default_str();
  gc->add_option("--tolerance", gc_tol, "Relative error bound")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  try {
    if (gen->parsed()) {
      spec.task = parse_task(gen_task);
      const auto pairs = gen_synthetic(spec);
      write_corpus_dir(gen_out, Vocabulary::synthetic(spec.vocab_size), pairs);
      out << json{{"task", gen_task}, {"pairs", pairs.size()}, {"out", gen_out}}.dump() << '\n';
    } else if (tt->parsed()) {
      const Corpus train = read_corpus_dir(tt_data);
      const std::vector<SentencePair> dev =
          tt_dev.empty() ? std::vector<SentencePair>{} : read_corpus_dir(tt_dev, &train.vocab).pairs;
      Teacher teacher(tt_model.resolve(train.vocab.size()));
      const TeacherLog log = train_teacher(teacher, train.pairs, dev, tt_train.resolve(), &out);
      save_checkpoint(teacher, train.vocab, tt_out);
      json j{{"checkpoint", tt_out}, {"steps", log.steps}};
      if (!dev.empty()) j["dev_token_acc"] = teacher_token_accuracy(teacher, dev);
      out << j.dump() << '\n';
    } else if (dist->parsed()) {
      Vocabulary vocab;
      const Teacher teacher = load_teacher(dist_teacher, &vocab);
      const Corpus corpus = read_corpus_dir(dist_data, &vocab);
      const auto distilled = distill_dataset(teacher, corpus.pairs, dist_beam);
      write_corpus_dir(dist_out, vocab, distilled);
      long changed = 0;
      for (std::size_t i = 0; i < distilled.size(); ++i)
        if (distilled[i].target != corpus.pairs[i].target) ++changed;
      out << json{{"pairs", distilled.size()}, {"changed", changed}, {"out", dist_out}}.dump()
          << '\n';
    } else if (tn->parsed()) {
      const TrainConfig tcfg = tn_train.resolve();
      std::optional<Teacher> teacher = maybe_teacher(tn_teacher);
      Vocabulary vocab;
      if (teacher) {
        vocab = read_checkpoint(tn_teacher).vocab;
      }
      const Corpus train = read_corpus_dir(tn_data, teacher ? &vocab : nullptr);
      const std::vector<SentencePair> dev =
          tn_dev.empty() ? std::vector<SentencePair>{} : read_corpus_dir(tn_dev, &train.vocab).pairs;
      NatModel model(tn_model.resolve(train.vocab.size()));
      const TrainLog log = train_nat(model, train.pairs, dev, tcfg, teacher ? &*teacher : nullptr, &out);
      save_checkpoint(model, train.vocab, tn_out);
      out << json{{"checkpoint", tn_out}, {"steps", log.steps},
                  {"averaged_epochs", log.averaged_epochs}}.dump()
          << '\n';
    } else if (dec->parsed()) {
      const DecodeOptions opts = dec_flags.resolve(dec_flags.strategy);
      Vocabulary vocab;
      std::optional<NatModel> model;
      if (!dec_model.empty()) model.emplace(load_nat(dec_model, &vocab));
      std::optional<Teacher> teacher;
      if (!dec_teacher.empty()) teacher.emplace(load_teacher(dec_teacher, model ? nullptr : &vocab));
      if (!model && !teacher) throw ContractError("decode: --model or --teacher required");
      std::vector<std::vector<int>> sources;
      if (!dec_source.empty()) {
        sources.push_back(vocab.encode_line(dec_source));
      } else if (!dec_data.empty()) {
        for (auto& p : read_corpus_dir(dec_data, &vocab).pairs) sources.push_back(std::move(p.source));
      } else {
        throw ContractError("decode: --data or --source required");
      }
      for (const auto& src : sources) {
        const DecodeResult r = decode(model ? &*model : nullptr, teacher ? &*teacher : nullptr, src, opts);
        out << result_json(r, vocab).dump() << '\n';
      }
    } else if (ev->parsed()) {
      const DecodeOptions opts = ev_flags.resolve(ev_flags.strategy);
      Vocabulary vocab;
      std::optional<NatModel> model;
      if (!ev_model.empty()) model.emplace(load_nat(ev_model, &vocab));
      std::optional<Teacher> teacher;
      if (!ev_teacher.empty()) teacher.emplace(load_teacher(ev_teacher, model ? nullptr : &vocab));
      if (!model && !teacher) throw ContractError("eval: --model or --teacher required");
      const Corpus corpus = read_corpus_dir(ev_data, &vocab);
      std::vector<std::vector<std::string>> hyps, refs;
      std::vector<std::vector<int>> hyp_ids;
      double latency = 0.0;
      for (const auto& p : corpus.pairs) {
        DecodeResult r = decode(model ? &*model : nullptr, teacher ? &*teacher : nullptr, p.source, opts);
        latency += r.latency_ms;
        hyps.push_back(vocab.decode(r.tokens));
        refs.push_back(vocab.decode(p.target));
        hyp_ids.push_back(std::move(r.tokens));
      }
      out << json{{"strategy", strategy_label(opts)},
                  {"sentences", corpus.pairs.size()},
                  {"bleu", bleu(hyps, refs, 4, !ev_lower)},
                  {"repeat_rate", repeated_token_rate(hyp_ids)},
                  {"mean_latency_ms", latency / std::max<double>(1.0, corpus.pairs.size())}}
                 .dump()
          << '\n';
    } else if (bn->parsed()) {
      Vocabulary vocab;
      const NatModel model = load_nat(bn_model, &vocab);
      const Teacher teacher = load_teacher(bn_teacher);
      auto pairs = read_corpus_dir(bn_data, &vocab).pairs;
      if (bn_limit > 0 && static_cast<int>(pairs.size()) > bn_limit) pairs.resize(bn_limit);
      std::vector<DecodeOptions> strategies;
      for (const auto& name : split_list(bn_strategies)) strategies.push_back(bn_flags.resolve(name));
      out << latency_bench(&model, teacher, strategies, pairs, bn_warmup).to_json() << '\n';
    } else if (gc->parsed()) {
      const auto entries = gradient_suite(gc_seed);
      double worst = 0.0;
      json checks = json::array();
      for (const auto& e : entries) {
        worst = std::max(worst, e.rel_error);
        checks.push_back({{"name", e.name}, {"rel_error", e.rel_error}});
      }
      const bool passed = worst <= gc_tol;
      out << json{{"max_rel_error", worst}, {"tolerance", gc_tol}, {"passed", passed},
                  {"checks", checks}}.dump()
          << '\n';
      return passed ? 0 : 1;
    }
  } catch (const std::exception& e) {
    err << json{{"error", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace lava

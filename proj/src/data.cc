#include "lava/data.h"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace lava {

namespace {

const std::vector<std::string> kSpecialTokens = {"<pad>", "<s>", "</s>", "<unk>"};

}  // namespace

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> ordinary_tokens) {
  id_to_token_ = kSpecialTokens;
  for (auto& tok : ordinary_tokens) id_to_token_.push_back(std::move(tok));
  for (int i = 0; i < static_cast<int>(id_to_token_.size()); ++i) {
    if (!token_to_id_.emplace(id_to_token_[i], i).second) {
      throw std::invalid_argument("duplicate vocabulary token: " + id_to_token_[i]);
    }
  }
}

Vocabulary Vocabulary::synthetic(int size) {
  if (size < kNumSpecials + 1) {
    throw std::invalid_argument("vocabulary needs at least 5 entries");
  }
  std::vector<std::string> tokens;
  for (int i = kNumSpecials; i < size; ++i) tokens.push_back("w" + std::to_string(i));
  return Vocabulary(std::move(tokens));
}

int Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[id];
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.find(token) != token_to_id_.end();
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int i : ids) tokens.push_back(token(i));
  return tokens;
}

std::vector<int> Vocabulary::encode_line(std::string_view line) const {
  return encode(split_whitespace(line));
}

std::string Vocabulary::decode_line(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

std::vector<std::string> Vocabulary::ordinary_tokens() const {
  return {id_to_token_.begin() + kNumSpecials, id_to_token_.end()};
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
  for (const auto& t : ordinary_tokens()) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read vocabulary: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

std::vector<std::string> split_whitespace(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream is{std::string(line)};
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

Vocabulary build_vocab(const std::vector<std::string>& corpus, int min_count) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::unordered_map<std::string, int> counts;
  for (const auto& t : corpus) {
    if (std::find(kSpecialTokens.begin(), kSpecialTokens.end(), t) !=
        kSpecialTokens.end())
      continue;
    ++counts[t];
  }
  std::vector<std::pair<std::string, int>> entries(counts.begin(), counts.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens;
  for (const auto& [tok, c] : entries)
    if (c >= min_count) tokens.push_back(tok);
  return Vocabulary(std::move(tokens));
}

Task parse_task(std::string_view name) {
  if (name == "copy") return Task::kCopy;
  if (name == "reverse") return Task::kReverse;
  if (name == "remap") return Task::kRemap;
  if (name == "multimodal") return Task::kMultimodal;
  throw std::invalid_argument("unknown task: " + std::string(name));
}

std::string_view task_name(Task task) {
  switch (task) {
    case Task::kCopy: return "copy";
    case Task::kReverse: return "reverse";
    case Task::kRemap: return "remap";
    case Task::kMultimodal: return "multimodal";
  }
  return "?";
}

std::vector<int> remap_table(int vocab_size) {
  std::vector<int> table(vocab_size);
  std::iota(table.begin(), table.end(), 0);
  // Fixed seed: the mapping is part of the task definition, not the sample.
  std::mt19937_64 rng(0x5eed0000ULL + static_cast<std::uint64_t>(vocab_size));
  std::shuffle(table.begin() + kNumSpecials, table.end(), rng);
  return table;
}

std::pair<std::vector<int>, std::vector<int>> multimodal_templates(
    const std::vector<int>& source, int vocab_size) {
  if (source.size() < 2) {
    throw std::invalid_argument("multimodal source needs at least two tokens");
  }
  const std::vector<int> table = remap_table(vocab_size);
  std::vector<int> a(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) a[i] = table.at(source[i]);
  std::vector<int> b = a;
  std::swap(b[0], b[1]);
  return {a, b};
}

namespace {

std::vector<int> random_source(std::mt19937_64& rng, int min_len, int max_len,
                               int vocab_size) {
  std::uniform_int_distribution<int> len_dist(min_len, max_len);
  std::uniform_int_distribution<int> tok_dist(kNumSpecials, vocab_size - 1);
  const int len = len_dist(rng);
  std::vector<int> s;
  s.reserve(len);
  while (static_cast<int>(s.size()) < len) {
    const int t = tok_dist(rng);
    if (!s.empty() && s.back() == t) continue;
    s.push_back(t);
  }
  return s;
}

}  // namespace

std::vector<SentencePair> gen_synthetic(const SyntheticSpec& spec) {
  if (spec.vocab_size < 8) throw std::invalid_argument("gen_synthetic: vocab_size < 8");
  if (spec.min_len < 1 || spec.max_len < spec.min_len) {
    throw std::invalid_argument("gen_synthetic: invalid length range [" +
                                std::to_string(spec.min_len) + ", " +
                                std::to_string(spec.max_len) + "]");
  }
  if (spec.task == Task::kMultimodal && spec.min_len < 2) {
    throw std::invalid_argument("gen_synthetic: multimodal needs min_len >= 2");
  }
  if (spec.n_pairs < 0) throw std::invalid_argument("gen_synthetic: n_pairs < 0");

  std::mt19937_64 rng(spec.seed);
  std::vector<SentencePair> pairs;
  pairs.reserve(spec.n_pairs);

  if (spec.task == Task::kMultimodal) {
    const int pool_size =
        spec.pool_size > 0 ? spec.pool_size : std::max(1, spec.n_pairs / 8);
    std::vector<std::vector<int>> pool;
    for (int i = 0; i < pool_size; ++i)
      pool.push_back(random_source(rng, spec.min_len, spec.max_len, spec.vocab_size));
    std::uniform_int_distribution<int> pick(0, pool_size - 1);
    std::bernoulli_distribution coin(0.5);
    for (int i = 0; i < spec.n_pairs; ++i) {
      const auto& src = pool[pick(rng)];
      auto [a, b] = multimodal_templates(src, spec.vocab_size);
      pairs.push_back({src, coin(rng) ? std::move(a) : std::move(b)});
    }
    return pairs;
  }

  const std::vector<int> table = remap_table(spec.vocab_size);
  for (int i = 0; i < spec.n_pairs; ++i) {
    std::vector<int> src = random_source(rng, spec.min_len, spec.max_len, spec.vocab_size);
    std::vector<int> tgt = src;
    if (spec.task == Task::kReverse) std::reverse(tgt.begin(), tgt.end());
    if (spec.task == Task::kRemap)
      for (int& t : tgt) t = table[t];
    pairs.push_back({std::move(src), std::move(tgt)});
  }
  return pairs;
}

SentencePair Batch::pair(int row) const {
  SentencePair p;
  for (int j = 0; j < source_width; ++j)
    if (source_mask[row * source_width + j]) p.source.push_back(source[row * source_width + j]);
  for (int j = 0; j < target_width; ++j)
    if (target_mask[row * target_width + j]) p.target.push_back(target[row * target_width + j]);
  return p;
}

std::vector<Batch> batchify(const std::vector<SentencePair>& pairs, int batch_size,
                            std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size < 1) throw std::invalid_argument("batchify: batch_size < 1");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_seed) {
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    Batch b;
    b.batch_size = static_cast<int>(end - start);
    for (std::size_t k = start; k < end; ++k) {
      b.source_width = std::max(b.source_width, static_cast<int>(pairs[order[k]].source.size()));
      b.target_width = std::max(b.target_width, static_cast<int>(pairs[order[k]].target.size()));
    }
    b.source.assign(b.batch_size * b.source_width, kPad);
    b.target.assign(b.batch_size * b.target_width, kPad);
    b.source_mask.assign(b.source.size(), 0);
    b.target_mask.assign(b.target.size(), 0);
    for (std::size_t k = start; k < end; ++k) {
      const int row = static_cast<int>(k - start);
      const auto& p = pairs[order[k]];
      for (std::size_t j = 0; j < p.source.size(); ++j) {
        b.source[row * b.source_width + j] = p.source[j];
        b.source_mask[row * b.source_width + j] = 1;
      }
      for (std::size_t j = 0; j < p.target.size(); ++j) {
        b.target[row * b.target_width + j] = p.target[j];
        b.target_mask[row * b.target_width + j] = 1;
      }
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<SentencePair> read_parallel_corpus(const std::string& source_path,
                                               const std::string& target_path,
                                               const Vocabulary& vocab) {
  std::ifstream src(source_path), tgt(target_path);
  if (!src) throw std::runtime_error("cannot read corpus: " + source_path);
  if (!tgt) throw std::runtime_error("cannot read corpus: " + target_path);
  std::vector<SentencePair> pairs;
  std::string s, t;
  while (true) {
    const bool has_s = static_cast<bool>(std::getline(src, s));
    const bool has_t = static_cast<bool>(std::getline(tgt, t));
    if (!has_s && !has_t) break;
    if (has_s != has_t) {
      throw std::runtime_error("corpus files have different line counts");
    }
    pairs.push_back({vocab.encode_line(s), vocab.encode_line(t)});
  }
  return pairs;
}

void write_parallel_corpus(const std::vector<SentencePair>& pairs,
                           const std::string& source_path,
                           const std::string& target_path,
                           const Vocabulary& vocab) {
  std::ofstream src(source_path), tgt(target_path);
  if (!src || !tgt) throw std::runtime_error("cannot write corpus files");
  for (const auto& p : pairs) {
    src << vocab.decode_line(p.source) << '\n';
    tgt << vocab.decode_line(p.target) << '\n';
  }
}

}  // namespace lava

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lava {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kNumSpecials = 4;

// Token <-> id map. Specials occupy ids 0-3; everything else is assigned
// from 4 upward.
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> ordinary_tokens);

  // Ids 4..size-1 named "w4", "w5", ...; used by the synthetic tasks.
  static Vocabulary synthetic(int size);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  bool contains(std::string_view token) const;

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;
  std::vector<int> encode_line(std::string_view line) const;
  std::string decode_line(const std::vector<int>& ids) const;

  // Ordinary tokens only, in id order.
  std::vector<std::string> ordinary_tokens() const;

  // One token per line; line index == id - 4.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::map<std::string, int, std::less<>> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Frequency-descending ids, ties broken lexicographically.
Vocabulary build_vocab(const std::vector<std::string>& corpus, int min_count = 1);

std::vector<std::string> split_whitespace(std::string_view line);

struct SentencePair {
  std::vector<int> source;
  std::vector<int> target;

  bool operator==(const SentencePair&) const = default;
};

enum class Task { kCopy, kReverse, kRemap, kMultimodal };

Task parse_task(std::string_view name);
std::string_view task_name(Task task);

struct SyntheticSpec {
  Task task = Task::kCopy;
  int n_pairs = 1000;
  int min_len = 5;
  int max_len = 16;
  int vocab_size = 32;
  std::uint64_t seed = 1;
  // Distinct sources drawn for the multimodal task; 0 picks n_pairs / 8.
  int pool_size = 0;
};

// Sources never contain two equal adjacent tokens. The remap bijection
// depends only on vocab_size, so corpora drawn with different seeds share it.
std::vector<SentencePair> gen_synthetic(const SyntheticSpec& spec);

// Content-token bijection used by remap and multimodal.
std::vector<int> remap_table(int vocab_size);
// The two valid targets of a multimodal source.
std::pair<std::vector<int>, std::vector<int>> multimodal_templates(
    const std::vector<int>& source, int vocab_size);

struct Batch {
  int batch_size = 0;
  int source_width = 0;
  int target_width = 0;
  std::vector<int> source;  // batch_size × source_width, PAD filled
  std::vector<int> target;  // batch_size × target_width, PAD filled
  std::vector<std::uint8_t> source_mask;
  std::vector<std::uint8_t> target_mask;

  SentencePair pair(int row) const;
};

std::vector<Batch> batchify(const std::vector<SentencePair>& pairs,
                            int batch_size,
                            std::optional<std::uint64_t> shuffle_seed = {});

// Aligned by line: source_path line k pairs with target_path line k.
std::vector<SentencePair> read_parallel_corpus(const std::string& source_path,
                                               const std::string& target_path,
                                               const Vocabulary& vocab);
void write_parallel_corpus(const std::vector<SentencePair>& pairs,
                           const std::string& source_path,
                           const std::string& target_path,
                           const Vocabulary& vocab);

}  // namespace lava

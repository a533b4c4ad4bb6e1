#include "lava/metrics.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <stdexcept>

#include "lava/tensor.h"

namespace lava {

namespace {

template <typename T>
std::map<std::vector<T>, int> ngram_counts(const std::vector<T>& seq, int n) {
  std::map<std::vector<T>, int> counts;
  if (static_cast<int>(seq.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    ++counts[std::vector<T>(seq.begin() + i, seq.begin() + i + n)];
  }
  return counts;
}

template <typename T>
double corpus_bleu(const std::vector<std::vector<T>>& hyps,
                   const std::vector<std::vector<T>>& refs, int max_ngram) {
  if (hyps.size() != refs.size()) {
    throw ContractError("bleu: " + std::to_string(hyps.size()) + " hypotheses vs " +
                        std::to_string(refs.size()) + " references");
  }
  if (max_ngram < 1) throw ContractError("bleu: max_ngram must be >= 1");
  std::vector<double> matches(max_ngram, 0.0), totals(max_ngram, 0.0);
  double hyp_len = 0.0, ref_len = 0.0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    if (refs[s].empty()) throw ContractError("bleu: empty reference at index " + std::to_string(s));
    hyp_len += static_cast<double>(hyps[s].size());
    ref_len += static_cast<double>(refs[s].size());
    for (int n = 1; n <= max_ngram; ++n) {
      const auto h = ngram_counts(hyps[s], n);
      const auto r = ngram_counts(refs[s], n);
      for (const auto& [gram, count] : h) {
        auto it = r.find(gram);
        if (it != r.end()) matches[n - 1] += std::min(count, it->second);
        totals[n - 1] += count;
      }
    }
  }
  double log_precision = 0.0;
  for (int n = 0; n < max_ngram; ++n) {
    if (matches[n] == 0.0) return 0.0;
    log_precision += std::log(matches[n] / totals[n]);
  }
  log_precision /= max_ngram;
  const double brevity = hyp_len >= ref_len ? 0.0 : 1.0 - ref_len / hyp_len;
  return 100.0 * std::exp(log_precision + brevity);
}

template <typename T>
double repeat_rate(const std::vector<std::vector<T>>& seqs) {
  long repeats = 0, pairs = 0;
  for (const auto& s : seqs) {
    for (std::size_t t = 1; t < s.size(); ++t) {
      ++pairs;
      if (s[t] == s[t - 1]) ++repeats;
    }
  }
  return pairs == 0 ? 0.0 : static_cast<double>(repeats) / static_cast<double>(pairs);
}

std::vector<std::vector<std::string>> lowered(const std::vector<std::vector<std::string>>& in) {
  auto out = in;
  for (auto& seq : out)
    for (auto& tok : seq)
      std::transform(tok.begin(), tok.end(), tok.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

double bleu(const std::vector<std::vector<int>>& hypotheses,
            const std::vector<std::vector<int>>& references, int max_ngram) {
  return corpus_bleu(hypotheses, references, max_ngram);
}

double bleu(const std::vector<std::vector<std::string>>& hypotheses,
            const std::vector<std::vector<std::string>>& references, int max_ngram,
            bool case_sensitive) {
  if (case_sensitive) return corpus_bleu(hypotheses, references, max_ngram);
  return corpus_bleu(lowered(hypotheses), lowered(references), max_ngram);
}

double repeated_token_rate(const std::vector<std::vector<int>>& sequences) {
  return repeat_rate(sequences);
}

double repeated_token_rate(const std::vector<std::vector<std::string>>& sequences) {
  return repeat_rate(sequences);
}

}  // namespace lava

#pragma once

#include <string>
#include <vector>

namespace lava {

// Corpus-level BLEU in [0, 100]: clipped n-gram precisions for n = 1..max_ngram
// pooled over the corpus, geometric mean, times the brevity penalty. Any zero
// precision gives 0. Throws on count mismatch or an empty reference.
double bleu(const std::vector<std::vector<int>>& hypotheses,
            const std::vector<std::vector<int>>& references, int max_ngram = 4);
double bleu(const std::vector<std::vector<std::string>>& hypotheses,
            const std::vector<std::vector<std::string>>& references, int max_ngram = 4,
            bool case_sensitive = true);

// (# t > 0 with y_t == y_{t-1}) / (# t > 0), pooled over the corpus; 0 when
// no sequence has two tokens.
double repeated_token_rate(const std::vector<std::vector<int>>& sequences);
double repeated_token_rate(const std::vector<std::vector<std::string>>& sequences);

}  // namespace lava

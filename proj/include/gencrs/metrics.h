#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gencrs/toylm.h"

namespace gencrs {

struct RecEvalInstance {
  std::vector<int> context;
  std::string truth;
  std::vector<std::string> ranked;  // best first
};

// 1-based position of the truth in the ranked list, 0 when absent.
int truth_rank(const RecEvalInstance& inst);

double recall_at_k(std::span<const RecEvalInstance> instances, int k);
// Binary gain, one relevant item: 1/log2(rank+1).
double ndcg_at_k(std::span<const RecEvalInstance> instances, int k);
double mrr_at_k(std::span<const RecEvalInstance> instances, int k);

struct PplReference {
  std::vector<int> context;
  std::vector<int> target;
};

// Token-pooled perplexity from per-sequence target log-probabilities.
double pooled_ppl(const std::vector<std::vector<double>>& logprobs);
double corpus_ppl(const LmModel& model, const std::vector<PplReference>& refs);

using TokenSeq = std::vector<std::string>;

// Corpus BLEU x100: clipped n-gram precisions pooled over all pairs, uniform
// weights, brevity penalty, no smoothing. Orders with no candidate n-grams at
// all are left out of the geometric mean.
double bleu(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references, int max_n = 4);

// Unique over total n-grams across the corpus; throws when there are none.
double distinct_n(const std::vector<TokenSeq>& candidates, int n);
std::size_t ngram_total(const std::vector<TokenSeq>& candidates, int n);

struct MetricReport {
  std::map<std::string, double> values;  // "recall@1", "ppl", "bleu", ...
  std::map<std::string, long long> counts;
  std::vector<std::map<std::string, double>> runs;

  std::optional<double> get(const std::string& name) const;
  std::string to_json() const;
  static MetricReport from_json(const std::string& text);
};

}  // namespace gencrs

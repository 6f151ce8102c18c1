#include "gencrs/metrics.h"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

namespace gencrs {

using json = nlohmann::json;

namespace {

void check_rank_args(std::span<const RecEvalInstance> instances, int k, const char* what) {
  if (instances.empty()) throw Error(ErrorCode::kInvalidArgument, std::string(what) + ": empty instance set");
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, std::string(what) + ": k must be >= 1");
}

template <typename Gain>
double mean_gain(std::span<const RecEvalInstance> instances, int k, Gain gain) {
  double s = 0.0;
  for (const auto& inst : instances) {
    const int r = truth_rank(inst);
    if (r >= 1 && r <= k) s += gain(r);
  }
  return s / static_cast<double>(instances.size());
}

std::map<std::vector<std::string>, long long> ngram_counts(const TokenSeq& seq, int n) {
  std::map<std::vector<std::string>, long long> counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= seq.size(); ++i) {
    ++counts[std::vector<std::string>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                                      seq.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return counts;
}

}  // namespace

int truth_rank(const RecEvalInstance& inst) {
  const auto it = std::find(inst.ranked.begin(), inst.ranked.end(), inst.truth);
  return it == inst.ranked.end() ? 0 : static_cast<int>(it - inst.ranked.begin()) + 1;
}

double recall_at_k(std::span<const RecEvalInstance> instances, int k) {
  check_rank_args(instances, k, "recall_at_k");
  return mean_gain(instances, k, [](int) { return 1.0; });
}

double ndcg_at_k(std::span<const RecEvalInstance> instances, int k) {
  check_rank_args(instances, k, "ndcg_at_k");
  return mean_gain(instances, k, [](int r) { return 1.0 / std::log2(static_cast<double>(r) + 1.0); });
}

double mrr_at_k(std::span<const RecEvalInstance> instances, int k) {
  check_rank_args(instances, k, "mrr_at_k");
  return mean_gain(instances, k, [](int r) { return 1.0 / static_cast<double>(r); });
}

double pooled_ppl(const std::vector<std::vector<double>>& logprobs) {
  double nll = 0.0;
  std::size_t n = 0;
  for (const auto& seq : logprobs) {
    for (double lp : seq) nll -= lp;
    n += seq.size();
  }
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "corpus_ppl: zero target tokens");
  return std::exp(nll / static_cast<double>(n));
}

double corpus_ppl(const LmModel& model, const std::vector<PplReference>& refs) {
  if (refs.empty()) throw Error(ErrorCode::kInvalidArgument, "corpus_ppl: no references");
  std::vector<std::vector<double>> lps;
  lps.reserve(refs.size());
  for (const auto& r : refs) {
    if (r.target.empty()) continue;
    lps.push_back(model.target_logprobs(r.context, r.target));
  }
  return pooled_ppl(lps);
}

double bleu(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references, int max_n) {
  if (candidates.empty()) throw Error(ErrorCode::kInvalidArgument, "bleu: empty candidate corpus");
  if (candidates.size() != references.size())
    throw Error(ErrorCode::kInvalidArgument, "bleu: candidate and reference counts differ");
  if (max_n < 1) throw Error(ErrorCode::kInvalidArgument, "bleu: max_n must be >= 1");

  std::vector<long long> matched(static_cast<std::size_t>(max_n), 0), total(static_cast<std::size_t>(max_n), 0);
  long long c = 0, r = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    c += static_cast<long long>(candidates[i].size());
    r += static_cast<long long>(references[i].size());
    for (int n = 1; n <= max_n; ++n) {
      const auto cand = ngram_counts(candidates[i], n);
      const auto ref = ngram_counts(references[i], n);
      for (const auto& [gram, count] : cand) {
        const auto it = ref.find(gram);
        matched[n - 1] += std::min(count, it == ref.end() ? 0LL : it->second);
        total[n - 1] += count;
      }
    }
  }
  if (c == 0) return 0.0;

  double log_sum = 0.0;
  int orders = 0;
  for (int n = 0; n < max_n; ++n) {
    if (total[n] == 0) continue;
    if (matched[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n]));
    ++orders;
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  return 100.0 * bp * std::exp(log_sum / orders);
}

std::size_t ngram_total(const std::vector<TokenSeq>& candidates, int n) {
  std::size_t t = 0;
  for (const auto& s : candidates) {
    if (s.size() >= static_cast<std::size_t>(n)) t += s.size() - static_cast<std::size_t>(n) + 1;
  }
  return t;
}

double distinct_n(const std::vector<TokenSeq>& candidates, int n) {
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "distinct_n: n must be >= 1");
  std::set<std::vector<std::string>> unique;
  for (const auto& s : candidates) {
    for (auto& [gram, count] : ngram_counts(s, n)) unique.insert(gram);
  }
  const std::size_t total = ngram_total(candidates, n);
  if (total == 0) throw Error(ErrorCode::kInvalidArgument, "distinct_n: corpus has no " + std::to_string(n) + "-grams");
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

std::optional<double> MetricReport::get(const std::string& name) const {
  const auto it = values.find(name);
  if (it == values.end()) return std::nullopt;
  return it->second;
}

std::string MetricReport::to_json() const {
  json j;
  j["metrics"] = values;
  j["counts"] = counts;
  j["runs"] = runs;
  return j.dump(2) + "\n";
}

MetricReport MetricReport::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    MetricReport r;
    r.values = j.at("metrics").get<std::map<std::string, double>>();
    r.counts = j.at("counts").get<std::map<std::string, long long>>();
    r.runs = j.at("runs").get<std::vector<std::map<std::string, double>>>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("metric report: ") + e.what());
  }
}

}  // namespace gencrs

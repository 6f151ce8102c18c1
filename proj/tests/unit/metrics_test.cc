#include "gencrs/metrics.h"

#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.h"
#include "gencrs/eval_protocol.h"
#include "golden.h"
#include "oracles.h"

namespace gencrs {
namespace {

RecEvalInstance inst(const std::string& truth, std::vector<std::string> ranked) { return {{}, truth, std::move(ranked)}; }

TokenSeq words(const std::string& s) {
  TokenSeq out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto j = s.find(' ', i);
    out.push_back(s.substr(i, j == std::string::npos ? std::string::npos : j - i));
    if (j == std::string::npos) break;
    i = j + 1;
  }
  return out;
}

TEST(RankMetrics, TrivialCases) {
  const std::vector<RecEvalInstance> top{inst("a", {"a", "b"})};
  EXPECT_EQ(recall_at_k(top, 1), 1.0);
  EXPECT_EQ(ndcg_at_k(top, 1), 1.0);
  const std::vector<RecEvalInstance> absent{inst("z", {"a", "b", "c"})};
  for (int k : {1, 3, 20}) {
    EXPECT_EQ(recall_at_k(absent, k), 0.0);
    EXPECT_EQ(ndcg_at_k(absent, k), 0.0);
    EXPECT_EQ(mrr_at_k(absent, k), 0.0);
  }
  const std::vector<RecEvalInstance> third{inst("c", {"a", "b", "c", "d"})};
  EXPECT_EQ(ndcg_at_k(third, 3), 0.5);
  EXPECT_EQ(ndcg_at_k(third, 2), 0.0);
  const std::vector<RecEvalInstance> fourth{inst("d", {"a", "b", "c", "d"})};
  EXPECT_EQ(mrr_at_k(fourth, 4), 0.25);
  EXPECT_EQ(mrr_at_k(fourth, 3), 0.0);
  EXPECT_EQ(truth_rank(fourth[0]), 4);
  EXPECT_EQ(truth_rank(absent[0]), 0);
}

TEST(RankMetrics, Errors) {
  const std::vector<RecEvalInstance> none;
  EXPECT_THROW(recall_at_k(none, 1), Error);
  EXPECT_THROW(ndcg_at_k(none, 1), Error);
  EXPECT_THROW(mrr_at_k(none, 1), Error);
  const std::vector<RecEvalInstance> one{inst("a", {"a"})};
  EXPECT_THROW(recall_at_k(one, 0), Error);
}

std::vector<RecEvalInstance> random_instances(Rng& rng) {
  std::vector<RecEvalInstance> v;
  const std::size_t n = 1 + uniform_index(rng, 30);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> pool;
    for (int j = 0; j < 25; ++j) pool.push_back("m" + std::to_string(j));
    for (std::size_t j = pool.size(); j > 1; --j) std::swap(pool[j - 1], pool[uniform_index(rng, j)]);
    pool.resize(uniform_index(rng, 21));
    v.push_back(inst("m" + std::to_string(uniform_index(rng, 25)), pool));
  }
  return v;
}

TEST(RankMetrics, MatchNaiveRecountAndOrdering) {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = random_instances(rng);
    double prev = 0.0;
    for (int k = 1; k <= 20; ++k) {
      const double r = recall_at_k(v, k), n = ndcg_at_k(v, k), m = mrr_at_k(v, k);
      EXPECT_NEAR(r, oracle::naive_recall(v, k), 1e-12);
      EXPECT_NEAR(n, oracle::naive_ndcg(v, k), 1e-12);
      EXPECT_NEAR(m, oracle::naive_mrr(v, k), 1e-12);
      EXPECT_GE(r, prev);
      EXPECT_LE(m, r);
      EXPECT_LE(n, r);
      prev = r;
    }
  }
}

TEST(Perplexity, PooledNotAveraged) {
  const double want = std::exp((std::log(2.0) + 2 * std::log(4.0)) / 3.0);
  EXPECT_NEAR(pooled_ppl({{std::log(0.5)}, {std::log(0.25), std::log(0.25)}}), want, 1e-12);
  EXPECT_THROW(pooled_ppl({{}, {}}), Error);
  EXPECT_THROW(pooled_ppl({}), Error);
}

TEST(Perplexity, UniformModelGivesVocabSize) {
  const auto w = testing::make_world(5, 2, 4, 1);
  const auto c = testing::micro_lm_config(w.tok);
  const LmModel flat = LmModel::from_params(c, std::vector<double>(LmLayout::make(c).total, 0.0));
  const std::vector<PplReference> refs{{{2, 3}, {4, 5, 6}}, {{7}, {1}}};
  const double v = static_cast<double>(w.tok.size());
  EXPECT_NEAR(corpus_ppl(flat, refs), v, 1e-9 * v);
}

TEST(Perplexity, CertainModelGivesOne) {
  const auto w = testing::make_world(5, 2, 4, 1);
  const auto c = testing::micro_lm_config(w.tok, 8);
  const LmLayout layout = LmLayout::make(c);
  std::vector<double> p(layout.total, 0.0);
  p[layout.lnf_b] = 1000.0;
  p[layout.wte + 5 * 8] = 1.0;
  const LmModel m = LmModel::from_params(c, p);
  EXPECT_EQ(corpus_ppl(m, {{{2}, {5, 5}}, {{3, 4}, {5}}}), 1.0);
}

TEST(Perplexity, MatchesIndependentPooling) {
  const auto w = testing::make_world(5, 2, 4, 2);
  const auto m = testing::random_lm(testing::micro_lm_config(w.tok), 0.5, 3);
  Rng rng(4);
  std::vector<PplReference> refs;
  double nll = 0.0, tokens = 0.0, mean_seq_ppl = 0.0;
  for (int i = 0; i < 6; ++i) {
    PplReference r;
    r.context = testing::random_context(w.tok, 3, rng);
    const std::size_t len = 1 + uniform_index(rng, 9);
    for (std::size_t t = 0; t < len; ++t) r.target.push_back(static_cast<int>(uniform_index(rng, w.tok.size())));
    const double lp = oracle::sequence_logprob(m, r.context, r.target);
    nll -= lp;
    tokens += static_cast<double>(len);
    mean_seq_ppl += std::exp(-lp / static_cast<double>(len)) / 6.0;
    refs.push_back(r);
  }
  const double got = corpus_ppl(m, refs);
  EXPECT_LT(oracle::rel_error(got, std::exp(nll / tokens)), 1e-6);
  EXPECT_GT(std::abs(got - mean_seq_ppl), 1e-6);
  EXPECT_GE(got, 1.0);
  EXPECT_THROW(corpus_ppl(m, {}), Error);
  EXPECT_THROW(corpus_ppl(m, {{{2}, {}}}), Error);
}

TEST(Bleu, IdentityIsHundred) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TokenSeq> corpus;
    for (std::size_t i = 0; i < 1 + uniform_index(rng, 5); ++i) {
      TokenSeq s;
      for (std::size_t j = 0; j < 4 + uniform_index(rng, 10); ++j) s.push_back("w" + std::to_string(uniform_index(rng, 6)));
      corpus.push_back(s);
    }
    EXPECT_NEAR(bleu(corpus, corpus), 100.0, 1e-9);
  }
}

TEST(Bleu, BrevityPenalty) {
  EXPECT_NEAR(bleu({words("a b c d")}, {words("a b c d e f")}), 100.0 * std::exp(1.0 - 6.0 / 4.0), 1e-9);
}

TEST(Bleu, ZeroOrderGivesZero) { EXPECT_EQ(bleu({words("a b c")}, {words("a b d")}), 0.0); }

TEST(Bleu, HandComputed) {
  // p = 4/5, 3/4, 2/3, 1/2 with equal lengths.
  EXPECT_NEAR(bleu({words("a b c d e")}, {words("a b c d f")}), 100.0 * std::pow(0.2, 0.25), 1e-9);
  // Clipping: "a" counts once against a reference holding one "a".
  EXPECT_NEAR(bleu({words("a a a")}, {words("a b c")}, 1), 100.0 / 3.0, 1e-9);
  // Corpus pooling: p1 = 3/4, p2 = 1/2, not the mean of per-pair scores.
  EXPECT_NEAR(bleu({words("a b"), words("c d")}, {words("a b"), words("c e")}, 2), 100.0 * std::sqrt(3.0 / 8.0), 1e-9);
}

TEST(Bleu, Errors) {
  EXPECT_THROW(bleu({}, {}), Error);
  EXPECT_THROW(bleu({words("a")}, {}), Error);
}

TEST(Distinct, Cases) {
  EXPECT_NEAR(distinct_n({words("a b a")}, 1), 2.0 / 3.0, 1e-12);
  EXPECT_EQ(distinct_n({words("a b c"), words("d e")}, 1), 1.0);
  EXPECT_EQ(ngram_total({words("a b c"), words("d")}, 2), 2u);
  EXPECT_THROW(distinct_n({words("a")}, 2), Error);
  EXPECT_THROW(distinct_n({}, 1), Error);
  EXPECT_THROW(distinct_n({words("a")}, 0), Error);
}

TEST(Distinct, MatchesSetRecount) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TokenSeq> corpus;
    for (std::size_t i = 0; i < 1 + uniform_index(rng, 6); ++i) {
      TokenSeq s;
      for (std::size_t j = 0; j < 4 + uniform_index(rng, 8); ++j) s.push_back("w" + std::to_string(uniform_index(rng, 5)));
      corpus.push_back(s);
    }
    for (int n = 1; n <= 4; ++n) {
      const double d = distinct_n(corpus, n);
      EXPECT_NEAR(d, oracle::naive_distinct(corpus, n), 1e-12);
      EXPECT_GT(d, 0.0);
      EXPECT_LE(d, 1.0);
    }
  }
}

TEST(MetricReport, JsonRoundTrip) {
  MetricReport r;
  r.values = {{"recall@1", 0.5}, {"ppl", 12.25}};
  r.counts = {{"rec_instances", 4}};
  r.runs = {r.values};
  const auto back = MetricReport::from_json(r.to_json());
  EXPECT_EQ(back.values, r.values);
  EXPECT_EQ(back.counts, r.counts);
  EXPECT_EQ(back.runs, r.runs);
  EXPECT_EQ(back.get("ppl"), 12.25);
  EXPECT_FALSE(back.get("bleu"));
}

TEST(ReplaceSegments, OneTokenPerSegment) {
  const auto w = testing::make_world(3, 2, 4, 1);
  const auto& t = w.tok;
  const int boi = t.id(Special::kBoi), eoi = t.id(Special::kEoi), movie = t.id(Special::kMovie);
  const std::vector<int> in{5, boi, t.sid_id(0, 1), t.sid_id(1, 2), eoi, 6, boi, t.sid_id(0, 0), t.sid_id(1, 0), eoi};
  EXPECT_EQ(replace_segments(in, t), (std::vector<int>{5, movie, 6, movie}));
  EXPECT_EQ(replace_segments(std::vector<int>{5, 6}, t), (std::vector<int>{5, 6}));
}

struct GoldenEval {
  PreparedCorpus corpus;
  SidTable sids;
  LmModel model;
};

GoldenEval golden_eval(SampleFormat format, std::uint64_t seed = 7) {
  auto corpus = testing::golden_corpus(GENCRS_GOLDEN_DIR, format);
  auto sids = testing::golden_sids(GENCRS_GOLDEN_DIR);
  auto model = testing::random_lm(testing::micro_lm_config(corpus.tokenizer, 16, 1, 2, 256), 0.5, seed);
  return {std::move(corpus), std::move(sids), std::move(model)};
}

TEST(EvalProtocol, RecallMatchesDirectBeamRecount) {
  const auto g = golden_eval(SampleFormat::kFull);
  const StructuredDecoder d(g.model, g.corpus.tokenizer, g.sids);
  EvalOptions o;
  o.beam_width = 3;
  o.recall_ks = {1, 3};
  o.rank_ks = {3};
  const auto r = eval_protocol(d, g.corpus.train, SampleFormat::kFull, o);
  std::vector<RecEvalInstance> v;
  std::set<int> seen;
  for (const auto& s : g.corpus.train) {
    if (s.items.empty() || !seen.insert(s.turn_index).second) continue;
    std::vector<std::string> ranked;
    for (const auto& e : d.recommend_topk(s.context_tokens, 3, 3).entries) ranked.push_back(e.item_id);
    for (const auto& item : s.items) v.push_back({s.context_tokens, item, ranked});
  }
  ASSERT_FALSE(v.empty());
  EXPECT_EQ(r.counts.at("rec_instances"), static_cast<long long>(v.size()));
  EXPECT_NEAR(*r.get("recall@1"), oracle::naive_recall(v, 1), 1e-12);
  EXPECT_NEAR(*r.get("recall@3"), oracle::naive_recall(v, 3), 1e-12);
  EXPECT_NEAR(*r.get("mrr@3"), oracle::naive_mrr(v, 3), 1e-12);
  for (const char* key : {"bleu", "ppl", "mode_accuracy", "distinct@1"}) EXPECT_TRUE(r.get(key)) << key;
}

TEST(EvalProtocol, NoRecTurnsLeavesRecMetricsOut) {
  const auto g = golden_eval(SampleFormat::kFull);
  std::vector<StructuredSample> chat;
  for (const auto& s : g.corpus.train)
    if (s.items.empty()) chat.push_back(s);
  ASSERT_FALSE(chat.empty());
  const StructuredDecoder d(g.model, g.corpus.tokenizer, g.sids);
  EvalOptions o;
  o.beam_width = 3;
  const auto r = eval_protocol(d, chat, SampleFormat::kFull, o);
  EXPECT_FALSE(r.get("recall@1"));
  EXPECT_FALSE(r.get("ndcg@5"));
  EXPECT_TRUE(r.get("bleu"));
  EXPECT_TRUE(r.get("ppl"));
}

TEST(EvalProtocol, DeterministicAndAveragedOverRuns) {
  for (auto format : {SampleFormat::kFull, SampleFormat::kResp, SampleFormat::kModeResp, SampleFormat::kSidOnly}) {
    const auto g = golden_eval(format);
    const StructuredDecoder d(g.model, g.corpus.tokenizer, g.sids);
    EvalOptions o;
    o.beam_width = 3;
    o.runs = 3;
    const auto a = eval_protocol(d, g.corpus.train, format, o);
    const auto b = eval_protocol(d, g.corpus.train, format, o);
    EXPECT_EQ(a.to_json(), b.to_json());
    ASSERT_EQ(a.runs.size(), 3u);
    for (const auto& [k, v] : a.values) EXPECT_DOUBLE_EQ(v, a.runs[0].at(k)) << k;
    for (const auto& [k, v] : a.values) {
      if (k == "ppl") {
        EXPECT_GE(v, 1.0);
      } else if (k == "bleu") {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 100.0);
      } else {
        EXPECT_GE(v, 0.0) << k;
        EXPECT_LE(v, 1.0) << k;
      }
    }
  }
}

TEST(EvalProtocol, Errors) {
  const auto g = golden_eval(SampleFormat::kFull);
  const StructuredDecoder d(g.model, g.corpus.tokenizer, g.sids);
  EXPECT_THROW(eval_protocol(d, g.corpus.train, SampleFormat::kResp), Error);
  EvalOptions o;
  o.runs = 0;
  EXPECT_THROW(eval_protocol(d, g.corpus.train, SampleFormat::kFull, o), Error);
}

}  // namespace
}  // namespace gencrs

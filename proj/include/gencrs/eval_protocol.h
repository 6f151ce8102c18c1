#pragma once

#include <span>
#include <vector>

#include "gencrs/corpus.h"
#include "gencrs/decoder.h"
#include "gencrs/metrics.h"

namespace gencrs {

struct EvalOptions {
  int beam_width = 50;
  int runs = 1;
  int max_text_tokens = 48;
  // Substitute <movie> for item segments in perplexity references too.
  bool ppl_movie = true;
  // Lets generated text carry trie-constrained item segments.
  bool inline_items = true;
  std::vector<int> recall_ks{1, 5, 10, 20};
  std::vector<int> rank_ks{5, 10, 20};  // ndcg and mrr
};

// Every <BOI> ... <EOI> span becomes a single <movie> token.
std::vector<int> replace_segments(std::span<const int> tokens, const Tokenizer& tok);

// Test samples must come from one prepared corpus of the given format.
MetricReport eval_protocol(const StructuredDecoder& decoder, const std::vector<StructuredSample>& test,
                           SampleFormat format, const EvalOptions& opts = {});

}  // namespace gencrs

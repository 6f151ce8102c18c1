#include "gencrs/eval_protocol.h"

#include <algorithm>
#include <set>

namespace gencrs {

std::vector<int> replace_segments(std::span<const int> tokens, const Tokenizer& tok) {
  const int boi = tok.id(Special::kBoi), eoi = tok.id(Special::kEoi), movie = tok.id(Special::kMovie);
  std::vector<int> out;
  bool inside = false;
  for (int t : tokens) {
    if (inside) {
      if (t == eoi) inside = false;
      continue;
    }
    if (t == boi) {
      inside = true;
      out.push_back(movie);
      continue;
    }
    out.push_back(t);
  }
  return out;
}

namespace {

// First sample of every (dialog, turn) in input order.
std::vector<const StructuredSample*> distinct_turns(const std::vector<StructuredSample>& test) {
  std::set<std::pair<std::string, int>> seen;
  std::vector<const StructuredSample*> out;
  for (const auto& s : test) {
    if (seen.insert({s.dialog_id, s.turn_index}).second) out.push_back(&s);
  }
  return out;
}

TokenSeq to_strings(std::span<const int> ids, const Tokenizer& tok) {
  TokenSeq out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(tok.token(id));
  return out;
}

RecRequest rec_request(SampleFormat format, const Tokenizer& tok, int max_text_tokens) {
  RecRequest req;
  req.max_text_tokens = max_text_tokens;
  switch (format) {
    case SampleFormat::kFull:
      req.forced_prefix = {tok.id(Special::kModeRec), tok.id(Special::kBoi)};
      break;
    case SampleFormat::kModeResp:
      req.forced_prefix = {tok.id(Special::kModeRec), tok.id(Special::kResp)};
      req.free_text_until_item = true;
      break;
    case SampleFormat::kResp:
      req.free_text_until_item = true;
      break;
    case SampleFormat::kSidOnly:
      req.forced_prefix = {tok.id(Special::kBoi)};
      break;
  }
  return req;
}

std::map<std::string, double> run_once(const StructuredDecoder& dec, const std::vector<const StructuredSample*>& turns,
                                       SampleFormat format, const EvalOptions& opts,
                                       std::map<std::string, long long>& counts) {
  const Tokenizer& tok = dec.tokenizer();
  std::map<std::string, double> m;

  // Recommendation: one instance per ground-truth item, one beam per turn.
  int max_k = 0;
  for (int k : opts.recall_ks) max_k = std::max(max_k, k);
  for (int k : opts.rank_ks) max_k = std::max(max_k, k);
  max_k = std::min(max_k, opts.beam_width);
  const RecRequest req = rec_request(format, tok, opts.max_text_tokens);
  std::vector<RecEvalInstance> instances;
  long long misses = 0;
  for (const StructuredSample* s : turns) {
    if (s->items.empty()) continue;
    const RecList list = dec.recommend(s->context_tokens, req, opts.beam_width, max_k);
    if (list.entries.empty()) ++misses;
    std::vector<std::string> ranked;
    for (const auto& e : list.entries) ranked.push_back(e.item_id);
    for (const auto& item : s->items) instances.push_back({s->context_tokens, item, ranked});
  }
  counts["rec_instances"] = static_cast<long long>(instances.size());
  counts["rec_no_item"] = misses;
  if (!instances.empty()) {
    for (int k : opts.recall_ks) {
      if (k <= max_k) m["recall@" + std::to_string(k)] = recall_at_k(instances, k);
    }
    for (int k : opts.rank_ks) {
      if (k > max_k) continue;
      m["ndcg@" + std::to_string(k)] = ndcg_at_k(instances, k);
      m["mrr@" + std::to_string(k)] = mrr_at_k(instances, k);
    }
  }

  if (format == SampleFormat::kFull || format == SampleFormat::kModeResp) {
    long long correct = 0;
    for (const StructuredSample* s : turns) correct += dec.predict_mode(s->context_tokens) == s->mode;
    counts["mode_instances"] = static_cast<long long>(turns.size());
    if (!turns.empty()) m["mode_accuracy"] = static_cast<double>(correct) / static_cast<double>(turns.size());
  }

  if (format == SampleFormat::kSidOnly) return m;

  // Dialog quality: ground-truth mode forced, item segments scored as <movie>.
  const int resp = tok.id(Special::kResp);
  std::vector<TokenSeq> cands, refs;
  std::vector<PplReference> ppl_refs;
  long long ppl_tokens = 0;
  for (const StructuredSample* s : turns) {
    GenerateOptions g;
    g.mode_override = s->mode;
    g.layout = format;
    g.max_text_tokens = opts.max_text_tokens;
    g.inline_items = opts.inline_items;
    const Generation gen = dec.generate(s->context_tokens, g);
    cands.push_back(to_strings(replace_segments(gen.text_tokens, tok), tok));

    const auto& tgt = s->target_tokens;
    std::size_t start = 0;
    if (format != SampleFormat::kResp) {
      const auto it = std::find(tgt.begin(), tgt.end(), resp);
      start = it == tgt.end() ? 0 : static_cast<std::size_t>(it - tgt.begin()) + 1;
    }
    std::vector<int> text(tgt.begin() + static_cast<std::ptrdiff_t>(start), tgt.end());
    PplReference pr;
    pr.context = s->context_tokens;
    pr.context.insert(pr.context.end(), tgt.begin(), tgt.begin() + static_cast<std::ptrdiff_t>(start));
    pr.target = opts.ppl_movie ? replace_segments(text, tok) : text;
    ppl_tokens += static_cast<long long>(pr.target.size());
    ppl_refs.push_back(std::move(pr));

    if (!text.empty() && text.back() == Tokenizer::kEos) text.pop_back();
    refs.push_back(to_strings(replace_segments(text, tok), tok));
  }
  counts["dialog_instances"] = static_cast<long long>(cands.size());
  counts["ppl_tokens"] = ppl_tokens;
  if (cands.empty()) return m;
  m["bleu"] = bleu(cands, refs);
  for (int n = 1; n <= 4; ++n) {
    if (ngram_total(cands, n) > 0) m["distinct@" + std::to_string(n)] = distinct_n(cands, n);
  }
  if (ppl_tokens > 0) m["ppl"] = corpus_ppl(dec.model(), ppl_refs);
  return m;
}

}  // namespace

MetricReport eval_protocol(const StructuredDecoder& decoder, const std::vector<StructuredSample>& test,
                           SampleFormat format, const EvalOptions& opts) {
  if (opts.runs < 1) throw Error(ErrorCode::kInvalidArgument, "eval: runs must be >= 1");
  for (const auto& s : test) {
    if (s.format != format) throw Error(ErrorCode::kMismatch, "eval: sample format differs from corpus format");
  }
  const auto turns = distinct_turns(test);
  MetricReport report;
  for (int r = 0; r < opts.runs; ++r) {
    std::map<std::string, long long> counts;
    report.runs.push_back(run_once(decoder, turns, format, opts, counts));
    if (r == 0) report.counts = counts;
  }
  for (const auto& [name, v] : report.runs.front()) {
    double s = 0.0;
    for (const auto& run : report.runs) s += run.at(name);
    report.values[name] = s / static_cast<double>(report.runs.size());
  }
  return report;
}

}  // namespace gencrs

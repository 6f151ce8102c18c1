#include "gencrs/decoder.h"

#include <algorithm>

namespace gencrs {

StructuredDecoder::StructuredDecoder(const LmModel& model, const Tokenizer& tok, const SidTable& sids)
    : model_(&model), tok_(&tok), sids_(&sids), trie_(build_trie(sids.codes_by_item(), sids.vocab.levels())) {
  if (model.config().vocab_size != tok.size()) {
    throw Error(ErrorCode::kMismatch, "decoder: model vocabulary (" + std::to_string(model.config().vocab_size) +
                                          ") does not match tokenizer (" + std::to_string(tok.size()) + ")");
  }
  if (!(tok.sids() == sids.vocab)) throw Error(ErrorCode::kMismatch, "decoder: tokenizer and SID table disagree on L/K");
}

std::vector<int> StructuredDecoder::phase_mask(const GenState& state) const {
  const Tokenizer& tok = *tok_;
  switch (state.phase) {
    case Phase::kMode: {
      std::vector<int> ids{tok.id(Special::kModeRec), tok.id(Special::kModeChat)};
      std::sort(ids.begin(), ids.end());
      return ids;
    }
    case Phase::kItemOpen:
      return {tok.id(Special::kBoi)};
    case Phase::kItem: {
      if (state.level >= trie_.levels()) return {tok.id(Special::kEoi)};
      std::vector<int> ids;
      for (int code : trie_.allowed_next(state.prefix)) ids.push_back(tok.sid_id(state.level, code));
      return ids;
    }
    case Phase::kRespMark:
      return {tok.id(Special::kResp)};
    case Phase::kText: {
      std::vector<int> ids;
      for (int id = 0; id < tok.base_size(); ++id) {
        if (id != Tokenizer::kUnk) ids.push_back(id);
      }
      if (state.inline_items) ids.push_back(tok.id(Special::kBoi));
      return ids;
    }
  }
  return {};
}

namespace {

// Highest score among allowed ids; lowest id on ties.
int argmax_masked(const std::vector<double>& logits, const std::vector<int>& allowed) {
  int best = allowed.front();
  for (int id : allowed) {
    if (logits[id] > logits[best]) best = id;
  }
  return best;
}

}  // namespace

std::vector<int> StructuredDecoder::fit_context(const std::vector<int>& context, int reserve) const {
  const int budget = model_->config().context_len - reserve;
  if (budget < 1 || context.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "context does not fit: context_len " +
                                                 std::to_string(model_->config().context_len) + ", reserved " +
                                                 std::to_string(reserve));
  }
  if (static_cast<int>(context.size()) <= budget) return context;
  return {context.end() - budget, context.end()};
}

Mode StructuredDecoder::predict_mode(const std::vector<int>& context) const {
  LmState state(*model_);
  const auto& logits = state.feed(fit_context(context, 1));
  return argmax_masked(logits, phase_mask(GenState{})) == tok_->id(Special::kModeRec) ? Mode::kRec : Mode::kChat;
}

Generation StructuredDecoder::generate(const std::vector<int>& context, const GenerateOptions& opts) const {
  const Tokenizer& tok = *tok_;
  const int levels = trie_.levels();
  const int context_len = model_->config().context_len;
  if (trie_.empty()) throw Error(ErrorCode::kInvalidArgument, "generate: empty item trie");

  if (opts.layout == SampleFormat::kSidOnly) throw Error(ErrorCode::kInvalidArgument, "generate: sid-only has no text");
  const bool full = opts.layout == SampleFormat::kFull;
  const bool marks = opts.layout != SampleFormat::kResp;
  const bool allow_inline = opts.inline_items || !full;

  std::optional<Codes> forced_item;
  if (opts.item_override) {
    if (!full) throw Error(ErrorCode::kInvalidArgument, "generate: item override needs the full layout");
    const auto pos = sids_->find(*opts.item_override);
    if (!pos) throw Error(ErrorCode::kNotFound, "item override \"" + *opts.item_override + "\" is not in the catalog");
    forced_item = sids_->entries[*pos].codes;
  }

  const int structural = levels + 4;  // mode, <BOI>, L ids, <EOI>, <RESP>
  const int reserve = std::min(structural + std::max(opts.max_text_tokens, 0), context_len - 1);
  if (reserve < structural) throw Error(ErrorCode::kInvalidArgument, "generate: context_len too small");
  const std::vector<int> ctx = fit_context(context, reserve);

  LmState state(*model_);
  const std::vector<double>* logits = &state.feed(ctx);
  Generation g;
  auto emit = [&](int id) {
    g.tokens.push_back(id);
    logits = &state.step(id);
  };
  auto room = [&] { return context_len - state.length(); };

  // Emits <BOI> ids <EOI>; forced codes bypass the model.
  auto item_segment = [&](const std::optional<Codes>& forced) {
    GenState s;
    s.phase = Phase::kItem;
    emit(tok.id(Special::kBoi));
    for (int l = 0; l < levels; ++l) {
      s.level = l;
      int id;
      if (forced) {
        id = tok.sid_id(l, (*forced)[l]);
      } else {
        id = argmax_masked(*logits, phase_mask(s));
      }
      s.prefix.push_back(tok.sid_of(id)->second);
      emit(id);
    }
    emit(tok.id(Special::kEoi));
    const auto pos = trie_.lookup(s.prefix);
    if (!pos) throw Error(ErrorCode::kNotFound, "generate: item segment left the trie");  // unreachable by masking
    g.emitted_items.push_back(*pos);
    return *pos;
  };

  if (marks) {
    if (forced_item) {
      g.mode = Mode::kRec;
    } else if (opts.mode_override) {
      g.mode = *opts.mode_override;
    } else {
      const int id = argmax_masked(*logits, phase_mask(GenState{}));
      g.mode = id == tok.id(Special::kModeRec) ? Mode::kRec : Mode::kChat;
    }
    emit(tok.id(g.mode == Mode::kRec ? Special::kModeRec : Special::kModeChat));
    if (full && g.mode == Mode::kRec) {
      const std::size_t pos = item_segment(forced_item);
      g.item_pos = pos;
      g.item_id = sids_->entries[pos].item_id;
    }
    emit(tok.id(Special::kResp));
  }

  GenState text;
  text.phase = Phase::kText;
  const auto plain_mask = phase_mask(text);
  text.inline_items = true;
  const auto inline_mask = phase_mask(text);
  int produced = 0;
  while (produced < opts.max_text_tokens && room() > 0) {
    // An inline item needs room for the whole segment plus one more step.
    const bool can_inline = allow_inline && room() > levels + 2 &&
                            produced + levels + 2 <= opts.max_text_tokens;
    const int id = argmax_masked(*logits, can_inline ? inline_mask : plain_mask);
    if (id == Tokenizer::kEos) {
      g.tokens.push_back(id);
      break;
    }
    if (id == tok.id(Special::kBoi)) {
      const std::size_t before = g.tokens.size();
      item_segment(std::nullopt);
      g.text_tokens.insert(g.text_tokens.end(), g.tokens.begin() + static_cast<std::ptrdiff_t>(before), g.tokens.end());
      produced += levels + 2;
      continue;
    }
    g.text_tokens.push_back(id);
    ++produced;
    if (room() == 0) {
      g.tokens.push_back(id);
      break;
    }
    emit(id);
  }
  if (!marks) g.mode = g.emitted_items.empty() ? Mode::kChat : Mode::kRec;
  if (!full && !g.emitted_items.empty()) {
    g.item_pos = g.emitted_items.front();
    g.item_id = sids_->entries[*g.item_pos].item_id;
  }
  return g;
}

RecList StructuredDecoder::recommend_topk(const std::vector<int>& context, int beam_width, int k) const {
  RecRequest req;
  req.forced_prefix = {tok_->id(Special::kModeRec), tok_->id(Special::kBoi)};
  return recommend(context, req, beam_width, k);
}

RecList StructuredDecoder::recommend(const std::vector<int>& context, const RecRequest& req, int beam_width,
                                     int k) const {
  if (trie_.empty()) throw Error(ErrorCode::kInvalidArgument, "recommend: empty item trie");
  if (k < 1 || beam_width < 1 || k > beam_width) {
    throw Error(ErrorCode::kInvalidArgument, "recommend: need 1 <= k <= beam_width, got k=" + std::to_string(k) +
                                                 ", beam_width=" + std::to_string(beam_width));
  }
  const int levels = trie_.levels();
  const int text_budget = req.free_text_until_item ? std::max(req.max_text_tokens, 0) : 0;
  const int reserve = static_cast<int>(req.forced_prefix.size()) + text_budget + levels + 1;
  const std::vector<int> ctx = fit_context(context, reserve);

  LmState state(*model_);
  state.feed(ctx);
  for (int id : req.forced_prefix) state.step(id);

  if (req.free_text_until_item) {
    GenState text;
    text.phase = Phase::kText;
    text.inline_items = true;
    const auto mask = phase_mask(text);
    bool opened = false;
    for (int i = 0; i < text_budget; ++i) {
      const int id = argmax_masked(state.last_logits(), mask);
      if (id == Tokenizer::kEos) break;
      state.step(id);
      if (id == tok_->id(Special::kBoi)) {
        opened = true;
        break;
      }
    }
    if (!opened) {
      RecList empty;
      empty.warnings.push_back("recommend: the model produced no item segment");
      return empty;
    }
  } else if (req.forced_prefix.empty() || req.forced_prefix.back() != tok_->id(Special::kBoi)) {
    throw Error(ErrorCode::kInvalidArgument, "recommend: forced prefix must end with <BOI>");
  }
  return beam_search(state, beam_width, k);
}

RecList StructuredDecoder::beam_search(const LmState& after_boi, int beam_width, int k) const {
  struct Hyp {
    LmState state;
    Codes codes;
    double score;
  };
  struct Cand {
    std::size_t parent;
    Codes codes;
    double score;
  };
  auto better = [](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.codes < b.codes;
  };

  const int levels = trie_.levels();
  std::vector<Hyp> beams;
  beams.push_back({after_boi, {}, 0.0});
  std::vector<Cand> cands;
  for (int l = 0; l < levels; ++l) {
    cands.clear();
    for (std::size_t b = 0; b < beams.size(); ++b) {
      const auto lsm = log_softmax(beams[b].state.last_logits());
      for (int code : trie_.allowed_next(beams[b].codes)) {
        Codes codes = beams[b].codes;
        codes.push_back(code);
        cands.push_back({b, std::move(codes), beams[b].score + lsm[tok_->sid_id(l, code)]});
      }
    }
    std::sort(cands.begin(), cands.end(), better);
    if (static_cast<int>(cands.size()) > beam_width) cands.resize(static_cast<std::size_t>(beam_width));
    if (l + 1 == levels) break;
    std::vector<Hyp> next;
    next.reserve(cands.size());
    for (auto& c : cands) {
      LmState s = beams[c.parent].state;
      s.step(tok_->sid_id(l, c.codes.back()));
      next.push_back({std::move(s), std::move(c.codes), c.score});
    }
    beams = std::move(next);
  }

  RecList out;
  for (const auto& c : cands) {
    if (static_cast<int>(out.entries.size()) == k) break;
    const auto pos = trie_.lookup(c.codes);
    out.entries.push_back({*pos, sids_->entries[*pos].item_id, c.codes, c.score});
  }
  if (static_cast<int>(out.entries.size()) < k) {
    out.warnings.push_back("recommend: only " + std::to_string(out.entries.size()) + " candidates for k=" +
                           std::to_string(k));
  }
  return out;
}

}  // namespace gencrs

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gencrs/corpus.h"
#include "gencrs/sid.h"
#include "gencrs/toylm.h"

namespace gencrs {

enum class Phase {
  kMode,      // <MODE=REC> or <MODE=CHAT>
  kItemOpen,  // <BOI>
  kItem,      // semantic-ID token of `level`, or <EOI> once level == L
  kRespMark,  // <RESP>
  kText,      // base tokens and <eos>; <BOI> only when inline items are enabled
};

struct GenState {
  Phase phase = Phase::kMode;
  int level = 0;
  Codes prefix;
  bool inline_items = false;
  // Whether the current item segment is inline in the text (returns to kText).
  bool in_text_item = false;
};

struct RecEntry {
  std::size_t item_pos = 0;
  std::string item_id;
  Codes codes;
  double score = 0.0;
};

struct RecList {
  std::vector<RecEntry> entries;
  std::vector<std::string> warnings;
};

struct GenerateOptions {
  std::optional<Mode> mode_override;
  // Catalog item id; implies REC and forces the whole item segment.
  std::optional<std::string> item_override;
  int max_text_tokens = 48;
  bool inline_items = false;
  // kModeResp skips the leading item segment and kResp also skips the mode and
  // <RESP> marks; both allow inline items. kSidOnly is rejected.
  SampleFormat layout = SampleFormat::kFull;
};

struct Generation {
  Mode mode = Mode::kChat;
  std::optional<std::size_t> item_pos;
  std::optional<std::string> item_id;
  // Everything after <RESP> up to (not including) <eos>.
  std::vector<int> text_tokens;
  // Every emitted token, structural ones included.
  std::vector<int> tokens;
  // Catalog positions of every item segment emitted (leading and inline).
  std::vector<std::size_t> emitted_items;
};

// How recommend() reaches the first item segment.
struct RecRequest {
  std::vector<int> forced_prefix;
  // Greedy text until the model opens an item; used for formats without an item slot.
  bool free_text_until_item = false;
  int max_text_tokens = 48;
};

class StructuredDecoder {
 public:
  StructuredDecoder(const LmModel& model, const Tokenizer& tok, const SidTable& sids);

  const LmModel& model() const { return *model_; }
  const SidTrie& trie() const { return trie_; }
  const Tokenizer& tokenizer() const { return *tok_; }
  const SidTable& sids() const { return *sids_; }

  // Token ids legal in this state, ascending.
  std::vector<int> phase_mask(const GenState& state) const;

  // Greedy choice between the two mode tokens after the context.
  Mode predict_mode(const std::vector<int>& context) const;

  Generation generate(const std::vector<int>& context, const GenerateOptions& opts = {}) const;

  // Forces <MODE=REC><BOI>, then a constrained beam over the L ID positions.
  RecList recommend_topk(const std::vector<int>& context, int beam_width, int k) const;
  RecList recommend(const std::vector<int>& context, const RecRequest& req, int beam_width, int k) const;

 private:
  // Beam over L levels starting from a state whose last input was <BOI>.
  RecList beam_search(const LmState& after_boi, int beam_width, int k) const;
  std::vector<int> fit_context(const std::vector<int>& context, int reserve) const;

  const LmModel* model_;
  const Tokenizer* tok_;
  const SidTable* sids_;
  SidTrie trie_;
};

}  // namespace gencrs

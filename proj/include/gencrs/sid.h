#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gencrs/catalog.h"
#include "gencrs/collision.h"
#include "gencrs/common.h"

namespace gencrs {

inline constexpr std::string_view kBoi = "<BOI>";
inline constexpr std::string_view kEoi = "<EOI>";
inline constexpr std::string_view kResp = "<RESP>";
inline constexpr std::string_view kModeRec = "<MODE=REC>";
inline constexpr std::string_view kModeChat = "<MODE=CHAT>";
inline constexpr std::string_view kMovie = "<movie>";

enum class Special { kBoi, kEoi, kResp, kModeRec, kModeChat, kMovie };
inline constexpr int kNumSpecials = 6;

// The block of newly introduced tokens: L*K semantic-ID tokens (level-major),
// followed by the structural specials. Local ids start at 0; a tokenizer places
// the block after its base vocabulary.
class SidVocabulary {
 public:
  SidVocabulary() = default;
  SidVocabulary(int levels, int codebook_size);

  int levels() const { return levels_; }
  int codebook_size() const { return codebook_size_; }
  int block_size() const { return levels_ * codebook_size_ + kNumSpecials; }

  const std::string& level_prefix(int level) const { return prefixes_.at(level); }
  // Local index within the block.
  int sid_index(int level, int code) const { return level * codebook_size_ + code; }
  int special_index(Special s) const { return levels_ * codebook_size_ + static_cast<int>(s); }

  std::string sid_token(int level, int code) const;
  std::vector<std::string> block_tokens() const;

  // Parses "<p_k>" into (level, code); nullopt for anything else.
  std::optional<std::pair<int, int>> parse_sid_token(std::string_view token) const;

  // Inverse of block_tokens(); throws kParse when the list is not a valid block.
  static SidVocabulary from_block_tokens(const std::vector<std::string>& tokens);

  bool operator==(const SidVocabulary&) const = default;

 private:
  int levels_ = 0;
  int codebook_size_ = 0;
  std::vector<std::string> prefixes_;
};

std::string special_token(Special s);

// "<a_17><b_63><c_0><d_25>" for codes (17, 63, 0, 25).
std::string render_tokens(const Codes& codes, const SidVocabulary& vocab);
Codes parse_tokens(std::string_view s, const SidVocabulary& vocab);

class SidTrie {
 public:
  static constexpr int kNoItem = -1;

  int levels() const { return levels_; }
  std::size_t leaf_count() const { return leaves_; }
  bool empty() const { return leaves_ == 0; }

  // Sorted child codes of the node reached by prefix; throws kNotFound when the
  // prefix is not a path in the trie.
  std::vector<int> allowed_next(const Codes& prefix) const;
  bool contains_prefix(const Codes& prefix) const;
  // Catalog position of the leaf reached by a full-length code sequence.
  std::optional<std::size_t> lookup(const Codes& codes) const;
  const std::vector<Codes>& ids() const { return ids_; }

  friend SidTrie build_trie(const IdAssignment& assignment, const Catalog& catalog);
  friend SidTrie build_trie(const std::vector<Codes>& codes_by_item, int levels);

 private:
  struct Node {
    std::map<int, int> children;
    int item = kNoItem;
  };
  std::optional<int> walk(const Codes& prefix) const;

  int levels_ = 0;
  std::size_t leaves_ = 0;
  std::vector<Node> nodes_{Node{}};
  std::vector<Codes> ids_;
};

SidTrie build_trie(const IdAssignment& assignment, const Catalog& catalog);
SidTrie build_trie(const std::vector<Codes>& codes_by_item, int levels);

// One row of the SID table file.
struct SidEntry {
  std::string item_id;
  Codes codes;
};

struct SidTable {
  SidVocabulary vocab;
  std::vector<SidEntry> entries;  // catalog order

  // Rebuilds the id lookup; call after editing entries.
  void reindex();
  std::optional<std::size_t> find(const std::string& item_id) const;
  // Throws kNotFound.
  const Codes& codes_of(const std::string& item_id) const;
  std::vector<Codes> codes_by_item() const;

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

SidTable make_sid_table(const SidVocabulary& vocab, const Catalog& catalog, const IdAssignment& assignment);

// Writes "<path>" (item_id \t codes \t tokens) and "<path>.vocab" (block tokens).
void save_sid_table(const SidTable& table, const std::string& path);
SidTable load_sid_table(const std::string& path);

std::vector<std::string> read_token_list(const std::string& path);
void write_token_list(const std::vector<std::string>& tokens, const std::string& path);

}  // namespace gencrs

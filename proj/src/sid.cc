#include "gencrs/sid.h"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace gencrs {

SidVocabulary::SidVocabulary(int levels, int codebook_size) : levels_(levels), codebook_size_(codebook_size) {
  if (levels < 1 || levels > 26) {
    throw Error(ErrorCode::kInvalidArgument, "SidVocabulary: levels must be in [1, 26], got " + std::to_string(levels));
  }
  if (codebook_size < 1) throw Error(ErrorCode::kInvalidArgument, "SidVocabulary: codebook_size must be >= 1");
  for (int l = 0; l < levels; ++l) prefixes_.emplace_back(1, static_cast<char>('a' + l));
}

std::string special_token(Special s) {
  switch (s) {
    case Special::kBoi: return std::string(kBoi);
    case Special::kEoi: return std::string(kEoi);
    case Special::kResp: return std::string(kResp);
    case Special::kModeRec: return std::string(kModeRec);
    case Special::kModeChat: return std::string(kModeChat);
    case Special::kMovie: return std::string(kMovie);
  }
  return {};
}

std::string SidVocabulary::sid_token(int level, int code) const {
  if (level < 0 || level >= levels_ || code < 0 || code >= codebook_size_) {
    throw Error(ErrorCode::kInvalidArgument, "sid token out of range: level " + std::to_string(level) + ", code " +
                                                 std::to_string(code));
  }
  return "<" + prefixes_[level] + "_" + std::to_string(code) + ">";
}

std::vector<std::string> SidVocabulary::block_tokens() const {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(block_size()));
  for (int l = 0; l < levels_; ++l)
    for (int k = 0; k < codebook_size_; ++k) out.push_back(sid_token(l, k));
  for (int s = 0; s < kNumSpecials; ++s) out.push_back(special_token(static_cast<Special>(s)));
  return out;
}

std::optional<std::pair<int, int>> SidVocabulary::parse_sid_token(std::string_view token) const {
  // "<" letter "_" digits ">"
  if (token.size() < 5 || token.front() != '<' || token.back() != '>' || token[2] != '_') return std::nullopt;
  const char letter = token[1];
  if (letter < 'a' || letter > 'z') return std::nullopt;
  const int level = letter - 'a';
  if (level >= levels_) return std::nullopt;
  auto digits = token.substr(3, token.size() - 4);
  if (digits.empty() || (digits.size() > 1 && digits[0] == '0')) return std::nullopt;
  int code = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), code);
  if (ec != std::errc{} || ptr != digits.data() + digits.size()) return std::nullopt;
  if (code < 0 || code >= codebook_size_) return std::nullopt;
  return std::pair{level, code};
}

SidVocabulary SidVocabulary::from_block_tokens(const std::vector<std::string>& tokens) {
  if (tokens.size() < static_cast<std::size_t>(kNumSpecials) + 1) {
    throw Error(ErrorCode::kParse, "sid vocabulary: too few tokens");
  }
  const std::size_t sid_count = tokens.size() - kNumSpecials;
  int levels = 0;
  for (std::size_t i = 0; i < sid_count; ++i) {
    const auto& t = tokens[i];
    if (t.size() < 3 || t[0] != '<' || t[1] < 'a' || t[1] > 'z')
      throw Error(ErrorCode::kParse, "sid vocabulary: bad token \"" + t + "\" at position " + std::to_string(i));
    levels = std::max(levels, t[1] - 'a' + 1);
  }
  if (sid_count % static_cast<std::size_t>(levels) != 0) throw Error(ErrorCode::kParse, "sid vocabulary: ragged levels");
  SidVocabulary v(levels, static_cast<int>(sid_count / levels));
  if (v.block_tokens() != tokens) throw Error(ErrorCode::kParse, "sid vocabulary: tokens are not a canonical block");
  return v;
}

std::string render_tokens(const Codes& codes, const SidVocabulary& vocab) {
  if (static_cast<int>(codes.size()) != vocab.levels()) {
    throw Error(ErrorCode::kInvalidArgument, "render_tokens: expected " + std::to_string(vocab.levels()) +
                                                 " codes, got " + std::to_string(codes.size()));
  }
  std::string out;
  for (int l = 0; l < vocab.levels(); ++l) out += vocab.sid_token(l, codes[l]);
  return out;
}

Codes parse_tokens(std::string_view s, const SidVocabulary& vocab) {
  Codes codes;
  std::size_t pos = 0;
  while (pos < s.size()) {
    if (s[pos] != '<') throw Error(ErrorCode::kParse, "parse_tokens: malformed token at offset " + std::to_string(pos));
    const auto close = s.find('>', pos);
    if (close == std::string_view::npos) throw Error(ErrorCode::kParse, "parse_tokens: unterminated token");
    const auto token = s.substr(pos, close - pos + 1);
    const auto parsed = vocab.parse_sid_token(token);
    if (!parsed) throw Error(ErrorCode::kParse, "parse_tokens: malformed token \"" + std::string(token) + "\"");
    if (parsed->first != static_cast<int>(codes.size())) {
      throw Error(ErrorCode::kParse, "parse_tokens: token \"" + std::string(token) + "\" out of level order");
    }
    codes.push_back(parsed->second);
    pos = close + 1;
  }
  if (static_cast<int>(codes.size()) != vocab.levels()) {
    throw Error(ErrorCode::kParse, "parse_tokens: expected " + std::to_string(vocab.levels()) + " tokens, got " +
                                       std::to_string(codes.size()));
  }
  return codes;
}

// ---------------------------------------------------------------------------
// Trie

SidTrie build_trie(const std::vector<Codes>& codes_by_item, int levels) {
  SidTrie t;
  t.levels_ = levels;
  t.ids_ = codes_by_item;
  for (std::size_t item = 0; item < codes_by_item.size(); ++item) {
    const auto& codes = codes_by_item[item];
    if (static_cast<int>(codes.size()) != levels) {
      throw Error(ErrorCode::kInvalidArgument, "build_trie: item " + std::to_string(item) + " has " +
                                                   std::to_string(codes.size()) + " codes, expected " +
                                                   std::to_string(levels));
    }
    int node = 0;
    for (int code : codes) {
      auto it = t.nodes_[node].children.find(code);
      if (it == t.nodes_[node].children.end()) {
        t.nodes_.push_back({});
        const int child = static_cast<int>(t.nodes_.size()) - 1;
        t.nodes_[node].children.emplace(code, child);
        node = child;
      } else {
        node = it->second;
      }
    }
    if (t.nodes_[node].item != SidTrie::kNoItem) {
      throw Error(ErrorCode::kDuplicate, "build_trie: items " + std::to_string(t.nodes_[node].item) + " and " +
                                             std::to_string(item) + " share an ID");
    }
    t.nodes_[node].item = static_cast<int>(item);
    ++t.leaves_;
  }
  return t;
}

SidTrie build_trie(const IdAssignment& assignment, const Catalog& catalog) {
  if (assignment.codes_by_item.size() != catalog.size()) {
    throw Error(ErrorCode::kMismatch, "build_trie: assignment covers " +
                                          std::to_string(assignment.codes_by_item.size()) + " items, catalog has " +
                                          std::to_string(catalog.size()));
  }
  const int levels = assignment.codes_by_item.empty() ? 0 : static_cast<int>(assignment.codes_by_item[0].size());
  return build_trie(assignment.codes_by_item, levels);
}

std::optional<int> SidTrie::walk(const Codes& prefix) const {
  int node = 0;
  for (int code : prefix) {
    auto it = nodes_[node].children.find(code);
    if (it == nodes_[node].children.end()) return std::nullopt;
    node = it->second;
  }
  return node;
}

std::vector<int> SidTrie::allowed_next(const Codes& prefix) const {
  auto node = walk(prefix);
  if (!node) throw Error(ErrorCode::kNotFound, "allowed_next: prefix is not in the trie");
  std::vector<int> out;
  out.reserve(nodes_[*node].children.size());
  for (const auto& [code, child] : nodes_[*node].children) out.push_back(code);
  return out;
}

bool SidTrie::contains_prefix(const Codes& prefix) const { return walk(prefix).has_value(); }

std::optional<std::size_t> SidTrie::lookup(const Codes& codes) const {
  if (static_cast<int>(codes.size()) != levels_) return std::nullopt;
  auto node = walk(codes);
  if (!node || nodes_[*node].item == kNoItem) return std::nullopt;
  return static_cast<std::size_t>(nodes_[*node].item);
}

// ---------------------------------------------------------------------------
// SID table

void SidTable::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!index_.emplace(entries[i].item_id, i).second)
      throw Error(ErrorCode::kDuplicate, "sid table: duplicate item \"" + entries[i].item_id + "\"");
  }
}

std::optional<std::size_t> SidTable::find(const std::string& item_id) const {
  auto it = index_.find(item_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const Codes& SidTable::codes_of(const std::string& item_id) const {
  auto pos = find(item_id);
  if (!pos) throw Error(ErrorCode::kNotFound, "no semantic ID for item \"" + item_id + "\"");
  return entries[*pos].codes;
}

std::vector<Codes> SidTable::codes_by_item() const {
  std::vector<Codes> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.codes);
  return out;
}

SidTable make_sid_table(const SidVocabulary& vocab, const Catalog& catalog, const IdAssignment& assignment) {
  if (assignment.codes_by_item.size() != catalog.size()) {
    throw Error(ErrorCode::kMismatch, "make_sid_table: assignment and catalog sizes differ");
  }
  SidTable t;
  t.vocab = vocab;
  for (std::size_t i = 0; i < catalog.size(); ++i) t.entries.push_back({catalog.at(i).item_id, assignment.codes_by_item[i]});
  t.reindex();
  return t;
}

void write_token_list(const std::vector<std::string>& tokens, const std::string& path) {
  std::string out;
  for (const auto& t : tokens) {
    out += t;
    out += '\n';
  }
  write_file(path, out);
}

std::vector<std::string> read_token_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return tokens;
}

void save_sid_table(const SidTable& table, const std::string& path) {
  std::string out;
  for (const auto& e : table.entries) {
    out += e.item_id;
    out += '\t';
    for (std::size_t i = 0; i < e.codes.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(e.codes[i]);
    }
    out += '\t';
    out += render_tokens(e.codes, table.vocab);
    out += '\n';
  }
  write_file(path, out);
  write_token_list(table.vocab.block_tokens(), path + ".vocab");
}

SidTable load_sid_table(const std::string& path) {
  SidTable t;
  t.vocab = SidVocabulary::from_block_tokens(read_token_list(path + ".vocab"));
  for (const auto& [line_no, text] : read_lines(path)) {
    const auto where = path + ":" + std::to_string(line_no);
    std::vector<std::string> fields;
    std::stringstream ss(text);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 3) throw Error(ErrorCode::kParse, where + ": expected 3 tab-separated fields");
    SidEntry e;
    e.item_id = fields[0];
    std::stringstream cs(fields[1]);
    std::string c;
    while (std::getline(cs, c, ',')) {
      int v = 0;
      auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc{} || ptr != c.data() + c.size()) throw Error(ErrorCode::kParse, where + ": bad code \"" + c + "\"");
      e.codes.push_back(v);
    }
    if (parse_tokens(fields[2], t.vocab) != e.codes) {
      throw Error(ErrorCode::kParse, where + ": rendered tokens disagree with codes");
    }
    t.entries.push_back(std::move(e));
  }
  t.reindex();
  return t;
}

}  // namespace gencrs

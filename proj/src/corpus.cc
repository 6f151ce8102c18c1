#include "gencrs/corpus.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include <json.hpp>

namespace gencrs {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Tokenizer

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::ispunct(u);
}

bool is_block_token(std::string_view t, const SidVocabulary& sids) {
  if (sids.levels() == 0) return false;
  for (int s = 0; s < kNumSpecials; ++s)
    if (t == special_token(static_cast<Special>(s))) return true;
  return sids.parse_sid_token(t).has_value();
}

std::vector<std::string> split_text(std::string_view text, const SidVocabulary& sids) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '<') {
      const auto close = text.find('>', i);
      if (close != std::string_view::npos) {
        const auto candidate = text.substr(i, close - i + 1);
        if (is_block_token(candidate, sids)) {
          flush();
          out.emplace_back(candidate);
          i = close;
          continue;
        }
      }
    }
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      word.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c);
    }
  }
  flush();
  return out;
}

}  // namespace

void Tokenizer::index() {
  ids_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw Error(ErrorCode::kDuplicate, "tokenizer: duplicate token \"" + tokens_[i] + "\"");
  }
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts, const SidVocabulary& sids) {
  std::set<std::string> words;
  for (const auto& t : texts) {
    for (auto& w : split_text(t, sids)) {
      if (!is_block_token(w, sids)) words.insert(std::move(w));
    }
  }
  words.erase("<unk>");
  words.erase("<eos>");
  Tokenizer tok;
  tok.sids_ = sids;
  tok.tokens_ = {"<unk>", "<eos>"};
  tok.tokens_.insert(tok.tokens_.end(), words.begin(), words.end());
  tok.base_size_ = static_cast<int>(tok.tokens_.size());
  for (auto& b : sids.block_tokens()) tok.tokens_.push_back(std::move(b));
  tok.index();
  return tok;
}

Tokenizer Tokenizer::from_tokens(const std::vector<std::string>& tokens) {
  // The block starts at the first semantic-ID token of level 0.
  std::size_t start = 0;
  while (start < tokens.size() && tokens[start] != "<a_0>") ++start;
  if (start == tokens.size() || start < 2 || tokens[0] != "<unk>" || tokens[1] != "<eos>") {
    throw Error(ErrorCode::kParse, "vocabulary: not a base + semantic-ID block token list");
  }
  Tokenizer tok;
  tok.sids_ = SidVocabulary::from_block_tokens(std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(start), tokens.end()));
  tok.tokens_ = tokens;
  tok.base_size_ = static_cast<int>(start);
  tok.index();
  return tok;
}

std::vector<std::string> Tokenizer::split(std::string_view text) const { return split_text(text, sids_); }

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  for (const auto& piece : split(text)) {
    auto it = ids_.find(piece);
    out.push_back(it == ids_.end() ? kUnk : it->second);
  }
  return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0 && !(is_block(ids[i]) && is_block(ids[i - 1]))) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

std::optional<int> Tokenizer::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::pair<int, int>> Tokenizer::sid_of(int id) const {
  const int local = id - base_size_;
  if (local < 0 || local >= sids_.levels() * sids_.codebook_size()) return std::nullopt;
  return std::pair{local / sids_.codebook_size(), local % sids_.codebook_size()};
}

std::uint64_t Tokenizer::fingerprint() const {
  std::uint64_t h = fnv1a64("");
  for (const auto& t : tokens_) {
    h = fnv1a64(t, h);
    h = fnv1a64("\n", h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Dialogs

const char* role_name(Role r) { return r == Role::kUser ? "user" : "assistant"; }
const char* mode_name(Mode m) { return m == Mode::kRec ? "REC" : "CHAT"; }

const char* format_name(SampleFormat f) {
  switch (f) {
    case SampleFormat::kFull: return "full";
    case SampleFormat::kResp: return "resp";
    case SampleFormat::kModeResp: return "mode-resp";
    case SampleFormat::kSidOnly: return "sid-only";
  }
  return "full";
}

SampleFormat parse_format(std::string_view s) {
  if (s == "full") return SampleFormat::kFull;
  if (s == "resp") return SampleFormat::kResp;
  if (s == "mode-resp") return SampleFormat::kModeResp;
  if (s == "sid-only") return SampleFormat::kSidOnly;
  throw Error(ErrorCode::kInvalidArgument, "unknown sample format \"" + std::string(s) + "\"");
}

namespace {

bool is_id_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
}

// Calls on_text for literal runs and on_mention for each "@id".
template <typename OnText, typename OnMention>
void scan_mentions(std::string_view text, OnText&& on_text, OnMention&& on_mention) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto at = text.find('@', pos);
    if (at == std::string_view::npos) break;
    std::size_t end = at + 1;
    while (end < text.size() && is_id_char(text[end])) ++end;
    if (end == at + 1) {
      on_text(text.substr(pos, end - pos));
    } else {
      on_text(text.substr(pos, at - pos));
      on_mention(text.substr(at + 1, end - at - 1));
    }
    pos = end;
  }
  on_text(text.substr(pos));
}

}  // namespace

std::vector<std::string> find_mentions(std::string_view text) {
  std::vector<std::string> out;
  scan_mentions(text, [](std::string_view) {}, [&](std::string_view id) {
    if (std::find(out.begin(), out.end(), id) == out.end()) out.emplace_back(id);
  });
  return out;
}

std::vector<Dialog> load_dialogs(const std::string& path, const Catalog& catalog) {
  std::vector<Dialog> dialogs;
  for (const auto& [line_no, text] : read_lines(path)) {
    const auto where = path + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::kParse, where + ": " + e.what());
    }
    try {
      Dialog d;
      d.dialog_id = j.at("dialog_id").get<std::string>();
      for (const auto& t : j.at("turns")) {
        Turn turn;
        const auto role = t.at("role").get<std::string>();
        if (role == "user") {
          turn.role = Role::kUser;
        } else if (role == "assistant") {
          turn.role = Role::kAssistant;
        } else {
          throw Error(ErrorCode::kParse, where + ": unknown role \"" + role + "\"");
        }
        turn.text = t.at("text").get<std::string>();
        turn.items = find_mentions(turn.text);
        for (const auto& id : turn.items) {
          if (!catalog.contains(id))
            throw Error(ErrorCode::kNotFound, where + ": mention of unknown item \"" + id + "\"");
        }
        d.turns.push_back(std::move(turn));
      }
      if (d.turns.empty()) throw Error(ErrorCode::kParse, where + ": dialog has no turns");
      dialogs.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, where + ": " + e.what());
    }
  }
  return dialogs;
}

void save_dialogs(const std::vector<Dialog>& dialogs, const std::string& path) {
  std::string out;
  for (const auto& d : dialogs) {
    json turns = json::array();
    for (const auto& t : d.turns) turns.push_back({{"role", role_name(t.role)}, {"text", t.text}});
    json j;
    j["dialog_id"] = d.dialog_id;
    j["turns"] = std::move(turns);
    out += j.dump();
    out += '\n';
  }
  write_file(path, out);
}

std::string replace_mentions(std::string_view text, const SidTable& sids) {
  std::string out;
  scan_mentions(text, [&](std::string_view s) { out += s; }, [&](std::string_view id) {
    out += kBoi;
    out += render_tokens(sids.codes_of(std::string(id)), sids.vocab);
    out += kEoi;
  });
  return out;
}

Dialog replace_mentions(const Dialog& dialog, const SidTable& sids) {
  Dialog out = dialog;
  for (auto& t : out.turns) {
    t.items = find_mentions(t.text);
    t.text = replace_mentions(t.text, sids);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Samples

std::string serialize_context(const std::vector<Turn>& turns, std::size_t end) {
  std::string out;
  for (std::size_t i = 0; i < end && i < turns.size(); ++i) {
    out += turns[i].role == Role::kUser ? "User: " : "Assistant: ";
    out += turns[i].text;
    out += '\n';
  }
  out += "Assistant:";
  return out;
}

std::vector<StructuredSample> build_samples(const Dialog& rewritten, SampleFormat format, const Tokenizer& tok,
                                            const SidTable& sids) {
  std::vector<StructuredSample> out;
  for (std::size_t ti = 0; ti < rewritten.turns.size(); ++ti) {
    const Turn& turn = rewritten.turns[ti];
    if (turn.role != Role::kAssistant) continue;
    const bool rec = !turn.items.empty();
    if (format == SampleFormat::kSidOnly && !rec) continue;

    StructuredSample base;
    base.dialog_id = rewritten.dialog_id;
    base.turn_index = static_cast<int>(ti);
    base.format = format;
    base.mode = rec ? Mode::kRec : Mode::kChat;
    base.items = turn.items;
    if (rec) base.target_item = turn.items.front();
    base.context_tokens = tok.encode(serialize_context(rewritten.turns, ti));
    const std::vector<int> text = tok.encode(turn.text);

    auto item_segment = [&](const std::string& item) {
      std::vector<int> seg{tok.id(Special::kBoi)};
      const auto& codes = sids.codes_of(item);
      for (int l = 0; l < static_cast<int>(codes.size()); ++l) seg.push_back(tok.sid_id(l, codes[l]));
      seg.push_back(tok.id(Special::kEoi));
      return seg;
    };
    auto append = [](std::vector<int>& dst, const std::vector<int>& src) { dst.insert(dst.end(), src.begin(), src.end()); };

    switch (format) {
      case SampleFormat::kFull:
        if (!rec) {
          StructuredSample s = base;
          s.target_tokens = {tok.id(Special::kModeChat), tok.id(Special::kResp)};
          append(s.target_tokens, text);
          s.target_tokens.push_back(Tokenizer::kEos);
          out.push_back(std::move(s));
        } else {
          for (const auto& item : turn.items) {
            StructuredSample s = base;
            s.target_item = item;
            s.target_tokens = {tok.id(Special::kModeRec)};
            append(s.target_tokens, item_segment(item));
            s.target_tokens.push_back(tok.id(Special::kResp));
            append(s.target_tokens, text);
            s.target_tokens.push_back(Tokenizer::kEos);
            out.push_back(std::move(s));
          }
        }
        break;
      case SampleFormat::kResp: {
        StructuredSample s = base;
        s.target_tokens = text;
        s.target_tokens.push_back(Tokenizer::kEos);
        out.push_back(std::move(s));
        break;
      }
      case SampleFormat::kModeResp: {
        StructuredSample s = base;
        s.target_tokens = {tok.id(rec ? Special::kModeRec : Special::kModeChat), tok.id(Special::kResp)};
        append(s.target_tokens, text);
        s.target_tokens.push_back(Tokenizer::kEos);
        out.push_back(std::move(s));
        break;
      }
      case SampleFormat::kSidOnly:
        for (const auto& item : turn.items) {
          StructuredSample s = base;
          s.target_item = item;
          s.target_tokens = item_segment(item);
          out.push_back(std::move(s));
        }
        break;
    }
  }
  return out;
}

Split split_eval(const std::vector<StructuredSample>& samples, const std::vector<Dialog>& dialogs,
                 double train_fraction, std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0))
    throw Error(ErrorCode::kInvalidArgument, "split fraction must be in [0, 1]");
  Split split;
  std::vector<std::string> ids;
  for (const auto& d : dialogs) ids.push_back(d.dialog_id);
  Rng rng(seed);
  shuffle(ids, rng);

  std::size_t n_train = ids.size();
  if (ids.size() >= 2) {
    n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ids.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, ids.size() - 1);
  } else if (ids.size() == 1) {
    split.warnings.push_back("split: a single dialog cannot be split; all samples go to train");
  }
  split.train_dialogs.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test_dialogs.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  const std::set<std::string> train_set(split.train_dialogs.begin(), split.train_dialogs.end());
  for (const auto& s : samples) (train_set.count(s.dialog_id) ? split.train : split.test).push_back(s);
  return split;
}

std::string sample_to_json(const StructuredSample& s, const Tokenizer& tok) {
  json j;
  j["dialog_id"] = s.dialog_id;
  j["turn"] = s.turn_index;
  j["format"] = format_name(s.format);
  j["mode"] = mode_name(s.mode);
  j["target_item"] = s.target_item ? json(*s.target_item) : json(nullptr);
  j["items"] = s.items;
  j["context"] = s.context_tokens;
  j["target"] = s.target_tokens;
  j["context_text"] = tok.decode(s.context_tokens);
  j["target_text"] = tok.decode(s.target_tokens);
  return j.dump();
}

StructuredSample sample_from_json(std::string_view line) {
  try {
    const auto j = json::parse(line);
    StructuredSample s;
    s.dialog_id = j.at("dialog_id");
    s.turn_index = j.at("turn");
    s.format = parse_format(j.at("format").get<std::string>());
    s.mode = j.at("mode").get<std::string>() == "REC" ? Mode::kRec : Mode::kChat;
    if (!j.at("target_item").is_null()) s.target_item = j.at("target_item").get<std::string>();
    s.items = j.at("items").get<std::vector<std::string>>();
    s.context_tokens = j.at("context").get<std::vector<int>>();
    s.target_tokens = j.at("target").get<std::vector<int>>();
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("sample: ") + e.what());
  }
}

void save_samples(const std::vector<StructuredSample>& samples, const Tokenizer& tok, const std::string& path) {
  std::string out;
  for (const auto& s : samples) {
    out += sample_to_json(s, tok);
    out += '\n';
  }
  write_file(path, out);
}

std::vector<StructuredSample> load_samples(const std::string& path) {
  std::vector<StructuredSample> out;
  for (const auto& line : read_lines(path)) out.push_back(sample_from_json(line.text));
  return out;
}

PreparedCorpus prepare_corpus(const std::vector<Dialog>& dialogs, const SidTable& sids, const PrepareOptions& opts,
                              std::vector<std::string>* warnings) {
  std::vector<Dialog> rewritten;
  std::vector<std::string> texts{"User: Assistant:"};
  for (const auto& d : dialogs) {
    rewritten.push_back(replace_mentions(d, sids));
    for (const auto& t : rewritten.back().turns) texts.push_back(t.text);
  }
  PreparedCorpus corpus;
  corpus.format = opts.format;
  corpus.tokenizer = Tokenizer::build(texts, sids.vocab);
  std::vector<StructuredSample> samples;
  for (const auto& d : rewritten) {
    auto s = build_samples(d, opts.format, corpus.tokenizer, sids);
    samples.insert(samples.end(), s.begin(), s.end());
  }
  auto split = split_eval(samples, dialogs, opts.train_fraction, opts.seed);
  if (warnings) warnings->insert(warnings->end(), split.warnings.begin(), split.warnings.end());
  corpus.train = std::move(split.train);
  corpus.test = std::move(split.test);
  return corpus;
}

void save_prepared_corpus(const PreparedCorpus& corpus, const PrepareOptions& opts, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_token_list(corpus.tokenizer.tokens(), dir + "/vocab.txt");
  save_samples(corpus.train, corpus.tokenizer, dir + "/train.jsonl");
  save_samples(corpus.test, corpus.tokenizer, dir + "/test.jsonl");
  json meta;
  meta["format"] = format_name(opts.format);
  meta["train_fraction"] = opts.train_fraction;
  meta["seed"] = opts.seed;
  meta["vocab_size"] = corpus.tokenizer.size();
  meta["base_vocab_size"] = corpus.tokenizer.base_size();
  meta["train_samples"] = corpus.train.size();
  meta["test_samples"] = corpus.test.size();
  write_file(dir + "/meta.json", meta.dump(2) + "\n");
}

PreparedCorpus load_prepared_corpus(const std::string& dir) {
  PreparedCorpus c;
  c.tokenizer = Tokenizer::from_tokens(read_token_list(dir + "/vocab.txt"));
  try {
    c.format = parse_format(json::parse(read_file(dir + "/meta.json")).at("format").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, dir + "/meta.json: " + e.what());
  }
  c.train = load_samples(dir + "/train.jsonl");
  c.test = load_samples(dir + "/test.jsonl");
  return c;
}

}  // namespace gencrs

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gencrs/catalog.h"
#include "gencrs/sid.h"

namespace gencrs {

// Word-level tokenizer standing in for an LLM tokenizer. Base vocabulary is
// "<unk>", "<eos>", then corpus words in sorted order; the semantic-ID block
// follows. Text is lowercased and split on whitespace and ASCII punctuation;
// block tokens such as "<BOI>" or "<a_3>" are never split.
class Tokenizer {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kEos = 1;

  Tokenizer() = default;
  static Tokenizer build(const std::vector<std::string>& texts, const SidVocabulary& sids);
  // From a full token list (base then block), as written to vocab.txt.
  static Tokenizer from_tokens(const std::vector<std::string>& tokens);

  std::vector<std::string> split(std::string_view text) const;
  std::vector<int> encode(std::string_view text) const;
  // Tokens joined by single spaces; adjacent block tokens are joined directly.
  std::string decode(std::span<const int> ids) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  int base_size() const { return base_size_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::optional<int> find(std::string_view token) const;

  const SidVocabulary& sids() const { return sids_; }
  int id(Special s) const { return base_size_ + sids_.special_index(s); }
  int sid_id(int level, int code) const { return base_size_ + sids_.sid_index(level, code); }
  // (level, code) when id is a semantic-ID token.
  std::optional<std::pair<int, int>> sid_of(int id) const;
  bool is_base(int id) const { return id >= 0 && id < base_size_; }
  bool is_block(int id) const { return id >= base_size_ && id < size(); }

  // Hash of the full ordered token list.
  std::uint64_t fingerprint() const;

 private:
  void index();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int base_size_ = 0;
  SidVocabulary sids_;
};

enum class Role { kUser, kAssistant };
enum class Mode { kRec, kChat };
enum class SampleFormat { kFull, kResp, kModeResp, kSidOnly };

const char* role_name(Role r);
const char* mode_name(Mode m);
const char* format_name(SampleFormat f);
// Accepts "full", "resp", "mode-resp", "sid-only".
SampleFormat parse_format(std::string_view s);

struct Turn {
  Role role = Role::kUser;
  std::string text;
  // Distinct mentioned item ids in order of first appearance.
  std::vector<std::string> items;
};

struct Dialog {
  std::string dialog_id;
  std::vector<Turn> turns;
};

// Item ids referenced as "@<id>", where an id is a run of [A-Za-z0-9_-].
std::vector<std::string> find_mentions(std::string_view text);

std::vector<Dialog> load_dialogs(const std::string& path, const Catalog& catalog);
void save_dialogs(const std::vector<Dialog>& dialogs, const std::string& path);

// Every "@id" becomes "<BOI>" + rendered SID + "<EOI>"; other text is unchanged.
std::string replace_mentions(std::string_view text, const SidTable& sids);
Dialog replace_mentions(const Dialog& dialog, const SidTable& sids);

struct StructuredSample {
  std::string dialog_id;
  int turn_index = 0;
  SampleFormat format = SampleFormat::kFull;
  Mode mode = Mode::kChat;
  std::optional<std::string> target_item;
  // All items the ground-truth response recommends.
  std::vector<std::string> items;
  std::vector<int> context_tokens;
  std::vector<int> target_tokens;
};

// "User: ..." / "Assistant: ..." lines for turns [0, end), then "Assistant:".
std::string serialize_context(const std::vector<Turn>& turns, std::size_t end);

std::vector<StructuredSample> build_samples(const Dialog& rewritten, SampleFormat format, const Tokenizer& tok,
                                            const SidTable& sids);

struct Split {
  std::vector<StructuredSample> train;
  std::vector<StructuredSample> test;
  std::vector<std::string> train_dialogs;
  std::vector<std::string> test_dialogs;
  std::vector<std::string> warnings;
};

// Dialog-level split: a seeded shuffle of dialog ids, the first fraction to train.
Split split_eval(const std::vector<StructuredSample>& samples, const std::vector<Dialog>& dialogs,
                 double train_fraction, std::uint64_t seed);

std::string sample_to_json(const StructuredSample& s, const Tokenizer& tok);
StructuredSample sample_from_json(std::string_view line);
void save_samples(const std::vector<StructuredSample>& samples, const Tokenizer& tok, const std::string& path);
std::vector<StructuredSample> load_samples(const std::string& path);

// A prepared corpus directory: vocab.txt, train.jsonl, test.jsonl, meta.json.
struct PreparedCorpus {
  Tokenizer tokenizer;
  SampleFormat format = SampleFormat::kFull;
  std::vector<StructuredSample> train;
  std::vector<StructuredSample> test;
};

struct PrepareOptions {
  SampleFormat format = SampleFormat::kFull;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

PreparedCorpus prepare_corpus(const std::vector<Dialog>& dialogs, const SidTable& sids, const PrepareOptions& opts,
                              std::vector<std::string>* warnings = nullptr);
void save_prepared_corpus(const PreparedCorpus& corpus, const PrepareOptions& opts, const std::string& dir);
PreparedCorpus load_prepared_corpus(const std::string& dir);

}  // namespace gencrs

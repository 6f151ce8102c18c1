// The fixture dialog under tests/golden and the corpus files built from it.
#pragma once

#include <cstdlib>
#include <string>
#include <vector>

#include "gencrs/catalog.h"
#include "gencrs/corpus.h"
#include "gencrs/sid.h"

namespace gencrs::testing {

struct GoldenCase {
  SampleFormat format;
  std::string file;
};

inline const std::vector<GoldenCase>& golden_cases() {
  static const std::vector<GoldenCase> cases{{SampleFormat::kFull, "full.jsonl"},
                                             {SampleFormat::kResp, "resp.jsonl"},
                                             {SampleFormat::kModeResp, "mode_resp.jsonl"},
                                             {SampleFormat::kSidOnly, "sid_only.jsonl"}};
  return cases;
}

inline std::string golden_path(const std::string& dir, const std::string& name) { return dir + "/" + name; }

// The fixture SID table is stored without its vocabulary sidecar, which is
// derived from L and K alone.
inline SidTable golden_sids(const std::string& dir) {
  const std::string path = golden_path(dir, "sids.tsv");
  SidTable t;
  t.vocab = SidVocabulary(4, 64);
  for (const auto& [line_no, text] : read_lines(path)) {
    const auto tab2 = text.rfind('\t');
    const auto tab1 = text.find('\t');
    t.entries.push_back({text.substr(0, tab1), parse_tokens(text.substr(tab2 + 1), t.vocab)});
  }
  t.reindex();
  return t;
}

// All samples of the fixture dialog in one format, as the corpus writer emits them.
inline PreparedCorpus golden_corpus(const std::string& dir, SampleFormat format) {
  const Catalog catalog = load_catalog(golden_path(dir, "catalog.jsonl"));
  const auto dialogs = load_dialogs(golden_path(dir, "dialog.jsonl"), catalog);
  PrepareOptions opts;
  opts.format = format;
  opts.train_fraction = 1.0;
  return prepare_corpus(dialogs, golden_sids(dir), opts);
}

inline std::string golden_jsonl(const PreparedCorpus& c) {
  std::string out;
  for (const auto& s : c.train) out += sample_to_json(s, c.tokenizer) + "\n";
  return out;
}

// With GENCRS_UPDATE_GOLDEN set, rewrites the expected files instead of comparing.
inline bool update_golden() { return std::getenv("GENCRS_UPDATE_GOLDEN") != nullptr; }

}  // namespace gencrs::testing

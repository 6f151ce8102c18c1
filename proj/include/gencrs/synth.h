#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gencrs/catalog.h"
#include "gencrs/corpus.h"

namespace gencrs {

struct SyntheticSpec {
  int n_items = 40;
  int n_genres = 8;
  int dialogs_per_item = 5;
  std::uint64_t seed = 7;

  void validate() const;
};

// Items carry a genre tag "genre-g" and a descriptor word unique within their
// genre, so (descriptor, genre) names exactly one item. Every dialog has four
// turns: user greeting, assistant chat reply, user request naming descriptor
// and genre, assistant recommendation "@item".
struct SyntheticData {
  std::vector<ItemRecord> items;
  std::vector<Dialog> dialogs;
};

SyntheticData make_synthetic(const SyntheticSpec& spec);

// Writes <dir>/catalog.jsonl and <dir>/dialogs.jsonl.
void write_synthetic(const SyntheticData& data, const std::string& dir);

}  // namespace gencrs

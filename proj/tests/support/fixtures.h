// Small in-memory worlds shared by the unit and acceptance suites.
#pragma once

#include <unistd.h>

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gencrs/catalog.h"
#include "gencrs/common.h"
#include "gencrs/corpus.h"
#include "gencrs/sid.h"
#include "gencrs/toylm.h"

namespace gencrs::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("gencrs_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline ItemRecord make_item(const std::string& id, const std::string& title) {
  ItemRecord r;
  r.item_id = id;
  r.title = title;
  r.year = 2000;
  r.genres = {"drama"};
  r.keywords = {"k"};
  r.plot = "a plot";
  return r;
}

// n items "m0".."m{n-1}" with distinct random IDs drawn from the K^L space.
struct World {
  Catalog catalog;
  SidTable sids;
  Tokenizer tok;
};

inline World make_world(int n_items, int levels, int k, std::uint64_t seed,
                        const std::vector<std::string>& texts = {"user : hello there , what do you like ?",
                                                                 "assistant : i like this one a lot"}) {
  Rng rng(seed);
  std::vector<ItemRecord> items;
  std::set<Codes> used;
  World w;
  w.sids.vocab = SidVocabulary(levels, k);
  for (int i = 0; i < n_items; ++i) {
    const std::string id = "m" + std::to_string(i);
    items.push_back(make_item(id, "title " + std::to_string(i)));
    Codes c(levels);
    do {
      for (auto& v : c) v = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(k)));
    } while (!used.insert(c).second);
    w.sids.entries.push_back({id, c});
  }
  w.sids.reindex();
  w.catalog = Catalog(items);
  w.tok = Tokenizer::build(texts, w.sids.vocab);
  return w;
}

inline LmConfig micro_lm_config(const Tokenizer& tok, int d_model = 16, int layers = 1, int heads = 2,
                                int context_len = 64, std::uint64_t seed = 1) {
  LmConfig c;
  c.vocab_size = tok.size();
  c.base_vocab_size = tok.base_size();
  c.d_model = d_model;
  c.n_layers = layers;
  c.n_heads = heads;
  c.context_len = context_len;
  c.seed = seed;
  return c;
}

// Randomly perturbed parameters so the distribution is far from uniform.
inline LmModel random_lm(const LmConfig& c, double scale, std::uint64_t seed) {
  LmModel m(c);
  Rng rng(seed);
  for (auto& p : m.params()) p += uniform(rng, -scale, scale);
  return m;
}

inline std::vector<int> random_context(const Tokenizer& tok, std::size_t len, Rng& rng) {
  std::vector<int> ctx;
  for (std::size_t i = 0; i < len; ++i)
    ctx.push_back(2 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(tok.base_size() - 2))));
  for (int id : tok.encode("assistant :")) ctx.push_back(id);
  return ctx;
}

}  // namespace gencrs::testing

namespace gencrs::testing {

// The Error fn throws, or nullopt when it returns normally.
template <typename Fn>
std::optional<Error> capture_error(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e;
  }
  return std::nullopt;
}

}  // namespace gencrs::testing

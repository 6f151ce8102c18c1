#include "gencrs/synth.h"

#include <filesystem>

namespace gencrs {

namespace {

const std::vector<std::string> kDescriptors = {
    "dark",   "funny",  "quiet",  "epic",   "strange", "gentle", "brutal", "silly",
    "tender", "grim",   "bright", "wild",   "slow",    "clever", "noisy",  "cozy",
    "bleak",  "lively", "eerie",  "bold",   "moody",   "sunny",  "tense",  "warm",
    "odd",    "calm",   "fierce", "sweet",  "gritty",  "dreamy", "lavish", "plain",
};

const std::vector<std::string> kNouns = {
    "river", "garden", "machine", "harbor", "mirror", "forest", "signal", "castle",
    "desert", "engine", "island", "lantern", "comet", "valley", "tower",  "circus",
};

const std::vector<std::string> kGreetings = {"hi there", "hello", "hey , how are you", "good evening"};
const std::vector<std::string> kChatReplies = {
    "hello ! what kind of movie do you like ?",
    "hi ! tell me what you are in the mood for .",
    "hey ! i can help you find a movie .",
};
const std::vector<std::string> kRequests = {
    "i want a {d} {g} movie",
    "can you suggest a {d} {g} film ?",
    "i am in the mood for something {d} and {g}",
};
const std::vector<std::string> kRecs = {
    "you should watch {i} .",
    "i recommend {i} , it is a {d} classic .",
    "how about {i} ?",
    "since you like {g} , try {i} .",
};

std::string descriptor(int idx) {
  if (idx < static_cast<int>(kDescriptors.size())) return kDescriptors[idx];
  return "style" + std::to_string(idx);
}

std::string fill(std::string tmpl, const std::string& d, const std::string& g, const std::string& item) {
  auto sub = [&](const std::string& key, const std::string& val) {
    for (std::size_t p = tmpl.find(key); p != std::string::npos; p = tmpl.find(key, p + val.size())) {
      tmpl.replace(p, key.size(), val);
    }
  };
  sub("{d}", d);
  sub("{g}", g);
  sub("{i}", item);
  return tmpl;
}

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[uniform_index(rng, v.size())];
}

}  // namespace

void SyntheticSpec::validate() const {
  if (n_genres < 1 || n_items < n_genres)
    throw Error(ErrorCode::kInvalidArgument, "synthetic spec needs n_items >= n_genres >= 1");
  if (dialogs_per_item < 1) throw Error(ErrorCode::kInvalidArgument, "synthetic spec needs dialogs_per_item >= 1");
}

SyntheticData make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  // Seeded genre assignment, balanced across genres.
  std::vector<int> order(static_cast<std::size_t>(spec.n_items));
  for (int i = 0; i < spec.n_items; ++i) order[i] = i;
  shuffle(order, rng);
  std::vector<int> genre_of(order.size()), desc_of(order.size());
  std::vector<std::vector<int>> members(static_cast<std::size_t>(spec.n_genres));
  for (int j = 0; j < spec.n_items; ++j) {
    genre_of[order[j]] = j % spec.n_genres;
    members[j % spec.n_genres].push_back(order[j]);
  }
  // Per-genre descriptor permutation: distinct descriptors inside a genre.
  for (auto& m : members) {
    std::vector<int> slots(m.size());
    for (std::size_t s = 0; s < slots.size(); ++s) slots[s] = static_cast<int>(s);
    shuffle(slots, rng);
    for (std::size_t s = 0; s < m.size(); ++s) desc_of[m[s]] = slots[s];
  }

  SyntheticData data;
  for (int i = 0; i < spec.n_items; ++i) {
    const std::string g = "genre-" + std::to_string(genre_of[i]);
    const std::string d = descriptor(desc_of[i]);
    ItemRecord r;
    r.item_id = "m" + std::to_string(i);
    r.title = "the " + d + " " + pick(kNouns, rng);
    r.year = 1970 + static_cast<int>(uniform_index(rng, 50));
    r.genres = {g};
    r.keywords = {g + " keyword", d};
    r.plot = "a " + d + " " + g + " story.";
    data.items.push_back(std::move(r));
  }

  std::vector<int> targets;
  for (int i = 0; i < spec.n_items; ++i) {
    for (int k = 0; k < spec.dialogs_per_item; ++k) targets.push_back(i);
  }
  shuffle(targets, rng);
  for (std::size_t n = 0; n < targets.size(); ++n) {
    const int i = targets[n];
    const std::string g = "genre-" + std::to_string(genre_of[i]);
    const std::string d = descriptor(desc_of[i]);
    Dialog dlg;
    dlg.dialog_id = "d" + std::to_string(n);
    dlg.turns.push_back({Role::kUser, pick(kGreetings, rng), {}});
    dlg.turns.push_back({Role::kAssistant, pick(kChatReplies, rng), {}});
    dlg.turns.push_back({Role::kUser, fill(pick(kRequests, rng), d, g, ""), {}});
    const std::string id = data.items[i].item_id;
    dlg.turns.push_back({Role::kAssistant, fill(pick(kRecs, rng), d, g, "@" + id), {id}});
    data.dialogs.push_back(std::move(dlg));
  }
  return data;
}

void write_synthetic(const SyntheticData& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_catalog(Catalog(data.items), dir + "/catalog.jsonl");
  save_dialogs(data.dialogs, dir + "/dialogs.jsonl");
}

}  // namespace gencrs

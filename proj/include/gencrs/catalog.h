#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace gencrs {

struct ItemRecord {
  std::string item_id;
  std::string title;
  std::optional<int> year;
  std::vector<std::string> genres;
  std::vector<std::string> keywords;
  std::string plot;
};

class Catalog {
 public:
  Catalog() = default;
  // Throws kDuplicate / kInvalidArgument when the record invariants do not hold.
  explicit Catalog(std::vector<ItemRecord> items);

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const ItemRecord& at(std::size_t pos) const { return items_.at(pos); }
  const std::vector<ItemRecord>& items() const { return items_; }

  std::optional<std::size_t> find(const std::string& item_id) const;
  // Throws kNotFound.
  std::size_t position(const std::string& item_id) const;
  bool contains(const std::string& item_id) const { return index_.count(item_id) > 0; }

 private:
  std::vector<ItemRecord> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Line-delimited JSON, one record per line.
Catalog load_catalog(const std::string& path);
void save_catalog(const Catalog& catalog, const std::string& path);

std::string serialize_metadata(const ItemRecord& item);

// Row-major count x dim matrix of 32-bit floats.
struct EmbeddingMatrix {
  std::uint32_t count = 0;
  std::uint32_t dim = 0;
  std::vector<float> values;

  std::span<const float> row(std::size_t i) const {
    return {values.data() + i * dim, dim};
  }
  bool operator==(const EmbeddingMatrix&) const = default;
};

inline constexpr int kDefaultEmbeddingDim = 64;

// Hashed signed character-3-gram counts of the lowercased text, L2-normalized.
std::vector<float> toy_embed(const std::string& text, int dim, std::uint64_t seed);

// Bucket and sign for one 3-gram; exposed so tests can recompute bucket sets.
struct TrigramSlot {
  std::uint32_t bucket;
  int sign;
};
TrigramSlot trigram_slot(std::string_view trigram, int dim, std::uint64_t seed);

EmbeddingMatrix embed_catalog(const Catalog& catalog, int dim, std::uint64_t seed);

// EMB1 container: "EMB1", u32 count, u32 dim, count*dim f32, all little-endian.
void save_embeddings(const EmbeddingMatrix& m, const std::string& path);
EmbeddingMatrix load_embeddings(const std::string& path, const Catalog& catalog);
EmbeddingMatrix load_embeddings(const std::string& path);

}  // namespace gencrs

#include "gencrs/catalog.h"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "gencrs/binio.h"
#include "gencrs/common.h"

namespace gencrs {

using nlohmann::json;

Catalog::Catalog(std::vector<ItemRecord> items) : items_(std::move(items)) {
  index_.reserve(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& it = items_[i];
    if (it.item_id.empty()) throw Error(ErrorCode::kInvalidArgument, "empty item_id at position " + std::to_string(i));
    if (it.title.empty()) throw Error(ErrorCode::kInvalidArgument, "empty title for item " + it.item_id);
    if (!index_.emplace(it.item_id, i).second)
      throw Error(ErrorCode::kDuplicate, "duplicate item_id \"" + it.item_id + "\"");
  }
}

std::optional<std::size_t> Catalog::find(const std::string& item_id) const {
  auto it = index_.find(item_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Catalog::position(const std::string& item_id) const {
  auto pos = find(item_id);
  if (!pos) throw Error(ErrorCode::kNotFound, "unknown item \"" + item_id + "\"");
  return *pos;
}

namespace {

std::vector<std::string> string_list(const json& j, const char* key, std::size_t line_no) {
  if (!j.contains(key)) {
    throw Error(ErrorCode::kMissingField, "line " + std::to_string(line_no) + ": missing field \"" + key + "\"");
  }
  const auto& v = j.at(key);
  if (!v.is_array()) {
    throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": \"" + key + "\" must be a list");
  }
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string())
      throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": \"" + key + "\" entries must be strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::string required_string(const json& j, const char* key, std::size_t line_no) {
  if (!j.contains(key) || j.at(key).is_null()) {
    throw Error(ErrorCode::kMissingField, "line " + std::to_string(line_no) + ": missing field \"" + key + "\"");
  }
  if (!j.at(key).is_string())
    throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": \"" + key + "\" must be a string");
  return j.at(key).get<std::string>();
}

ItemRecord parse_record(const std::string& text, std::size_t line_no) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": expected an object");

  ItemRecord r;
  r.item_id = required_string(j, "item_id", line_no);
  r.title = required_string(j, "title", line_no);
  if (j.contains("year") && !j.at("year").is_null()) {
    if (!j.at("year").is_number_integer())
      throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": \"year\" must be an integer");
    r.year = j.at("year").get<int>();
  }
  r.genres = string_list(j, "genres", line_no);
  r.keywords = string_list(j, "keywords", line_no);
  r.plot = required_string(j, "plot", line_no);
  if (r.item_id.empty()) throw Error(ErrorCode::kMissingField, "line " + std::to_string(line_no) + ": empty item_id");
  if (r.title.empty()) throw Error(ErrorCode::kMissingField, "line " + std::to_string(line_no) + ": empty title");
  return r;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

Catalog load_catalog(const std::string& path) {
  std::vector<ItemRecord> items;
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& [line_no, text] : read_lines(path)) {
    auto rec = parse_record(text, line_no);
    if (auto [it, fresh] = seen.emplace(rec.item_id, line_no); !fresh) {
      throw Error(ErrorCode::kDuplicate, "duplicate item_id \"" + rec.item_id + "\" on lines " +
                                             std::to_string(it->second) + " and " + std::to_string(line_no));
    }
    items.push_back(std::move(rec));
  }
  return Catalog(std::move(items));
}

void save_catalog(const Catalog& catalog, const std::string& path) {
  std::string out;
  for (const auto& it : catalog.items()) {
    json j;
    j["item_id"] = it.item_id;
    j["title"] = it.title;
    j["year"] = it.year ? json(*it.year) : json(nullptr);
    j["genres"] = it.genres;
    j["keywords"] = it.keywords;
    j["plot"] = it.plot;
    out += j.dump();
    out += '\n';
  }
  write_file(path, out);
}

std::string serialize_metadata(const ItemRecord& item) {
  std::string out = "title: " + item.title;
  out += " | year: ";
  if (item.year) out += std::to_string(*item.year);
  out += " | genres: " + join(item.genres, ", ");
  out += " | keywords: " + join(item.keywords, ", ");
  out += " | plot: " + item.plot;
  return out;
}

TrigramSlot trigram_slot(std::string_view trigram, int dim, std::uint64_t seed) {
  // Mix the seed into the FNV basis so different seeds give unrelated hashings.
  const std::uint64_t basis = fnv1a64(std::to_string(seed));
  const std::uint64_t h = fnv1a64(trigram, basis);
  return {static_cast<std::uint32_t>(h % static_cast<std::uint64_t>(dim)), ((h >> 63) & 1) ? -1 : 1};
}

std::vector<float> toy_embed(const std::string& text, int dim, std::uint64_t seed) {
  if (dim < 8) throw Error(ErrorCode::kInvalidArgument, "toy_embed: dim must be >= 8, got " + std::to_string(dim));
  std::string lower = text;
  for (auto& c : lower) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  std::vector<double> acc(static_cast<std::size_t>(dim), 0.0);
  for (std::size_t i = 0; i + 3 <= lower.size(); ++i) {
    auto slot = trigram_slot(std::string_view(lower).substr(i, 3), dim, seed);
    acc[slot.bucket] += slot.sign;
  }
  double norm2 = 0.0;
  for (double v : acc) norm2 += v * v;
  std::vector<float> out(acc.size(), 0.0f);
  if (norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] * inv);
  }
  return out;
}

EmbeddingMatrix embed_catalog(const Catalog& catalog, int dim, std::uint64_t seed) {
  EmbeddingMatrix m;
  m.count = static_cast<std::uint32_t>(catalog.size());
  m.dim = static_cast<std::uint32_t>(dim);
  m.values.reserve(catalog.size() * static_cast<std::size_t>(dim));
  for (const auto& item : catalog.items()) {
    auto v = toy_embed(serialize_metadata(item), dim, seed);
    m.values.insert(m.values.end(), v.begin(), v.end());
  }
  return m;
}

void save_embeddings(const EmbeddingMatrix& m, const std::string& path) {
  ByteWriter w;
  w.bytes("EMB1");
  w.u32(m.count);
  w.u32(m.dim);
  for (float v : m.values) w.f32(v);
  write_file(path, w.str());
}

EmbeddingMatrix load_embeddings(const std::string& path) {
  const std::string data = read_file(path);
  ByteReader r(data, path);
  if (r.bytes(4) != "EMB1") throw Error(ErrorCode::kParse, path + ": magic mismatch (expected EMB1)");
  EmbeddingMatrix m;
  m.count = r.u32();
  m.dim = r.u32();
  const std::size_t n = static_cast<std::size_t>(m.count) * m.dim;
  if (r.remaining() != n * 4) {
    throw Error(ErrorCode::kParse, path + ": payload holds " + std::to_string(r.remaining()) + " bytes, expected " +
                                       std::to_string(n * 4));
  }
  m.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    m.values[i] = r.f32();
    if (!std::isfinite(m.values[i])) {
      throw Error(ErrorCode::kNonFinite, path + ": non-finite value in row " + std::to_string(i / m.dim));
    }
  }
  return m;
}

EmbeddingMatrix load_embeddings(const std::string& path, const Catalog& catalog) {
  auto m = load_embeddings(path);
  if (m.count != catalog.size()) {
    throw Error(ErrorCode::kMismatch, path + ": count " + std::to_string(m.count) + " does not match catalog size " +
                                          std::to_string(catalog.size()));
  }
  return m;
}

}  // namespace gencrs

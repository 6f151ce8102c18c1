#include "gencrs/catalog.h"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fixtures.h"

namespace gencrs {
namespace {

using testing::capture_error;
using testing::TempDir;

TEST(SerializeMetadata, FullRecord) {
  ItemRecord r{"x", "T", 2010, {"A", "B"}, {"k"}, "P"};
  EXPECT_EQ(serialize_metadata(r), "title: T | year: 2010 | genres: A, B | keywords: k | plot: P");
}

TEST(SerializeMetadata, EmptyFields) {
  ItemRecord r{"x", "T", std::nullopt, {}, {}, ""};
  EXPECT_EQ(serialize_metadata(r), "title: T | year:  | genres:  | keywords:  | plot: ");
}

TEST(SerializeMetadata, PlotChangeIsLocal) {
  ItemRecord a{"x", "T", 1999, {"g"}, {"k"}, "first plot"};
  ItemRecord b = a;
  b.plot = "second";
  const auto sa = serialize_metadata(a), sb = serialize_metadata(b);
  ASSERT_NE(sa, sb);
  const auto cut = sa.find("plot: ") + 6;
  EXPECT_EQ(sa.substr(0, cut), sb.substr(0, cut));
}

TEST(SerializeMetadata, InjectiveOverFieldValues) {
  std::vector<ItemRecord> variants;
  ItemRecord base{"x", "T", 2000, {"a"}, {"k"}, "p"};
  variants.push_back(base);
  auto v = base;
  v.title = "T2";
  variants.push_back(v);
  v = base;
  v.year = 2001;
  variants.push_back(v);
  v = base;
  v.year.reset();
  variants.push_back(v);
  v = base;
  v.genres = {"a", "b"};
  variants.push_back(v);
  v = base;
  v.keywords = {};
  variants.push_back(v);
  v = base;
  v.plot = "q";
  variants.push_back(v);
  std::set<std::string> seen;
  for (const auto& r : variants) seen.insert(serialize_metadata(r));
  EXPECT_EQ(seen.size(), variants.size());
}

TEST(LoadCatalog, PreservesOrder) {
  TempDir dir("catalog");
  write_file(dir.file("c.jsonl"),
             R"({"item_id":"m3","title":"C","year":2001,"genres":[],"keywords":[],"plot":""})" "\n"
             R"({"item_id":"m1","title":"A","genres":["x"],"keywords":["y"],"plot":"p"})" "\n"
             "\n"
             R"({"item_id":"m2","title":"B","year":null,"genres":[],"keywords":[],"plot":""})" "\n");
  const Catalog c = load_catalog(dir.file("c.jsonl"));
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c.position("m3"), 0u);
  EXPECT_EQ(c.position("m1"), 1u);
  EXPECT_EQ(c.position("m2"), 2u);
  EXPECT_FALSE(c.at(1).year.has_value());
  EXPECT_EQ(c.at(0).year, 2001);
}

TEST(LoadCatalog, DuplicateIdNamed) {
  TempDir dir("catalog");
  write_file(dir.file("c.jsonl"),
             R"({"item_id":"m1","title":"A","genres":[],"keywords":[],"plot":""})" "\n"
             R"({"item_id":"m1","title":"B","genres":[],"keywords":[],"plot":""})" "\n");
  auto err = capture_error([&] { load_catalog(dir.file("c.jsonl")); });
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code(), ErrorCode::kDuplicate);
  EXPECT_NE(std::string(err->what()).find("m1"), std::string::npos);
}

TEST(LoadCatalog, MissingTitle) {
  TempDir dir("catalog");
  write_file(dir.file("c.jsonl"), R"({"item_id":"m1","genres":[],"keywords":[],"plot":""})" "\n");
  auto err = capture_error([&] { load_catalog(dir.file("c.jsonl")); });
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code(), ErrorCode::kMissingField);
  EXPECT_NE(std::string(err->what()).find("title"), std::string::npos);
}

TEST(LoadCatalog, ParseErrorCarriesLine) {
  TempDir dir("catalog");
  write_file(dir.file("c.jsonl"),
             R"({"item_id":"m1","title":"A","genres":[],"keywords":[],"plot":""})" "\n"
             "{not json\n");
  auto err = capture_error([&] { load_catalog(dir.file("c.jsonl")); });
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code(), ErrorCode::kParse);
  EXPECT_NE(std::string(err->what()).find("line 2"), std::string::npos);
}

TEST(LoadCatalog, SaveRoundTrip) {
  TempDir dir("catalog");
  Catalog c({{"a", "A", 1990, {"g1", "g2"}, {"k"}, "plot a"}, {"b", "B", std::nullopt, {}, {}, ""}});
  save_catalog(c, dir.file("c.jsonl"));
  const Catalog back = load_catalog(dir.file("c.jsonl"));
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(serialize_metadata(back.at(i)), serialize_metadata(c.at(i)));
}

// Independent FNV-1a: seed text hashed from the standard basis becomes the basis.
std::uint64_t fnv(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::set<std::uint32_t> buckets(const std::string& text, int dim, std::uint64_t seed) {
  std::set<std::uint32_t> out;
  const auto basis = fnv(std::to_string(seed));
  for (std::size_t i = 0; i + 3 <= text.size(); ++i)
    out.insert(static_cast<std::uint32_t>(fnv(text.substr(i, 3), basis) % static_cast<std::uint64_t>(dim)));
  return out;
}

TEST(ToyEmbed, Deterministic) {
  const auto a = toy_embed("The Matrix 1999", 64, 17);
  const auto b = toy_embed("The Matrix 1999", 64, 17);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, toy_embed("The Matrix 1999", 64, 18));
}

TEST(ToyEmbed, UnitNormOrZero) {
  for (const std::string s : {"abc", "title: x | year:  | genres:  | keywords:  | plot: ", "ab"}) {
    const auto v = toy_embed(s, 32, 3);
    double n = 0.0;
    for (float x : v) n += static_cast<double>(x) * x;
    if (s.size() < 3)
      EXPECT_EQ(n, 0.0);
    else
      EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
  }
}

TEST(ToyEmbed, CaseInsensitive) { EXPECT_EQ(toy_embed("HeLLo World", 16, 1), toy_embed("hello world", 16, 1)); }

TEST(ToyEmbed, NonZeroBucketsMatchRecomputedSets) {
  const int dim = 4096;
  const std::string a = "aaaa", b = "zzzzq";
  const auto ba = buckets(a, dim, 5), bb = buckets(b, dim, 5);
  std::set<std::uint32_t> inter;
  for (auto x : ba)
    if (bb.count(x)) inter.insert(x);
  ASSERT_TRUE(inter.empty()) << "pick texts whose buckets do not collide";
  const auto ea = toy_embed(a, dim, 5), eb = toy_embed(b, dim, 5);
  std::set<std::uint32_t> nza, nzb;
  for (int i = 0; i < dim; ++i) {
    if (ea[i] != 0.0f) nza.insert(i);
    if (eb[i] != 0.0f) nzb.insert(i);
  }
  EXPECT_EQ(nza, ba);
  EXPECT_EQ(nzb, bb);
  double dot = 0.0;
  for (int i = 0; i < dim; ++i) dot += static_cast<double>(ea[i]) * eb[i];
  EXPECT_EQ(dot, 0.0);
}

TEST(ToyEmbed, SlotMatchesIndependentHash) {
  for (const std::string t : {"abc", "the", " | ", "zz9"}) {
    const auto slot = trigram_slot(t, 64, 17);
    const auto h = fnv(t, fnv("17"));
    EXPECT_EQ(slot.bucket, h % 64);
    EXPECT_EQ(slot.sign, (h >> 63) ? -1 : 1);
  }
}

TEST(ToyEmbed, RejectsSmallDim) {
  auto err = capture_error([] { toy_embed("abc", 7, 0); });
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code(), ErrorCode::kInvalidArgument);
}

TEST(Embeddings, RoundTripBitExact) {
  TempDir dir("emb");
  Catalog c({testing::make_item("a", "Alpha"), testing::make_item("b", "Beta"), testing::make_item("c", "Gamma")});
  const auto m = embed_catalog(c, 16, 9);
  save_embeddings(m, dir.file("e.emb"));
  EXPECT_EQ(load_embeddings(dir.file("e.emb"), c), m);
  const std::string bytes = read_file(dir.file("e.emb"));
  ASSERT_EQ(bytes.size(), 12u + 3 * 16 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "EMB1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 3);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 16);
}

TEST(Embeddings, CountMismatch) {
  TempDir dir("emb");
  Catalog c({testing::make_item("a", "Alpha"), testing::make_item("b", "Beta")});
  EmbeddingMatrix m{3, 8, std::vector<float>(24, 0.5f)};
  save_embeddings(m, dir.file("e.emb"));
  auto err = capture_error([&] { load_embeddings(dir.file("e.emb"), c); });
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code(), ErrorCode::kMismatch);
}

TEST(Embeddings, NaNNamesRow) {
  TempDir dir("emb");
  EmbeddingMatrix m{3, 8, std::vector<float>(24, 0.5f)};
  m.values[2 * 8 + 3] = std::nanf("");
  save_embeddings(m, dir.file("e.emb"));
  auto err = capture_error([&] { load_embeddings(dir.file("e.emb")); });
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code(), ErrorCode::kNonFinite);
  EXPECT_NE(std::string(err->what()).find("row 2"), std::string::npos);
}

TEST(Embeddings, BadMagic) {
  TempDir dir("emb");
  write_file(dir.file("e.emb"), std::string("EMB2\0\0\0\0\0\0\0\0", 12));
  auto err = capture_error([&] { load_embeddings(dir.file("e.emb")); });
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code(), ErrorCode::kParse);
}

}  // namespace
}  // namespace gencrs

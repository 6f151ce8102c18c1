#include "gencrs/sid.h"

#include <gtest/gtest.h>

#include <set>

#include "fixtures.h"

namespace gencrs {
namespace {

const SidVocabulary kVocab(4, 64);

TEST(RenderTokens, ReferenceExample) {
  EXPECT_EQ(render_tokens({17, 63, 0, 25}, kVocab), "<a_17><b_63><c_0><d_25>");
  EXPECT_EQ(render_tokens({0, 0, 0, 0}, kVocab), "<a_0><b_0><c_0><d_0>");
}

TEST(RenderTokens, OutOfRange) {
  EXPECT_THROW(render_tokens({64, 0, 0, 0}, kVocab), Error);
  EXPECT_THROW(render_tokens({0, -1, 0, 0}, kVocab), Error);
  EXPECT_THROW(render_tokens({0, 0, 0}, kVocab), Error);
}

TEST(ParseTokens, ReferenceExample) { EXPECT_EQ(parse_tokens("<a_17><b_63><c_0><d_25>", kVocab), (Codes{17, 63, 0, 25})); }

TEST(ParseTokens, Errors) {
  for (const char* bad : {"<b_1><a_0><c_0><d_0>", "", "<a_1><b_1><c_1>", "<a_1><b_1><c_1><d_1><a_0>", "<a_1>x<b_1>",
                          "<a_64><b_0><c_0><d_0>", "<a_1><b_1><c_1><d_1"}) {
    auto err = testing::capture_error([&] { parse_tokens(bad, kVocab); });
    ASSERT_TRUE(err) << bad;
    EXPECT_EQ(err->code(), ErrorCode::kParse) << bad;
  }
}

TEST(ParseTokens, RoundTripRandom) {
  Rng rng(100);
  for (int i = 0; i < 100; ++i) {
    Codes c(4);
    for (auto& v : c) v = static_cast<int>(uniform_index(rng, 64));
    EXPECT_EQ(parse_tokens(render_tokens(c, kVocab), kVocab), c);
  }
}

TEST(SidVocabulary, TokensUniqueAndParse) {
  const SidVocabulary v(3, 5);
  const auto block = v.block_tokens();
  EXPECT_EQ(static_cast<int>(block.size()), v.block_size());
  EXPECT_EQ(std::set<std::string>(block.begin(), block.end()).size(), block.size());
  for (int l = 0; l < 3; ++l)
    for (int k = 0; k < 5; ++k) {
      EXPECT_EQ(block[v.sid_index(l, k)], v.sid_token(l, k));
      EXPECT_EQ(v.parse_sid_token(v.sid_token(l, k)), std::make_pair(l, k));
    }
  EXPECT_EQ(block[v.special_index(Special::kBoi)], "<BOI>");
  EXPECT_EQ(block[v.special_index(Special::kMovie)], "<movie>");
  EXPECT_EQ(SidVocabulary::from_block_tokens(block), v);
  EXPECT_FALSE(v.parse_sid_token("<BOI>"));
  EXPECT_FALSE(v.parse_sid_token("<d_0>"));
}

TEST(SidVocabulary, PrefixesContinueAlphabetically) {
  const SidVocabulary v(26, 2);
  EXPECT_EQ(v.level_prefix(4), "e");
  EXPECT_EQ(v.level_prefix(25), "z");
  EXPECT_THROW(SidVocabulary(27, 2), Error);
}

TEST(SidTrie, ThreeItems) {
  const auto t = build_trie(std::vector<Codes>{{1, 2}, {1, 3}, {0, 0}}, 2);
  EXPECT_EQ(t.leaf_count(), 3u);
  EXPECT_EQ(t.allowed_next({}), (std::vector<int>{0, 1}));
  EXPECT_EQ(t.allowed_next({1}), (std::vector<int>{2, 3}));
  EXPECT_TRUE(t.allowed_next({1, 3}).empty());
  EXPECT_EQ(t.lookup({1, 3}), 1u);
  EXPECT_FALSE(t.lookup({1}));
  EXPECT_FALSE(t.lookup({2, 2}));
  auto err = testing::capture_error([&] { t.allowed_next({2}); });
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code(), ErrorCode::kNotFound);
}

TEST(SidTrie, PrefixMembershipMatchesHashSet) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::set<Codes> ids;
    const std::size_t n = 1 + uniform_index(rng, 16);
    while (ids.size() < n) ids.insert({static_cast<int>(uniform_index(rng, 4)), static_cast<int>(uniform_index(rng, 4))});
    std::vector<Codes> codes(ids.begin(), ids.end());
    const auto t = build_trie(codes, 2);
    std::set<Codes> prefixes{{}};
    for (const auto& c : codes) {
      prefixes.insert({c[0]});
      prefixes.insert(c);
    }
    std::vector<Codes> all{{}};
    for (int a = 0; a < 4; ++a) {
      all.push_back({a});
      for (int b = 0; b < 4; ++b) all.push_back({a, b});
    }
    for (const auto& p : all) EXPECT_EQ(t.contains_prefix(p), prefixes.count(p) > 0);
    for (std::size_t i = 0; i < codes.size(); ++i) EXPECT_EQ(t.lookup(codes[i]), i);
    for (const auto& c : codes) EXPECT_FALSE(t.allowed_next({c[0]}).empty());
  }
}

TEST(SidTrie, DuplicateRejected) {
  auto err = testing::capture_error([] { build_trie(std::vector<Codes>{{1, 2}, {1, 2}}, 2); });
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code(), ErrorCode::kDuplicate);
}

TEST(SidTrie, FromAssignmentAndCatalog) {
  Catalog c({testing::make_item("x", "X"), testing::make_item("y", "Y")});
  IdAssignment a{{{0, 1}, {1, 1}}, {}};
  const auto t = build_trie(a, c);
  EXPECT_EQ(t.leaf_count(), 2u);
  EXPECT_EQ(t.lookup({1, 1}), 1u);
  IdAssignment short_a{{{0, 1}}, {}};
  EXPECT_THROW(build_trie(short_a, c), Error);
}

TEST(SidTable, SaveLoadRoundTrip) {
  testing::TempDir dir("sid");
  Catalog c({testing::make_item("x", "X"), testing::make_item("y", "Y"), testing::make_item("z", "Z")});
  const SidVocabulary v(2, 4);
  const auto t = make_sid_table(v, c, IdAssignment{{{0, 1}, {3, 3}, {2, 0}}, {}});
  save_sid_table(t, dir.file("s.tsv"));
  EXPECT_EQ(read_file(dir.file("s.tsv")), "x\t0,1\t<a_0><b_1>\ny\t3,3\t<a_3><b_3>\nz\t2,0\t<a_2><b_0>\n");
  const auto back = load_sid_table(dir.file("s.tsv"));
  EXPECT_EQ(back.vocab, v);
  EXPECT_EQ(back.codes_by_item(), t.codes_by_item());
  EXPECT_EQ(back.codes_of("y"), (Codes{3, 3}));
  EXPECT_THROW(back.codes_of("w"), Error);
  EXPECT_EQ(read_token_list(dir.file("s.tsv.vocab")), v.block_tokens());
}

TEST(SidTable, InconsistentRowRejected) {
  testing::TempDir dir("sid");
  const SidVocabulary v(2, 4);
  write_token_list(v.block_tokens(), dir.file("s.tsv.vocab"));
  write_file(dir.file("s.tsv"), "x\t0,1\t<a_0><b_2>\n");
  auto err = testing::capture_error([&] { load_sid_table(dir.file("s.tsv")); });
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code(), ErrorCode::kParse);
}

}  // namespace
}  // namespace gencrs

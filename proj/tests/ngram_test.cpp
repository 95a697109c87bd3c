#include <gtest/gtest.h>

#include <absl/hash/internal/city.h>

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "bytesteady/hash.hpp"
#include "bytesteady/ngram.hpp"
#include "bytesteady/random.hpp"

using namespace bytesteady;

namespace {

std::vector<std::uint32_t> lengths(std::string_view spec) { return parse_ngram_set(spec).lengths(); }

std::vector<std::string> grams_as_strings(std::string_view input, const NGramSet& set) {
  std::vector<std::string> out;
  for (ByteView g : extract_grams(as_bytes(input), set)) out.push_back(to_string(g));
  return out;
}

Bytes random_bytes(Rng& rng, std::size_t n, unsigned alphabet = 256) {
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>(uniform_below(rng, alphabet));
  return b;
}

}  // namespace

// ============================================================================
// n-gram set shorthand
// ============================================================================

TEST(ParseNGramSet, ShorthandForms) {
  EXPECT_EQ(lengths("2[1-8]"), (std::vector<std::uint32_t>{2, 4, 6, 8, 10, 12, 14, 16}));
  EXPECT_EQ(lengths("4^[0-2]"), (std::vector<std::uint32_t>{1, 4, 16}));
  EXPECT_EQ(lengths("{1}"), (std::vector<std::uint32_t>{1}));
  EXPECT_EQ(lengths("4,8,12,16"), (std::vector<std::uint32_t>{4, 8, 12, 16}));
  EXPECT_EQ(lengths("[1-4]"), (std::vector<std::uint32_t>{1, 2, 3, 4}));
  EXPECT_EQ(lengths("2^[0-4]"), (std::vector<std::uint32_t>{1, 2, 4, 8, 16}));
  EXPECT_EQ(lengths("16^[0-1]"), (std::vector<std::uint32_t>{1, 16}));
  EXPECT_EQ(lengths("8[1-2]"), (std::vector<std::uint32_t>{8, 16}));
  EXPECT_EQ(parse_ngram_set("[1-16]").size(), 16u);
}

TEST(ParseNGramSet, SortsDeduplicatesAndCombines) {
  EXPECT_EQ(lengths("16, 4 ,8,4"), (std::vector<std::uint32_t>{4, 8, 16}));
  EXPECT_EQ(lengths("{1},2^[1-3]"), (std::vector<std::uint32_t>{1, 2, 4, 8}));
  EXPECT_EQ(lengths("{3,1,2}"), (std::vector<std::uint32_t>{1, 2, 3}));
  EXPECT_EQ(lengths("2[1-2],[3-4]"), (std::vector<std::uint32_t>{2, 3, 4}));
}

TEST(ParseNGramSet, CanonicalStringRoundTrips) {
  for (const char* s : {"2[1-8]", "4^[0-2]", "[1-16]", "{7}"}) {
    const NGramSet set = parse_ngram_set(s);
    EXPECT_EQ(parse_ngram_set(set.to_string()), set) << s;
  }
}

TEST(ParseNGramSet, ErrorsNameTheOffendingToken) {
  auto message = [](std::string_view s) {
    try {
      parse_ngram_set(s);
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string("<no error>");
  };
  EXPECT_NE(message("0").find("'0'"), std::string::npos);
  EXPECT_NE(message("2[0-3]").find("2[0-3]"), std::string::npos);
  EXPECT_NE(message("[5-2]").find("5-2"), std::string::npos);
  EXPECT_NE(message("4,x").find("'x'"), std::string::npos);
  for (const char* bad : {"", "{", "{}", "2[1-", "2^1", "1,,2", "[1-2", "-3", "4^[0-99]", "99999999999"}) {
    EXPECT_THROW(parse_ngram_set(bad), ParseError) << bad;
  }
}

TEST(NGramSet, RejectsInvalidConstruction) {
  EXPECT_THROW(NGramSet(std::vector<std::uint32_t>{}), ConfigError);
  EXPECT_THROW(NGramSet({0}), ConfigError);
  EXPECT_THROW(NGramSet({4, 4}), ConfigError);
  EXPECT_THROW(NGramSet({8, 4}), ConfigError);
}

// ============================================================================
// Extraction
// ============================================================================

TEST(ExtractGrams, Examples) {
  EXPECT_EQ(grams_as_strings("ABC", {2}), (std::vector<std::string>{"AB", "BC"}));
  EXPECT_EQ(grams_as_strings("ACGT", {1, 4}), (std::vector<std::string>{"A", "C", "G", "T", "ACGT"}));
  EXPECT_TRUE(grams_as_strings("", {1, 2, 3}).empty());
  EXPECT_TRUE(grams_as_strings("AB", {3}).empty());
}

TEST(ExtractGrams, BytesAreRaw) {
  const std::string input("a\0B\xff", 4);
  EXPECT_EQ(grams_as_strings(input, {2}),
            (std::vector<std::string>{std::string("a\0", 2), std::string("\0B", 2), std::string("B\xff")}));
}

TEST(ExtractGrams, WindowCompletenessProperty) {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const Bytes input = random_bytes(rng, uniform_below(rng, 64));
    std::vector<std::uint32_t> ls;
    for (std::uint32_t n = 1; n <= 20; ++n) {
      if (uniform_below(rng, 3) == 0) ls.push_back(n);
    }
    if (ls.empty()) ls.push_back(1);
    const NGramSet set(ls);
    const auto grams = extract_grams(input, set);
    std::size_t expected = 0;
    for (auto n : ls) expected += input.size() >= n ? input.size() - n + 1 : 0;
    ASSERT_EQ(grams.size(), expected);
    // Order: ascending n, then ascending offset; each gram is a window of the input.
    std::size_t k = 0;
    for (auto n : ls) {
      for (std::size_t i = 0; i + n <= input.size(); ++i, ++k) {
        ASSERT_EQ(grams[k].size(), n);
        ASSERT_EQ(grams[k].data(), input.data() + i);
      }
    }
  }
}

// ============================================================================
// Hashes
// ============================================================================

TEST(Fnv1a64, PublishedReferenceVectors) {
  EXPECT_EQ(fnv1a64(as_bytes("")), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a64(as_bytes("a")), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(fnv1a64(as_bytes("foobar")), 0x85944171f73967e8ull);
}

TEST(City64, MatchesAbseilCityHash64) {
  Rng rng(11);
  for (std::size_t len = 0; len <= 300; ++len) {
    const Bytes b = random_bytes(rng, len);
    const auto expected =
        absl::hash_internal::CityHash64(reinterpret_cast<const char*>(b.data()), b.size());
    ASSERT_EQ(city64(b), expected) << "length " << len;
  }
  for (int i = 0; i < 200; ++i) {
    const Bytes b = random_bytes(rng, uniform_between(rng, 300, 5000));
    ASSERT_EQ(city64(b), absl::hash_internal::CityHash64(reinterpret_cast<const char*>(b.data()), b.size()));
  }
}

TEST(HashGram, ModuloTable) {
  const auto gram = as_bytes("hello");
  EXPECT_EQ(hash_gram(gram, FeatureIndexer::hashed(HashVariant::kFnv1a64, 1)), 0u);
  EXPECT_EQ(hash_gram(gram, FeatureIndexer::hashed(HashVariant::kCity64, 1)), 0u);
  EXPECT_EQ(hash_gram(gram, FeatureIndexer::hashed(HashVariant::kFnv1a64, 1000)), fnv1a64(gram) % 1000);
  EXPECT_EQ(hash_gram(gram, FeatureIndexer::hashed(HashVariant::kCity64, 1u << 20)), city64(gram) % (1u << 20));
  EXPECT_THROW(FeatureIndexer::hashed(HashVariant::kFnv1a64, 0), ConfigError);
}

TEST(HashGram, SharedTableAcrossLengths) {
  // No per-length salt: the same bytes map to the same row whatever n produced them.
  const auto ix = FeatureIndexer::hashed(HashVariant::kFnv1a64, 1u << 16);
  const NGramSet set{2, 3};
  std::vector<RowIndex> rows;
  ix.index_all(as_bytes("ABAB"), set, rows);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], rows[2]);  // "AB" at offsets 0 and 2
  EXPECT_EQ(rows[0], *ix.index_of(as_bytes("AB")));
}

TEST(HashGram, RangeAndSpreadOverMillionGrams) {
  constexpr std::uint64_t kTable = std::uint64_t{1} << 24;
  constexpr std::size_t kBuckets = 4096;
  for (auto variant : {HashVariant::kFnv1a64, HashVariant::kCity64}) {
    const auto ix = FeatureIndexer::hashed(variant, kTable);
    Rng rng(3);
    std::vector<std::size_t> hist(kBuckets, 0);
    for (int i = 0; i < 1'000'000; ++i) {
      const Bytes g = random_bytes(rng, uniform_between(rng, 4, 16));  // effectively distinct grams
      const auto r = *ix.index_of(g);
      ASSERT_LT(r, kTable);
      ++hist[r / (kTable / kBuckets)];
    }
    const double mean = 1'000'000.0 / kBuckets;
    const double mx = static_cast<double>(*std::max_element(hist.begin(), hist.end()));
    EXPECT_LT(mx / mean, 10.0) << hash_variant_name(variant);
  }
}

TEST(HashGram, Deterministic) {
  const auto a = FeatureIndexer::hashed(HashVariant::kCity64, 12345);
  const auto b = FeatureIndexer::hashed(HashVariant::kCity64, 12345);
  std::vector<RowIndex> ra, rb;
  a.index_all(as_bytes("the quick brown fox"), {1, 3, 5}, ra);
  b.index_all(as_bytes("the quick brown fox"), {1, 3, 5}, rb);
  EXPECT_EQ(ra, rb);
}

// ============================================================================
// Top-K vocabulary
// ============================================================================

TEST(TopK, Examples) {
  {
    const std::vector<std::string> corpus{"AA"};
    const auto ix = build_topk_vocabulary(corpus | std::views::transform(as_bytes), NGramSet{1}, 1);
    ASSERT_EQ(ix.rows(), 1u);
    EXPECT_EQ(to_string(ix.vocabulary()[0]), "A");
    EXPECT_EQ(ix.index_of(as_bytes("A")), 0u);
  }
  {
    const std::vector<std::string> corpus{"AB", "AB", "CD"};
    const auto ix = build_topk_vocabulary(corpus | std::views::transform(as_bytes), NGramSet{2}, 1);
    ASSERT_EQ(ix.rows(), 1u);
    EXPECT_EQ(to_string(ix.vocabulary()[0]), "AB");
    EXPECT_FALSE(ix.index_of(as_bytes("CD")).has_value());
  }
  {
    // Tie: counts AB=1, CD=1; lexicographically smaller wins.
    const std::vector<std::string> corpus{"CD", "AB"};
    const auto ix = build_topk_vocabulary(corpus | std::views::transform(as_bytes), NGramSet{2}, 1);
    EXPECT_EQ(to_string(ix.vocabulary()[0]), "AB");
  }
}

TEST(TopK, KLargerThanDistinctKeepsEverything) {
  const std::vector<std::string> corpus{"ABC"};
  const auto ix = build_topk_vocabulary(corpus | std::views::transform(as_bytes), NGramSet{1}, 100);
  EXPECT_EQ(ix.rows(), 3u);
}

TEST(TopK, Errors) {
  const std::vector<std::string> empty;
  EXPECT_THROW(build_topk_vocabulary(empty | std::views::transform(as_bytes), NGramSet{1}, 1), ConfigError);
  const std::vector<std::string> one{"A"};
  EXPECT_THROW(build_topk_vocabulary(one | std::views::transform(as_bytes), NGramSet{1}, 0), ConfigError);
  EXPECT_THROW(build_topk_vocabulary(one | std::views::transform(as_bytes), NGramSet{2}, 1), ConfigError);
}

TEST(TopK, DropsOutOfVocabularyGrams) {
  const std::vector<std::string> corpus{"AAAB"};
  const auto ix = build_topk_vocabulary(corpus | std::views::transform(as_bytes), NGramSet{1}, 1);
  std::vector<RowIndex> rows;
  ix.index_all(as_bytes("ABBA"), NGramSet{1}, rows);
  EXPECT_EQ(rows, (std::vector<RowIndex>{0, 0}));
}

TEST(TopK, MatchesBruteForceCountSort) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Bytes> corpus(uniform_between(rng, 1, 30));
    for (auto& s : corpus) s = random_bytes(rng, uniform_below(rng, 40), 4);
    const NGramSet set{1, 2, 3};
    const std::size_t k = uniform_between(rng, 1, 60);

    // Oracle: count with std::map, then stable sort by descending count over
    // the lexicographically ordered keys.
    std::map<std::string, std::size_t> counts;
    for (const auto& s : corpus) {
      for (std::uint32_t n : set.lengths()) {
        for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[std::string(s.begin() + i, s.begin() + i + n)];
      }
    }
    if (counts.empty()) continue;
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](auto& a, auto& b) { return a.second > b.second; });
    ranked.resize(std::min(k, ranked.size()));

    const auto ix = build_topk_vocabulary(corpus, set, k);
    ASSERT_EQ(ix.rows(), ranked.size());
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      ASSERT_EQ(to_string(ix.vocabulary()[i]), ranked[i].first);
      ASSERT_EQ(ix.index_of(as_bytes(ranked[i].first)), static_cast<RowIndex>(i));
    }
  }
}

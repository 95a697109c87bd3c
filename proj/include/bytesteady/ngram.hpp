#pragma once

#include <algorithm>
#include <cctype>
#include <concepts>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <ranges>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bytesteady/bytes.hpp"
#include "bytesteady/hash.hpp"

namespace bytesteady {

using RowIndex = std::uint32_t;

// A sorted, duplicate-free, non-empty set of gram lengths.
class NGramSet {
 public:
  explicit NGramSet(std::vector<std::uint32_t> lengths) : lengths_(std::move(lengths)) {
    if (lengths_.empty()) throw ConfigError("n-gram set must not be empty");
    for (std::size_t i = 0; i < lengths_.size(); ++i) {
      if (lengths_[i] == 0) throw ConfigError("n-gram lengths must be positive");
      if (i > 0 && lengths_[i] <= lengths_[i - 1]) {
        throw ConfigError("n-gram lengths must be strictly increasing");
      }
    }
  }

  NGramSet(std::initializer_list<std::uint32_t> lengths)
      : NGramSet(std::vector<std::uint32_t>(lengths)) {}

  const std::vector<std::uint32_t>& lengths() const { return lengths_; }
  std::size_t size() const { return lengths_.size(); }
  std::uint32_t max_length() const { return lengths_.back(); }

  // Number of grams extracted from an input of `len` bytes.
  std::size_t gram_count(std::size_t len) const {
    std::size_t total = 0;
    for (std::uint32_t n : lengths_) {
      if (n <= len) total += len - n + 1;
    }
    return total;
  }

  // Canonical comma list, e.g. "4,8,12,16". parse_ngram_set accepts it back.
  std::string to_string() const {
    std::string out;
    for (std::size_t i = 0; i < lengths_.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(lengths_[i]);
    }
    return out;
  }

  friend bool operator==(const NGramSet&, const NGramSet&) = default;

 private:
  std::vector<std::uint32_t> lengths_;
};

namespace detail {

// Recursive-descent parser for the n-gram shorthand:
//
//   set   := term (',' term)*
//   term  := '{' set '}'              explicit set
//          | '[' a '-' b ']'          a..b
//          | k '[' a '-' b ']'        k*a, k*(a+1), ..., k*b
//          | k '^' '[' a '-' b ']'    k^a, ..., k^b
//          | n
class NGramParser {
 public:
  explicit NGramParser(std::string_view text) : text_(text) {}

  std::vector<std::uint64_t> parse() {
    std::vector<std::uint64_t> out;
    parse_set(out);
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected '" + std::string(text_.substr(pos_, 1)) + "'");
    return out;
  }

 private:
  static constexpr std::uint64_t kMaxLength = std::numeric_limits<std::uint32_t>::max();
  static constexpr std::uint64_t kMaxMembers = 1 << 16;

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("n-gram set \"" + std::string(text_) + "\" at offset " +
                     std::to_string(pos_) + ": " + what);
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool consume(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!consume(c)) {
      fail(pos_ < text_.size() ? "expected '" + std::string(1, c) + "' but found '" +
                                     std::string(text_.substr(pos_, 1)) + "'"
                               : "expected '" + std::string(1, c) + "' at end of input");
    }
  }

  bool at_digit() {
    skip_ws();
    return pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]));
  }

  std::uint64_t number() {
    if (!at_digit()) {
      fail(pos_ < text_.size() ? "expected a number but found '" +
                                     std::string(text_.substr(pos_, 1)) + "'"
                               : "expected a number at end of input");
    }
    const std::size_t start = pos_;
    std::uint64_t v = 0;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
      v = v * 10 + static_cast<std::uint64_t>(text_[pos_] - '0');
      if (v > kMaxLength) fail("number '" + std::string(text_.substr(start, pos_ - start + 1)) + "' too large");
      ++pos_;
    }
    return v;
  }

  std::pair<std::uint64_t, std::uint64_t> range() {
    expect('[');
    const std::size_t start = pos_;
    const std::uint64_t a = number();
    expect('-');
    const std::uint64_t b = number();
    expect(']');
    if (a > b) fail("empty range '" + std::string(text_.substr(start, pos_ - start - 1)) + "'");
    if (b - a >= kMaxMembers) fail("range too large");
    return {a, b};
  }

  void push(std::vector<std::uint64_t>& out, std::uint64_t v, std::string_view token) {
    if (v == 0) fail("non-positive member in '" + std::string(token) + "'");
    if (v > kMaxLength) fail("member too large in '" + std::string(token) + "'");
    out.push_back(v);
  }

  void parse_term(std::vector<std::uint64_t>& out) {
    skip_ws();
    const std::size_t start = pos_;
    auto token = [&] { return text_.substr(start, pos_ - start); };
    if (consume('{')) {
      parse_set(out);
      expect('}');
      return;
    }
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == '[') {
      auto [a, b] = range();
      for (std::uint64_t v = a; v <= b; ++v) push(out, v, token());
      return;
    }
    const std::uint64_t k = number();
    if (consume('^')) {
      auto [a, b] = range();
      for (std::uint64_t e = a; e <= b; ++e) {
        std::uint64_t v = 1;
        for (std::uint64_t i = 0; i < e; ++i) {
          v *= k;
          if (v > kMaxLength) fail("member overflows in '" + std::string(token()) + "'");
        }
        push(out, v, token());
      }
      return;
    }
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == '[') {
      auto [a, b] = range();
      for (std::uint64_t v = a; v <= b; ++v) {
        if (k != 0 && v > kMaxLength / k) fail("member overflows in '" + std::string(token()) + "'");
        push(out, k * v, token());
      }
      return;
    }
    push(out, k, token());
  }

  void parse_set(std::vector<std::uint64_t>& out) {
    parse_term(out);
    while (consume(',')) parse_term(out);
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Expands shorthand such as "4,8,12,16", "{1}", "[1-16]", "2[1-8]" or
// "4^[0-2]" into a sorted, deduplicated NGramSet. Terms may be combined with
// commas ("{1},2^[1-4]").
inline NGramSet parse_ngram_set(std::string_view spec) {
  auto values = detail::NGramParser(spec).parse();
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  if (values.empty()) throw ParseError("n-gram set \"" + std::string(spec) + "\" is empty");
  std::vector<std::uint32_t> lengths(values.begin(), values.end());
  return NGramSet(std::move(lengths));
}

// Calls f(gram) for every window input[i, i+n), ascending n then ascending i.
template <typename F>
void for_each_gram(ByteView input, const NGramSet& set, F&& f) {
  for (std::uint32_t n : set.lengths()) {
    if (n > input.size()) break;
    const std::size_t last = input.size() - n;
    for (std::size_t i = 0; i <= last; ++i) f(input.subspan(i, n));
  }
}

inline std::vector<ByteView> extract_grams(ByteView input, const NGramSet& set) {
  std::vector<ByteView> grams;
  grams.reserve(set.gram_count(input.size()));
  for_each_gram(input, set, [&](ByteView g) { grams.push_back(g); });
  return grams;
}

// Corpus items may be byte views/vectors or character strings.
template <typename T>
concept ByteSequenceLike = std::convertible_to<T, ByteView> || std::convertible_to<T, std::string_view>;

template <typename R>
concept ByteSequenceRange = std::ranges::input_range<R> && ByteSequenceLike<std::ranges::range_reference_t<R>>;

template <ByteSequenceLike T>
ByteView corpus_item(const T& item) {
  if constexpr (std::convertible_to<const T&, ByteView>) {
    return ByteView(item);
  } else {
    return as_bytes(std::string_view(item));
  }
}

// Maps grams to embedding rows, either by hash-modulo over a fixed table or
// through an explicit vocabulary of frequent grams.
class FeatureIndexer {
 public:
  enum class Mode : std::uint8_t { kHashed = 0, kTopK = 1 };

  static FeatureIndexer hashed(HashVariant variant, std::uint64_t table_size) {
    if (table_size == 0) throw ConfigError("hash table size must be positive");
    if (table_size > (std::uint64_t{1} << 32)) {
      throw ConfigError("hash table size must not exceed 2^32");
    }
    FeatureIndexer ix;
    ix.mode_ = Mode::kHashed;
    ix.variant_ = variant;
    ix.table_size_ = table_size;
    return ix;
  }

  // `vocabulary[i]` is the gram that maps to row i. Entries must be distinct.
  static FeatureIndexer topk(std::vector<Bytes> vocabulary) {
    if (vocabulary.empty()) throw ConfigError("top-k vocabulary must not be empty");
    if (vocabulary.size() > std::numeric_limits<RowIndex>::max()) {
      throw ConfigError("top-k vocabulary too large");
    }
    FeatureIndexer ix;
    ix.mode_ = Mode::kTopK;
    ix.vocab_ = std::make_shared<const Vocabulary>(std::move(vocabulary));
    ix.table_size_ = ix.vocab_->grams.size();
    return ix;
  }

  Mode mode() const { return mode_; }
  HashVariant hash_variant() const { return variant_; }

  // Number of embedding rows this indexer addresses.
  std::uint64_t rows() const { return table_size_; }

  const std::vector<Bytes>& vocabulary() const {
    static const std::vector<Bytes> kEmpty;
    return vocab_ ? vocab_->grams : kEmpty;
  }

  // Row for a gram, or nullopt when a top-k vocabulary does not contain it.
  std::optional<RowIndex> index_of(ByteView gram) const {
    if (mode_ == Mode::kHashed) {
      return static_cast<RowIndex>(hash_bytes(variant_, gram) % table_size_);
    }
    auto it = vocab_->lookup.find(std::string_view(reinterpret_cast<const char*>(gram.data()), gram.size()));
    if (it == vocab_->lookup.end()) return std::nullopt;
    return it->second;
  }

  // Appends the row of every gram of `input` (dropped grams are skipped).
  void index_all(ByteView input, const NGramSet& set, std::vector<RowIndex>& out) const {
    out.reserve(out.size() + set.gram_count(input.size()));
    if (mode_ == Mode::kHashed) {
      for_each_gram(input, set, [&](ByteView g) {
        out.push_back(static_cast<RowIndex>(hash_bytes(variant_, g) % table_size_));
      });
    } else {
      for_each_gram(input, set, [&](ByteView g) {
        if (auto r = index_of(g)) out.push_back(*r);
      });
    }
  }

  std::string describe() const {
    if (mode_ == Mode::kHashed) {
      return "hashed(" + std::string(hash_variant_name(variant_)) + ", " +
             std::to_string(table_size_) + ")";
    }
    return "topk(" + std::to_string(table_size_) + ")";
  }

  friend bool operator==(const FeatureIndexer& a, const FeatureIndexer& b) {
    if (a.mode_ != b.mode_ || a.table_size_ != b.table_size_) return false;
    if (a.mode_ == Mode::kHashed) return a.variant_ == b.variant_;
    return a.vocabulary() == b.vocabulary();
  }

 private:
  struct Vocabulary {
    explicit Vocabulary(std::vector<Bytes> g) : grams(std::move(g)) {
      lookup.reserve(grams.size());
      for (std::size_t i = 0; i < grams.size(); ++i) {
        std::string_view key(reinterpret_cast<const char*>(grams[i].data()), grams[i].size());
        if (!lookup.emplace(key, static_cast<RowIndex>(i)).second) {
          throw ConfigError("top-k vocabulary contains a duplicate gram");
        }
      }
    }
    Vocabulary(const Vocabulary&) = delete;
    Vocabulary& operator=(const Vocabulary&) = delete;

    std::vector<Bytes> grams;
    std::unordered_map<std::string_view, RowIndex> lookup;  // views into `grams`
  };

  FeatureIndexer() = default;

  Mode mode_ = Mode::kHashed;
  HashVariant variant_ = HashVariant::kFnv1a64;
  std::uint64_t table_size_ = 1;
  std::shared_ptr<const Vocabulary> vocab_;
};

inline RowIndex hash_gram(ByteView gram, const FeatureIndexer& indexer) {
  if (indexer.mode() != FeatureIndexer::Mode::kHashed) {
    throw ConfigError("hash_gram requires a hashed indexer");
  }
  return *indexer.index_of(gram);
}

// Keeps the k most frequent grams over the whole set (not per length).
// Ties go to the lexicographically smaller gram; row order is descending
// frequency then lexicographic.
template <ByteSequenceRange Corpus>
FeatureIndexer build_topk_vocabulary(Corpus&& corpus, const NGramSet& set, std::size_t k) {
  if (k == 0) throw ConfigError("top-k size must be positive");
  std::unordered_map<std::string, std::uint64_t> counts;
  std::size_t sequences = 0;
  for (auto&& item : corpus) {
    const ByteView seq = corpus_item(item);
    ++sequences;
    for_each_gram(seq, set, [&](ByteView g) { ++counts[to_string(g)]; });
  }
  if (sequences == 0) throw ConfigError("cannot build a top-k vocabulary from an empty corpus");
  if (counts.empty()) throw ConfigError("corpus yields no grams for n-gram set " + set.to_string());

  std::vector<std::pair<const std::string*, std::uint64_t>> ranked;
  ranked.reserve(counts.size());
  for (const auto& [gram, c] : counts) ranked.emplace_back(&gram, c);
  auto better = [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return *a.first < *b.first;
  };
  const std::size_t keep = std::min(k, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep), ranked.end(), better);

  std::vector<Bytes> vocab;
  vocab.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) vocab.push_back(to_bytes(*ranked[i].first));
  return FeatureIndexer::topk(std::move(vocab));
}

}  // namespace bytesteady

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bytesteady/bytes.hpp"
#include "bytesteady/hash.hpp"
#include "bytesteady/ngram.hpp"

namespace bytesteady {

// Huffman compression of byte sequences over multi-byte symbols.
//
// Symbols are non-overlapping m-byte chunks; a trailing remainder shorter
// than m, and any chunk missing from the dictionary, is coded one byte at a
// time. Two tree shapes are supported: binary (codes are bit strings, packed
// MSB-first) and 256-ary (codes are byte strings).
//
// Every codec carries two code tables built from the same dictionary:
//
//   primary   symbols observed in the dictionary corpus, plus single bytes
//             that occur inside an observed multi-byte symbol
//   fallback  every dictionary symbol including the 256 floored single bytes
//
// A frame is coded with the primary table whenever all of its symbols have a
// primary code and with the fallback table otherwise; the frame header says
// which. In-distribution input therefore pays nothing for the escape
// capability, while any byte sequence remains encodable.

enum class CodeTable : std::uint8_t { kPrimary = 0, kFallback = 1 };

using Code = std::vector<std::uint8_t>;  // digits in [0, arity)

// Huffman tree over symbols 0..n-1 with the given weights. Symbols with
// weight 0 are excluded when `skip_zero` is set.
//
// For arity > 2 the leaf list is padded with zero-weight dummies until
// (leaves - 1) % (arity - 1) == 0; dummies get no code. Merge order is
// (weight, creation order): dummies are created first, then real leaves in
// symbol order, then internal nodes as they are formed, so the result is
// fully deterministic.
class CodeTree {
 public:
  static constexpr std::int64_t kNone = -1;

  CodeTree() = default;

  CodeTree(std::span<const std::uint64_t> weights, unsigned arity, bool skip_zero) : arity_(arity) {
    if (arity < 2 || arity > 256) throw ConfigError("Huffman arity must be in [2, 256]");
    codes_.assign(weights.size(), Code{});

    struct Node {
      std::uint64_t weight;
      std::uint64_t order;
      std::int64_t id;  // >= 0 internal node, < 0 leaf: -(symbol + 2), kNone dummy
    };
    struct Later {
      bool operator()(const Node& a, const Node& b) const {
        if (a.weight != b.weight) return a.weight > b.weight;
        return a.order > b.order;
      }
    };

    std::vector<std::size_t> live;
    for (std::size_t s = 0; s < weights.size(); ++s) {
      if (!skip_zero || weights[s] > 0) live.push_back(s);
    }
    if (live.empty()) return;

    std::priority_queue<Node, std::vector<Node>, Later> heap;
    std::uint64_t order = 0;
    if (live.size() == 1) {
      // A lone symbol still needs a one-digit code.
      children_.assign(arity_, kNone);
      children_[0] = leaf_id(live[0]);
      root_ = 0;
      assign_codes();
      return;
    }
    std::size_t total = live.size();
    while ((total - 1) % (arity_ - 1) != 0) {
      heap.push(Node{0, order++, kNone});
      ++total;
    }
    for (std::size_t s : live) heap.push(Node{weights[s], order++, leaf_id(s)});

    while (heap.size() > 1) {
      const std::int64_t id = static_cast<std::int64_t>(children_.size() / arity_);
      children_.resize(children_.size() + arity_, kNone);
      std::uint64_t sum = 0;
      for (unsigned c = 0; c < arity_; ++c) {
        Node n = heap.top();
        heap.pop();
        sum += n.weight;
        children_[static_cast<std::size_t>(id) * arity_ + c] = n.id;
      }
      heap.push(Node{sum, order++, id});
    }
    root_ = heap.top().id;
    assign_codes();
  }

  unsigned arity() const { return arity_; }
  bool empty() const { return root_ == kNone; }
  std::size_t internal_nodes() const { return arity_ == 0 ? 0 : children_.size() / arity_; }

  // Empty when the symbol has no code in this tree.
  const Code& code(std::size_t symbol) const { return codes_[symbol]; }
  bool has_code(std::size_t symbol) const { return !codes_[symbol].empty(); }
  std::size_t symbols() const { return codes_.size(); }

  std::int64_t root() const { return root_; }

  // Child of an internal node: >= 0 internal, kNone absent, otherwise a leaf.
  std::int64_t child(std::int64_t node, unsigned digit) const {
    return children_[static_cast<std::size_t>(node) * arity_ + digit];
  }

  // When every leaf hangs directly off the root, moves leaf s to digit
  // digit_of(s) (distinct, < arity). Lengths are unchanged. Returns false and
  // leaves the tree untouched otherwise.
  template <typename DigitOf>
  bool place_root_leaves(DigitOf&& digit_of) {
    if (empty() || internal_nodes() != 1) return false;
    std::vector<std::int64_t> slots(arity_, kNone);
    for (unsigned d = 0; d < arity_; ++d) {
      const std::int64_t c = child(root_, d);
      if (c == kNone) continue;
      const unsigned to = digit_of(leaf_symbol(c));
      if (to >= arity_ || slots[to] != kNone) return false;
      slots[to] = c;
    }
    children_ = std::move(slots);
    for (auto& code : codes_) code.clear();
    assign_codes();
    return true;
  }

  static bool is_leaf(std::int64_t id) { return id <= -2; }
  static std::size_t leaf_symbol(std::int64_t id) { return static_cast<std::size_t>(-(id + 2)); }

 private:
  static std::int64_t leaf_id(std::size_t symbol) { return -static_cast<std::int64_t>(symbol) - 2; }

  void assign_codes() {
    Code prefix;
    std::vector<std::pair<std::int64_t, Code>> stack{{root_, {}}};
    while (!stack.empty()) {
      auto [node, code] = std::move(stack.back());
      stack.pop_back();
      for (unsigned d = 0; d < arity_; ++d) {
        const std::int64_t c = child(node, d);
        if (c == kNone) continue;
        Code next = code;
        next.push_back(static_cast<std::uint8_t>(d));
        if (is_leaf(c)) {
          codes_[leaf_symbol(c)] = std::move(next);
        } else {
          stack.emplace_back(c, std::move(next));
        }
      }
    }
  }

  unsigned arity_ = 2;
  std::int64_t root_ = kNone;
  std::vector<std::int64_t> children_;
  std::vector<Code> codes_;
};

// Code length per symbol (0 for symbols without a code).
inline std::vector<std::size_t> huffman_code_lengths(std::span<const std::uint64_t> weights,
                                                     unsigned arity) {
  CodeTree tree(weights, arity, /*skip_zero=*/true);
  std::vector<std::size_t> lengths(weights.size());
  for (std::size_t s = 0; s < weights.size(); ++s) lengths[s] = tree.code(s).size();
  return lengths;
}

// Symbol frequencies over non-overlapping m-byte chunks, with every
// single-byte symbol floored at count 1 (observed count + 1).
// Lexicographic order on byte strings (shorter prefix first).
struct ByteOrder {
  bool operator()(const Bytes& a, const Bytes& b) const {
    const std::size_t n = std::min(a.size(), b.size());
    const int c = n == 0 ? 0 : std::memcmp(a.data(), b.data(), n);
    return c < 0 || (c == 0 && a.size() < b.size());
  }
};

class SymbolDictionary {
 public:
  using Table = std::map<Bytes, std::uint64_t, ByteOrder>;

  explicit SymbolDictionary(std::uint32_t m) : m_(check_m(m)) {
    for (int b = 0; b < 256; ++b) frequencies_.emplace(Bytes{static_cast<std::uint8_t>(b)}, 1);
  }

  // Rebuilds from stored frequencies (floor already applied); validates invariants.
  static SymbolDictionary from_frequencies(std::uint32_t m, Table frequencies) {
    SymbolDictionary d(m);
    for (int b = 0; b < 256; ++b) {
      auto it = frequencies.find(Bytes{static_cast<std::uint8_t>(b)});
      if (it == frequencies.end() || it->second == 0) {
        throw FormatError("dictionary lacks single-byte symbol " + std::to_string(b));
      }
    }
    for (const auto& [sym, count] : frequencies) {
      if (sym.size() != 1 && sym.size() != m) {
        throw FormatError("dictionary symbol of length " + std::to_string(sym.size()) +
                          " with m = " + std::to_string(m));
      }
      if (count == 0) throw FormatError("dictionary symbol with zero count");
    }
    d.frequencies_ = std::move(frequencies);
    return d;
  }

  template <ByteSequenceRange Corpus>
  static SymbolDictionary build(Corpus&& corpus, std::uint32_t m) {
    SymbolDictionary d(m);
    for (auto&& item : corpus) d.add(corpus_item(item));
    return d;
  }

  void add(ByteView seq) {
    std::size_t i = 0;
    for (; i + m_ <= seq.size(); i += m_) ++frequencies_[Bytes(seq.begin() + i, seq.begin() + i + m_)];
    for (; i < seq.size(); ++i) ++frequencies_[Bytes{seq[i]}];
  }

  std::uint32_t m() const { return m_; }
  const Table& frequencies() const { return frequencies_; }

  std::uint64_t frequency(ByteView symbol) const {
    auto it = frequencies_.find(Bytes(symbol.begin(), symbol.end()));
    return it == frequencies_.end() ? 0 : it->second;
  }

  // Count actually seen in the corpus (the floor removed).
  std::uint64_t observed(ByteView symbol) const {
    const std::uint64_t f = frequency(symbol);
    return symbol.size() == 1 ? f - 1 : f;
  }

  friend bool operator==(const SymbolDictionary&, const SymbolDictionary&) = default;

 private:
  static std::uint32_t check_m(std::uint32_t m) {
    if (m == 0) throw ConfigError("symbol length m must be >= 1");
    return m;
  }

  std::uint32_t m_;
  Table frequencies_;
};

struct FrameHeader {
  unsigned arity = 2;
  std::uint32_t m = 1;
  CodeTable table = CodeTable::kPrimary;
  std::uint64_t length = 0;  // bits for arity 2, bytes for arity 256
};

struct CompressedFrame {
  FrameHeader header;
  Bytes payload;
};

namespace huffman_detail {

class BitWriter {
 public:
  explicit BitWriter(Bytes& out) : out_(out) {}
  void put(std::uint8_t bit) {
    if (used_ == 0) out_.push_back(0);
    if (bit) out_.back() |= static_cast<std::uint8_t>(0x80u >> used_);
    used_ = (used_ + 1) & 7;
    ++bits_;
  }
  std::uint64_t bits() const { return bits_; }

 private:
  Bytes& out_;
  unsigned used_ = 0;
  std::uint64_t bits_ = 0;
};

}  // namespace huffman_detail

class HuffmanCodec {
 public:
  static HuffmanCodec build(SymbolDictionary dict, unsigned arity) {
    if (arity != 2 && arity != 256) throw ConfigError("Huffman arity must be 2 or 256");
    HuffmanCodec c(std::move(dict), arity);
    return c;
  }

  unsigned arity() const { return arity_; }
  std::uint32_t m() const { return dict_.m(); }
  const SymbolDictionary& dictionary() const { return dict_; }
  const std::vector<Bytes>& symbols() const { return symbols_; }
  const CodeTree& tree(CodeTable t) const { return t == CodeTable::kPrimary ? primary_ : fallback_; }

  std::optional<std::size_t> symbol_id(ByteView symbol) const {
    if (symbol.size() == 1) return single_id_[symbol[0]];
    auto it = multi_id_.find(std::string_view(reinterpret_cast<const char*>(symbol.data()), symbol.size()));
    if (it == multi_id_.end()) return std::nullopt;
    return it->second;
  }

  // Code of a symbol in a table; nullptr when it has none.
  const Code* code(CodeTable t, ByteView symbol) const {
    auto id = symbol_id(symbol);
    if (!id || !tree(t).has_code(*id)) return nullptr;
    return &tree(t).code(*id);
  }

  CompressedFrame encode(ByteView input) const {
    std::vector<std::size_t> tokens;
    CodeTable table = CodeTable::kPrimary;
    if (!tokenize(input, primary_, tokens)) {
      table = CodeTable::kFallback;
      tokens.clear();
      tokenize(input, fallback_, tokens);
    }
    const CodeTree& t = tree(table);
    CompressedFrame frame;
    frame.header = FrameHeader{arity_, m(), table, 0};
    if (arity_ == 2) {
      huffman_detail::BitWriter w(frame.payload);
      for (std::size_t s : tokens) {
        for (std::uint8_t bit : t.code(s)) w.put(bit);
      }
      frame.header.length = w.bits();
    } else {
      for (std::size_t s : tokens) {
        const Code& c = t.code(s);
        frame.payload.insert(frame.payload.end(), c.begin(), c.end());
      }
      frame.header.length = frame.payload.size();
    }
    return frame;
  }

  Bytes decode(const CompressedFrame& frame) const {
    const FrameHeader& h = frame.header;
    if (h.arity != arity_) {
      throw FormatError("frame arity " + std::to_string(h.arity) + " does not match codec arity " +
                        std::to_string(arity_));
    }
    if (h.m != m()) throw FormatError("frame symbol length does not match codec");
    if (h.table != CodeTable::kPrimary && h.table != CodeTable::kFallback) {
      throw FormatError("bad code table in frame header");
    }
    const std::uint64_t need = arity_ == 2 ? (h.length + 7) / 8 : h.length;
    if (frame.payload.size() < need) throw FormatError("truncated payload");
    if (frame.payload.size() > need) throw FormatError("trailing bytes beyond declared payload length");

    const CodeTree& t = tree(h.table);
    Bytes out;
    if (h.length == 0) return out;
    if (t.empty()) throw FormatError("frame uses an empty code table");

    std::int64_t node = t.root();
    auto step = [&](unsigned digit) {
      const std::int64_t next = t.child(node, digit);
      if (next == CodeTree::kNone) throw FormatError("invalid code in payload");
      if (CodeTree::is_leaf(next)) {
        const Bytes& sym = symbols_[CodeTree::leaf_symbol(next)];
        out.insert(out.end(), sym.begin(), sym.end());
        node = t.root();
      } else {
        node = next;
      }
    };
    if (arity_ == 2) {
      for (std::uint64_t i = 0; i < h.length; ++i) {
        step((frame.payload[i >> 3] >> (7 - (i & 7))) & 1u);
      }
      if (h.length % 8 != 0) {
        const std::uint8_t pad_mask = static_cast<std::uint8_t>(0xffu >> (h.length % 8));
        if (frame.payload.back() & pad_mask) throw FormatError("nonzero padding bits");
      }
    } else {
      for (std::uint8_t d : frame.payload) step(d);
    }
    if (node != t.root()) throw FormatError("truncated payload: ends inside a code");
    return out;
  }

  // Short stable identifier for provenance records.
  std::string id() const {
    std::ostringstream s;
    s << "huffman-" << (arity_ == 2 ? "bit" : "byte") << "-m" << m() << "-";
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [sym, count] : dict_.frequencies()) {
      h = (h ^ fnv1a64(sym)) * 0x100000001b3ull;
      h = (h ^ count) * 0x100000001b3ull;
    }
    s << std::hex << (h & 0xffffffffull);
    return s.str();
  }

 private:
  HuffmanCodec(SymbolDictionary dict, unsigned arity) : dict_(std::move(dict)), arity_(arity) {
    single_id_.fill(0);
    // Bytes that occur inside an observed multi-byte symbol keep their floor
    // weight in the primary table, so splitting an unseen chunk never forces
    // the fallback table on data that only uses corpus bytes.
    std::array<bool, 256> inside{};
    for (const auto& [sym, count] : dict_.frequencies()) {
      if (sym.size() > 1) {
        for (std::uint8_t b : sym) inside[b] = true;
      }
    }
    std::vector<std::uint64_t> observed;
    std::vector<std::uint64_t> floored;
    for (const auto& [sym, count] : dict_.frequencies()) {
      const std::size_t id = symbols_.size();
      symbols_.push_back(sym);
      if (sym.size() == 1) {
        single_id_[sym[0]] = id;
      } else {
        multi_id_.emplace(std::string(sym.begin(), sym.end()), id);
      }
      floored.push_back(count);
      if (sym.size() == 1) {
        observed.push_back(count > 1 ? count - 1 : (inside[sym[0]] ? 1 : 0));
      } else {
        observed.push_back(count);
      }
    }
    primary_ = CodeTree(observed, arity_, /*skip_zero=*/true);
    fallback_ = CodeTree(floored, arity_, /*skip_zero=*/true);
    if (arity_ == 256 && dict_.m() == 1) {
      // One level of single bytes: code each byte as itself.
      auto own_value = [this](std::size_t id) { return static_cast<unsigned>(symbols_[id][0]); };
      primary_.place_root_leaves(own_value);
      fallback_.place_root_leaves(own_value);
    }
  }

  // Greedy m-byte chunks, falling back to single bytes; false if some single
  // byte has no code in `t`.
  bool tokenize(ByteView input, const CodeTree& t, std::vector<std::size_t>& tokens) const {
    const std::size_t m = dict_.m();
    auto singles = [&](std::size_t from, std::size_t to) {
      for (std::size_t i = from; i < to; ++i) {
        const std::size_t id = single_id_[input[i]];
        if (!t.has_code(id)) return false;
        tokens.push_back(id);
      }
      return true;
    };
    std::size_t i = 0;
    for (; i + m <= input.size(); i += m) {
      if (m > 1) {
        if (auto id = symbol_id(input.subspan(i, m)); id && t.has_code(*id)) {
          tokens.push_back(*id);
          continue;
        }
      }
      if (!singles(i, i + m)) return false;
    }
    return singles(i, input.size());
  }

  SymbolDictionary dict_;
  unsigned arity_;
  std::vector<Bytes> symbols_;
  std::array<std::size_t, 256> single_id_{};
  struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  std::unordered_map<std::string, std::size_t, StringHash, std::equal_to<>> multi_id_;
  CodeTree primary_;
  CodeTree fallback_;
};

// Frame serialization:
//   u8 arity tag (1 = binary, 8 = 256-ary), u8 table, varint m, varint length, payload
inline Bytes serialize_frame(const CompressedFrame& f) {
  std::ostringstream out(std::ios::binary);
  out.put(static_cast<char>(f.header.arity == 2 ? 1 : 8));
  out.put(static_cast<char>(f.header.table));
  io::write_varint(out, f.header.m);
  io::write_varint(out, f.header.length);
  out.write(reinterpret_cast<const char*>(f.payload.data()), static_cast<std::streamsize>(f.payload.size()));
  const std::string s = out.str();
  return Bytes(s.begin(), s.end());
}

inline CompressedFrame parse_frame(ByteView bytes) {
  std::istringstream in(to_string(bytes), std::ios::binary);
  CompressedFrame f;
  const int tag = in.get();
  if (tag == 1) {
    f.header.arity = 2;
  } else if (tag == 8) {
    f.header.arity = 256;
  } else {
    throw FormatError("bad arity tag in frame header");
  }
  const int table = in.get();
  if (table != 0 && table != 1) throw FormatError("bad code table in frame header");
  f.header.table = static_cast<CodeTable>(table);
  const std::uint64_t m = io::read_varint(in);
  if (m == 0 || m > std::numeric_limits<std::uint32_t>::max()) throw FormatError("bad m in frame header");
  f.header.m = static_cast<std::uint32_t>(m);
  f.header.length = io::read_varint(in);
  const auto consumed = static_cast<std::size_t>(in.tellg());
  f.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(consumed), bytes.end());
  return f;
}

// Sum of payload bytes over sum of input bytes; headers excluded.
template <ByteSequenceRange Corpus>
double compression_ratio(const HuffmanCodec& codec, Corpus&& corpus) {
  std::uint64_t original = 0;
  std::uint64_t compressed = 0;
  for (auto&& item : corpus) {
    const ByteView seq = corpus_item(item);
    original += seq.size();
    compressed += codec.encode(seq).payload.size();
  }
  if (original == 0) throw ConfigError("compression ratio of an empty corpus is undefined");
  return static_cast<double>(compressed) / static_cast<double>(original);
}

// Codec file, little-endian:
//   "BSHF", u32 version = 1, u16 arity, u32 m, u64 entries,
//   entries x (varint length, symbol bytes, varint count)   lexicographic order
// Counts include the single-byte floor; the trees are rebuilt on load.
namespace codec_format {
inline constexpr std::string_view kMagic = "BSHF";
inline constexpr std::uint32_t kVersion = 1;
}  // namespace codec_format

inline void save_codec(std::ostream& out, const HuffmanCodec& codec) {
  using namespace io;
  write_magic(out, codec_format::kMagic);
  write_le<std::uint32_t>(out, codec_format::kVersion);
  write_le<std::uint16_t>(out, static_cast<std::uint16_t>(codec.arity()));
  write_le<std::uint32_t>(out, codec.m());
  const auto& table = codec.dictionary().frequencies();
  write_le<std::uint64_t>(out, table.size());
  for (const auto& [sym, count] : table) {
    write_blob(out, sym);
    write_varint(out, count);
  }
  if (!out) throw IoError("failed to write codec");
}

inline HuffmanCodec load_codec(std::istream& in) {
  using namespace io;
  expect_magic(in, codec_format::kMagic);
  if (read_le<std::uint32_t>(in) != codec_format::kVersion) throw FormatError("unsupported codec version");
  const auto arity = read_le<std::uint16_t>(in);
  if (arity != 2 && arity != 256) throw FormatError("bad codec arity " + std::to_string(arity));
  const auto m = read_le<std::uint32_t>(in);
  if (m == 0) throw FormatError("bad codec symbol length");
  const auto entries = read_le<std::uint64_t>(in);
  SymbolDictionary::Table table;
  for (std::uint64_t i = 0; i < entries; ++i) {
    Bytes sym = read_blob(in, m);
    const std::uint64_t count = read_varint(in);
    if (!table.emplace(std::move(sym), count).second) throw FormatError("duplicate codec symbol");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after codec");
  return HuffmanCodec::build(SymbolDictionary::from_frequencies(m, std::move(table)), arity);
}

inline void save_codec(const std::string& path, const HuffmanCodec& codec) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  save_codec(out, codec);
}

inline HuffmanCodec load_codec(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return load_codec(in);
}

}  // namespace bytesteady

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bytesteady/bytes.hpp"
#include "bytesteady/huffman.hpp"
#include "bytesteady/model.hpp"
#include "bytesteady/random.hpp"

namespace bytesteady {

struct Sample {
  ClassId label = 0;
  Bytes payload;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Provenance {
  std::string source;
  std::string format;
  std::string codec;  // empty when payloads are raw
};

struct Dataset {
  std::uint32_t num_classes = 0;
  std::vector<Sample> samples;
  Provenance provenance;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  void validate() const {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].label >= num_classes) {
        throw ConfigError("sample " + std::to_string(i) + " has label " +
                          std::to_string(samples[i].label) + " but the dataset declares " +
                          std::to_string(num_classes) + " classes");
      }
    }
  }

  // Payload views, usable as a corpus for dictionaries and vocabularies.
  std::vector<ByteView> payloads() const {
    std::vector<ByteView> v;
    v.reserve(samples.size());
    for (const auto& s : samples) v.emplace_back(s.payload);
    return v;
  }
};

// ---------------------------------------------------------------------------
// TSV: "<label>\t<payload>\n" with \t, \n and \\ escaped in the payload.

inline std::string escape_payload(ByteView payload) {
  std::string out;
  out.reserve(payload.size());
  for (std::uint8_t b : payload) {
    switch (b) {
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\\': out += "\\\\"; break;
      default: out += static_cast<char>(b);
    }
  }
  return out;
}

// Throws ParseError with a short reason; callers add the line number.
inline Bytes unescape_payload(std::string_view text) {
  Bytes out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c != '\\') {
      out.push_back(static_cast<std::uint8_t>(c));
      continue;
    }
    if (++i == text.size()) throw ParseError("dangling backslash");
    switch (text[i]) {
      case 't': out.push_back('\t'); break;
      case 'n': out.push_back('\n'); break;
      case '\\': out.push_back('\\'); break;
      default: throw ParseError(std::string("bad escape '\\") + text[i] + "'");
    }
  }
  return out;
}

inline Dataset parse_tsv(std::istream& in, const std::string& source = "<stream>",
                         std::optional<std::uint32_t> num_classes = std::nullopt) {
  Dataset ds;
  ds.provenance = {source, "tsv", ""};
  std::string line;
  std::size_t lineno = 0;
  std::uint32_t max_label = 0;
  auto fail = [&](const std::string& why) {
    throw ParseError(source + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) fail("missing tab separator");
    if (tab == 0) fail("missing label");
    std::uint64_t label = 0;
    for (std::size_t i = 0; i < tab; ++i) {
      if (!std::isdigit(static_cast<unsigned char>(line[i]))) fail("label is not a non-negative integer");
      label = label * 10 + static_cast<std::uint64_t>(line[i] - '0');
      if (label > std::numeric_limits<ClassId>::max() - 1) fail("label too large");
    }
    Sample s;
    s.label = static_cast<ClassId>(label);
    try {
      s.payload = unescape_payload(std::string_view(line).substr(tab + 1));
    } catch (const ParseError& e) {
      fail(e.what());
    }
    max_label = std::max(max_label, s.label);
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw ParseError(source + ": no samples");
  ds.num_classes = num_classes.value_or(max_label + 1);
  ds.validate();
  return ds;
}

inline void write_tsv(std::ostream& out, const Dataset& ds) {
  for (const auto& s : ds.samples) out << s.label << '\t' << escape_payload(s.payload) << '\n';
  if (!out) throw IoError("failed to write TSV");
}

inline Dataset load_tsv(const std::string& path, std::optional<std::uint32_t> num_classes = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return parse_tsv(in, path, num_classes);
}

// ---------------------------------------------------------------------------
// Binary records:
//   "BSDS", u32 version = 1, u32 classes, u64 count,
//   count x (varint label, varint payload length, payload bytes)

namespace dataset_format {
inline constexpr std::string_view kMagic = "BSDS";
inline constexpr std::uint32_t kVersion = 1;
}  // namespace dataset_format

inline void write_binary(std::ostream& out, const Dataset& ds) {
  using namespace io;
  write_magic(out, dataset_format::kMagic);
  write_le<std::uint32_t>(out, dataset_format::kVersion);
  write_le<std::uint32_t>(out, ds.num_classes);
  write_le<std::uint64_t>(out, ds.samples.size());
  for (const auto& s : ds.samples) {
    write_varint(out, s.label);
    write_blob(out, s.payload);
  }
  if (!out) throw IoError("failed to write dataset");
}

inline Dataset read_binary(std::istream& in, const std::string& source = "<stream>") {
  using namespace io;
  expect_magic(in, dataset_format::kMagic);
  if (read_le<std::uint32_t>(in) != dataset_format::kVersion) throw FormatError("unsupported dataset version");
  Dataset ds;
  ds.provenance = {source, "bsds", ""};
  ds.num_classes = read_le<std::uint32_t>(in);
  const auto n = read_le<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    Sample s;
    const std::uint64_t label = read_varint(in);
    if (label >= ds.num_classes) throw FormatError("record " + std::to_string(i) + ": label out of range");
    s.label = static_cast<ClassId>(label);
    s.payload = read_blob(in);
    ds.samples.push_back(std::move(s));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after dataset");
  return ds;
}

// ---------------------------------------------------------------------------
// FASTA

struct FastaOptions {
  // Header field "key=value" that carries the class.
  std::string label_key = "cls";
  // Optional name -> id mapping for non-numeric values.
  std::map<std::string, ClassId> class_names;
  // Reject bytes outside {A,C,G,T,N} after upper-casing.
  bool strict = true;
  std::optional<std::uint32_t> num_classes;
};

// One class name per line; line i (0-based) is class i.
inline std::map<std::string, ClassId> load_class_names(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::map<std::string, ClassId> names;
  std::string line;
  ClassId id = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!names.emplace(line, id++).second) throw ParseError(path + ": duplicate class name '" + line + "'");
  }
  return names;
}

inline Dataset parse_fasta(std::istream& in, const FastaOptions& opt, const std::string& source = "<stream>") {
  Dataset ds;
  ds.provenance = {source, "fasta", ""};
  std::uint32_t max_label = 0;
  std::optional<std::string> header;
  Bytes seq;
  std::size_t lineno = 0;

  auto record_name = [](const std::string& h) {
    const auto sp = h.find_first_of(" \t");
    return h.substr(0, sp);
  };
  auto label_of = [&](const std::string& h) -> ClassId {
    std::istringstream fields(h);
    std::string tok;
    const std::string prefix = opt.label_key + "=";
    while (fields >> tok) {
      if (tok.rfind(prefix, 0) != 0) continue;
      const std::string value = tok.substr(prefix.size());
      if (!value.empty() && std::all_of(value.begin(), value.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
        if (value.size() > 9) break;
        return static_cast<ClassId>(std::stoul(value));
      }
      if (auto it = opt.class_names.find(value); it != opt.class_names.end()) return it->second;
      throw ParseError(source + ": record '" + record_name(h) + "': unknown class '" + value + "'");
    }
    throw ParseError(source + ": record '" + record_name(h) + "' has no '" + opt.label_key + "=' field");
  };
  auto flush = [&] {
    if (!header) return;
    if (seq.empty()) throw ParseError(source + ": record '" + record_name(*header) + "' has an empty sequence");
    Sample s{label_of(*header), std::move(seq)};
    max_label = std::max(max_label, s.label);
    ds.samples.push_back(std::move(s));
    seq.clear();
  };

  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line[0] == '>') {
      flush();
      header = line.substr(1);
      continue;
    }
    if (line.empty()) continue;
    if (!header) throw ParseError(source + ":" + std::to_string(lineno) + ": sequence data before first header");
    for (char c : line) {
      const auto u = static_cast<std::uint8_t>(std::toupper(static_cast<unsigned char>(c)));
      if (opt.strict && u != 'A' && u != 'C' && u != 'G' && u != 'T' && u != 'N') {
        throw ParseError(source + ":" + std::to_string(lineno) + ": record '" + record_name(*header) +
                         "': invalid nucleotide '" + std::string(1, c) + "'");
      }
      seq.push_back(u);
    }
  }
  flush();
  if (ds.samples.empty()) throw ParseError(source + ": no samples");
  ds.num_classes = opt.num_classes.value_or(max_label + 1);
  ds.validate();
  return ds;
}

inline Dataset load_fasta(const std::string& path, const FastaOptions& opt = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return parse_fasta(in, opt, path);
}

// ---------------------------------------------------------------------------
// Format dispatch by content/extension: BSDS magic -> binary; .fa/.fasta/.fna
// -> FASTA; anything else -> TSV.

inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

inline Dataset load_dataset(const std::string& path, const FastaOptions& fasta = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  const bool is_binary = in.gcount() == 4 && std::string_view(magic, 4) == dataset_format::kMagic;
  in.clear();
  in.seekg(0);
  if (is_binary) return read_binary(in, path);
  if (ends_with(path, ".fa") || ends_with(path, ".fasta") || ends_with(path, ".fna")) {
    return parse_fasta(in, fasta, path);
  }
  return parse_tsv(in, path);
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  if (ends_with(path, ".bsds")) {
    write_binary(out, ds);
  } else {
    write_tsv(out, ds);
  }
}

// ---------------------------------------------------------------------------

// Shuffled split; the first part has round-half-up(fraction * N) samples.
// Each part keeps the original relative order of its samples.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must be in (0, 1)");
  if (ds.size() < 2) throw ConfigError("need at least 2 samples to split");
  const std::size_t n = ds.size();
  const auto first = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
  Rng rng(seed);
  auto perm = permutation(n, rng);
  std::vector<char> in_first(n, 0);
  for (std::size_t i = 0; i < first; ++i) in_first[perm[i]] = 1;

  Dataset a, b;
  a.num_classes = b.num_classes = ds.num_classes;
  a.provenance = b.provenance = ds.provenance;
  for (std::size_t i = 0; i < n; ++i) (in_first[i] ? a : b).samples.push_back(ds.samples[i]);
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Synthetic generators.

enum class SyntheticKind { kSeparableText, kDnaUniform, kDnaMotif };

inline std::optional<SyntheticKind> parse_synthetic_kind(std::string_view s) {
  if (s == "separable-text") return SyntheticKind::kSeparableText;
  if (s == "dna-uniform") return SyntheticKind::kDnaUniform;
  if (s == "dna-motif") return SyntheticKind::kDnaMotif;
  return std::nullopt;
}

struct SyntheticParams {
  SyntheticKind kind = SyntheticKind::kSeparableText;
  std::size_t samples = 1000;
  std::uint32_t classes = 2;
  // Length range of the random noise / background around planted markers.
  std::size_t min_length = 8;
  std::size_t max_length = 32;
  // separable-text: each class owns `markers_per_class` byte strings of
  // length [min_marker, max_marker]; each sample gets one phrase of `plants`
  // markers drawn with replacement, inserted as a block at a random offset.
  std::size_t markers_per_class = 2;
  std::size_t min_marker = 4;
  std::size_t max_marker = 8;
  std::size_t plants = 6;
  // dna-motif: one motif per class. When the length is a multiple of 4 every
  // motif has identical nucleotide composition, so single-byte statistics
  // carry no class signal.
  std::size_t motif_length = 16;
  std::uint64_t seed = 1;
};

namespace synth_detail {

inline constexpr std::uint8_t kNucleotides[4] = {'A', 'C', 'G', 'T'};

inline bool contains(ByteView hay, ByteView needle) {
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

inline Bytes random_dna(Rng& rng, std::size_t n) {
  Bytes b(n);
  for (auto& x : b) x = kNucleotides[uniform_below(rng, 4)];
  return b;
}

inline void insert_at_random(Rng& rng, Bytes& host, ByteView piece) {
  const std::size_t at = uniform_below(rng, host.size() + 1);
  host.insert(host.begin() + static_cast<std::ptrdiff_t>(at), piece.begin(), piece.end());
}

}  // namespace synth_detail

inline Dataset generate_synthetic(const SyntheticParams& p) {
  using namespace synth_detail;
  if (p.samples == 0) throw ConfigError("synthetic dataset needs at least one sample");
  if (p.classes == 0) throw ConfigError("synthetic dataset needs at least one class");
  if (p.min_length > p.max_length) throw ConfigError("min_length exceeds max_length");

  Rng rng(p.seed);
  Dataset ds;
  ds.num_classes = p.classes;
  ds.provenance = {"synthetic", "synthetic", ""};
  ds.samples.reserve(p.samples);

  switch (p.kind) {
    case SyntheticKind::kDnaUniform: {
      for (std::size_t i = 0; i < p.samples; ++i) {
        const std::size_t len = uniform_between(rng, p.min_length, p.max_length);
        ds.samples.push_back({static_cast<ClassId>(i % p.classes), random_dna(rng, len)});
      }
      break;
    }
    case SyntheticKind::kSeparableText: {
      if (p.markers_per_class == 0 || p.plants == 0) throw ConfigError("separable-text needs markers and plants");
      if (p.min_marker == 0 || p.min_marker > p.max_marker) throw ConfigError("bad marker length range");
      std::vector<std::vector<Bytes>> markers(p.classes);
      std::vector<Bytes> all;
      for (std::uint32_t c = 0; c < p.classes; ++c) {
        for (std::size_t j = 0; j < p.markers_per_class; ++j) {
          for (int attempt = 0;; ++attempt) {
            if (attempt > 1000) throw ConfigError("cannot draw distinct markers; widen the marker length range");
            Bytes mk(uniform_between(rng, p.min_marker, p.max_marker));
            for (auto& x : mk) x = static_cast<std::uint8_t>(rng() & 0xff);
            const bool clash = std::any_of(all.begin(), all.end(), [&](const Bytes& o) {
              return contains(o, mk) || contains(mk, o);
            });
            if (clash) continue;
            all.push_back(mk);
            markers[c].push_back(std::move(mk));
            break;
          }
        }
      }
      for (std::size_t i = 0; i < p.samples; ++i) {
        const auto c = static_cast<ClassId>(i % p.classes);
        Bytes payload(uniform_between(rng, p.min_length, p.max_length));
        for (auto& x : payload) x = static_cast<std::uint8_t>(rng() & 0xff);
        Bytes phrase;
        for (std::size_t k = 0; k < p.plants; ++k) {
          const Bytes& mk = markers[c][uniform_below(rng, markers[c].size())];
          phrase.insert(phrase.end(), mk.begin(), mk.end());
        }
        insert_at_random(rng, payload, phrase);
        ds.samples.push_back({c, std::move(payload)});
      }
      break;
    }
    case SyntheticKind::kDnaMotif: {
      if (p.motif_length == 0) throw ConfigError("motif length must be positive");
      std::vector<Bytes> motifs;
      for (std::uint32_t c = 0; c < p.classes; ++c) {
        for (int attempt = 0;; ++attempt) {
          if (attempt > 1000) throw ConfigError("cannot draw distinct motifs; increase motif length");
          Bytes mk;
          if (p.motif_length % 4 == 0) {
            for (std::size_t j = 0; j < p.motif_length; ++j) mk.push_back(kNucleotides[j % 4]);
            shuffle(std::span<std::uint8_t>(mk), rng);
          } else {
            mk = random_dna(rng, p.motif_length);
          }
          if (std::find(motifs.begin(), motifs.end(), mk) != motifs.end()) continue;
          motifs.push_back(std::move(mk));
          break;
        }
      }
      for (std::size_t i = 0; i < p.samples; ++i) {
        const auto c = static_cast<ClassId>(i % p.classes);
        Bytes payload = random_dna(rng, uniform_between(rng, p.min_length, p.max_length));
        insert_at_random(rng, payload, motifs[c]);
        ds.samples.push_back({c, std::move(payload)});
      }
      break;
    }
  }
  return ds;
}

// Replaces every payload by its raw Huffman code stream (frame header dropped).
inline Dataset compress_dataset(const Dataset& ds, const HuffmanCodec& codec) {
  Dataset out;
  out.num_classes = ds.num_classes;
  out.provenance = ds.provenance;
  out.provenance.codec = codec.id();
  out.samples.reserve(ds.size());
  for (const auto& s : ds.samples) out.samples.push_back({s.label, codec.encode(s.payload).payload});
  return out;
}

}  // namespace bytesteady

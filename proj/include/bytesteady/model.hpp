#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "bytesteady/bytes.hpp"
#include "bytesteady/ngram.hpp"
#include "bytesteady/random.hpp"

namespace bytesteady {

using ClassId = std::uint32_t;

// Dense row-major matrix.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, T{}) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// The sparse form of a sample's gram-frequency vector: one embedding row per
// extracted gram, duplicates kept.
struct FeatureBag {
  std::vector<RowIndex> indices;

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
};

// Gram extraction plus row mapping; together with a Model this is a complete
// classifier.
struct FeatureConfig {
  NGramSet ngrams;
  FeatureIndexer indexer;

  FeatureBag featurize(ByteView input) const {
    FeatureBag bag;
    indexer.index_all(input, ngrams, bag.indices);
    return bag;
  }

  friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

// Two-layer linear model: logits = B * mean(A[g] for g in bag).
//
// With dim >= num_classes the factorisation loses nothing relative to a
// single linear map over gram frequencies; with dim < num_classes the logits
// are confined to a rank-dim subspace.
class Model {
 public:
  Model(std::uint64_t rows, std::uint32_t dim, std::uint32_t num_classes)
      : embeddings_(checked_rows(rows), check_dim(dim)),
        classifier_(check_classes(num_classes), dim) {}

  // A ~ U(-1/dim, 1/dim) from a counter-based SplitMix64 stream; B = 0.
  void initialize(std::uint64_t seed) {
    const double scale = 1.0 / static_cast<double>(dim());
    auto a = embeddings_.flat();
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double u = unit_double(mix64(seed + j * 0x9e3779b97f4a7c15ull));
      a[j] = static_cast<float>((2.0 * u - 1.0) * scale);
    }
    std::fill(classifier_.flat().begin(), classifier_.flat().end(), 0.0f);
  }

  std::uint64_t rows() const { return embeddings_.rows(); }
  std::uint32_t dim() const { return static_cast<std::uint32_t>(embeddings_.cols()); }
  std::uint32_t num_classes() const { return static_cast<std::uint32_t>(classifier_.rows()); }

  Matrix<float>& embeddings() { return embeddings_; }
  const Matrix<float>& embeddings() const { return embeddings_; }
  Matrix<float>& classifier() { return classifier_; }
  const Matrix<float>& classifier() const { return classifier_; }

  bool all_finite() const {
    for (float v : embeddings_.flat()) if (!std::isfinite(v)) return false;
    for (float v : classifier_.flat()) if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Model&, const Model&) = default;

 private:
  static std::size_t checked_rows(std::uint64_t rows) {
    if (rows == 0) throw ConfigError("model needs at least one embedding row");
    return static_cast<std::size_t>(rows);
  }
  static std::size_t check_dim(std::uint32_t dim) {
    if (dim == 0) throw ConfigError("embedding dimension must be >= 1");
    return dim;
  }
  static std::size_t check_classes(std::uint32_t k) {
    if (k < 2) throw ConfigError("need at least 2 classes");
    return k;
  }

  Matrix<float> embeddings_;  // A: rows x dim
  Matrix<float> classifier_;  // B: classes x dim
};

struct Prediction {
  std::vector<double> logits;
  std::vector<double> probabilities;
  ClassId argmax = 0;
};

namespace detail {

// Parameter access policies. Training with several workers shares A and B
// without locks; those reads and writes go through relaxed atomic_ref so the
// races are well-defined (lost or interleaved updates are tolerated).
struct PlainAccess {
  static float load(const float& x) { return x; }
  static void store(float& x, float v) { x = v; }
};

struct RelaxedAccess {
  static float load(const float& x) {
    return std::atomic_ref<float>(const_cast<float&>(x)).load(std::memory_order_relaxed);
  }
  static void store(float& x, float v) {
    std::atomic_ref<float>(x).store(v, std::memory_order_relaxed);
  }
};

inline void check_bag(const Model& model, const FeatureBag& bag) {
  for (RowIndex r : bag.indices) {
    if (r >= model.rows()) {
      throw std::logic_error("embedding row " + std::to_string(r) + " out of range (model has " +
                             std::to_string(model.rows()) + " rows)");
    }
  }
}

template <typename Access>
void represent_into(const Model& model, const FeatureBag& bag, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  if (bag.empty()) return;
  const auto& a = model.embeddings();
  for (RowIndex r : bag.indices) {
    auto row = a.row(r);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += Access::load(row[d]);
  }
  const double inv = 1.0 / static_cast<double>(bag.size());
  for (double& v : out) v *= inv;
}

template <typename Access>
void logits_into(const Model& model, std::span<const double> rep, std::span<double> logits) {
  const auto& b = model.classifier();
  for (std::size_t k = 0; k < logits.size(); ++k) {
    auto row = b.row(k);
    double s = 0.0;
    for (std::size_t d = 0; d < rep.size(); ++d) s += static_cast<double>(Access::load(row[d])) * rep[d];
    logits[k] = s;
  }
}

inline double log_sum_exp(std::span<const double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  return mx + std::log(s);
}

inline void softmax_into(std::span<const double> logits, std::span<double> probs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    probs[k] = std::exp(logits[k] - mx);
    s += probs[k];
  }
  for (double& p : probs) p /= s;
}

inline ClassId argmax(std::span<const double> v) {
  ClassId best = 0;
  for (std::size_t k = 1; k < v.size(); ++k) {
    if (v[k] > v[best]) best = static_cast<ClassId>(k);
  }
  return best;
}

// Everything one SGD step needs, in compact form. The dense gradients are
//   dB        = error (x) rep
//   dA[row]   = (count / G) * upstream     for each distinct row in the bag
// where upstream = B^T error.
struct StepState {
  std::vector<double> rep;
  std::vector<double> logits;
  std::vector<double> probs;
  std::vector<double> error;
  std::vector<double> upstream;
  std::vector<std::pair<RowIndex, std::uint32_t>> rows;  // distinct row, occurrences
  std::vector<RowIndex> scratch;
  double loss = 0.0;
  std::size_t grams = 0;

  void resize(std::uint32_t dim, std::uint32_t classes) {
    rep.resize(dim);
    upstream.resize(dim);
    logits.resize(classes);
    probs.resize(classes);
    error.resize(classes);
  }
};

template <typename Access>
void compute_step(const Model& model, const FeatureBag& bag, ClassId label, StepState& st) {
  const std::uint32_t dim = model.dim();
  const std::uint32_t classes = model.num_classes();
  st.resize(dim, classes);
  st.grams = bag.size();

  represent_into<Access>(model, bag, st.rep);
  logits_into<Access>(model, st.rep, st.logits);
  softmax_into(st.logits, st.probs);
  st.loss = log_sum_exp(st.logits) - st.logits[label];

  for (std::uint32_t k = 0; k < classes; ++k) st.error[k] = st.probs[k] - (k == label ? 1.0 : 0.0);

  const auto& b = model.classifier();
  std::fill(st.upstream.begin(), st.upstream.end(), 0.0);
  for (std::uint32_t k = 0; k < classes; ++k) {
    auto row = b.row(k);
    for (std::uint32_t d = 0; d < dim; ++d) st.upstream[d] += st.error[k] * Access::load(row[d]);
  }

  st.rows.clear();
  st.scratch.assign(bag.indices.begin(), bag.indices.end());
  std::sort(st.scratch.begin(), st.scratch.end());
  for (std::size_t i = 0; i < st.scratch.size();) {
    std::size_t j = i;
    while (j < st.scratch.size() && st.scratch[j] == st.scratch[i]) ++j;
    st.rows.emplace_back(st.scratch[i], static_cast<std::uint32_t>(j - i));
    i = j;
  }
}

}  // namespace detail

inline std::vector<double> represent(const Model& model, const FeatureBag& bag) {
  detail::check_bag(model, bag);
  std::vector<double> rep(model.dim());
  detail::represent_into<detail::PlainAccess>(model, bag, rep);
  return rep;
}

inline Prediction forward(const Model& model, const FeatureBag& bag) {
  const auto rep = represent(model, bag);
  Prediction p;
  p.logits.resize(model.num_classes());
  p.probabilities.resize(model.num_classes());
  detail::logits_into<detail::PlainAccess>(model, rep, p.logits);
  detail::softmax_into(p.logits, p.probabilities);
  p.argmax = detail::argmax(p.logits);
  return p;
}

// -log softmax(logits)[label], evaluated as logsumexp(logits) - logits[label].
inline double nll_loss(const Prediction& pred, ClassId label) {
  if (label >= pred.logits.size()) {
    throw ConfigError("label " + std::to_string(label) + " out of range for " +
                      std::to_string(pred.logits.size()) + " classes");
  }
  return detail::log_sum_exp(pred.logits) - pred.logits[label];
}

struct Gradients {
  Matrix<double> classifier;                            // dB
  std::map<RowIndex, std::vector<double>> embeddings;   // dA, touched rows only
};

inline Gradients backward(const Model& model, const FeatureBag& bag, ClassId label) {
  detail::check_bag(model, bag);
  if (label >= model.num_classes()) {
    throw ConfigError("label " + std::to_string(label) + " out of range");
  }
  detail::StepState st;
  detail::compute_step<detail::PlainAccess>(model, bag, label, st);

  Gradients g;
  g.classifier = Matrix<double>(model.num_classes(), model.dim());
  for (std::uint32_t k = 0; k < model.num_classes(); ++k) {
    for (std::uint32_t d = 0; d < model.dim(); ++d) g.classifier(k, d) = st.error[k] * st.rep[d];
  }
  for (auto [row, count] : st.rows) {
    const double w = static_cast<double>(count) / static_cast<double>(st.grams);
    std::vector<double> v(model.dim());
    for (std::uint32_t d = 0; d < model.dim(); ++d) v[d] = w * st.upstream[d];
    g.embeddings.emplace(row, std::move(v));
  }
  return g;
}

// A trained model together with the feature pipeline it was trained with.
struct Classifier {
  FeatureConfig features;
  Model model;

  Prediction predict(ByteView input) const { return forward(model, features.featurize(input)); }
};

// Binary model file, little-endian:
//
//   "BSTD"            magic
//   u32 version       = 1
//   u8  mode          0 hashed, 1 top-k
//   u8  hash variant  0 fnv1a64, 1 city64
//   u16 reserved      = 0
//   u64 rows          hash table size or vocabulary size
//   u32 dim
//   u32 classes
//   u32 count, count x u32    n-gram lengths
//   f32[rows * dim]   A, row-major
//   f32[classes * dim] B, row-major
//   top-k only: rows x (varint length, bytes)   vocabulary in row order
namespace model_format {
inline constexpr std::string_view kMagic = "BSTD";
inline constexpr std::uint32_t kVersion = 1;
}  // namespace model_format

inline void save_classifier(std::ostream& out, const Classifier& c) {
  using namespace io;
  const auto& m = c.model;
  const auto& ix = c.features.indexer;
  if (ix.rows() != m.rows()) throw ConfigError("indexer rows do not match model rows");
  write_magic(out, model_format::kMagic);
  write_le<std::uint32_t>(out, model_format::kVersion);
  write_le<std::uint8_t>(out, static_cast<std::uint8_t>(ix.mode()));
  write_le<std::uint8_t>(out, static_cast<std::uint8_t>(ix.hash_variant()));
  write_le<std::uint16_t>(out, 0);
  write_le<std::uint64_t>(out, m.rows());
  write_le<std::uint32_t>(out, m.dim());
  write_le<std::uint32_t>(out, m.num_classes());
  const auto& lengths = c.features.ngrams.lengths();
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(lengths.size()));
  for (std::uint32_t n : lengths) write_le<std::uint32_t>(out, n);
  write_le_array<float>(out, m.embeddings().flat());
  write_le_array<float>(out, m.classifier().flat());
  if (ix.mode() == FeatureIndexer::Mode::kTopK) {
    for (const Bytes& g : ix.vocabulary()) write_blob(out, g);
  }
  if (!out) throw IoError("failed to write model");
}

inline Classifier load_classifier(std::istream& in) {
  using namespace io;
  expect_magic(in, model_format::kMagic);
  const auto version = read_le<std::uint32_t>(in);
  if (version != model_format::kVersion) {
    throw FormatError("unsupported model version " + std::to_string(version));
  }
  const auto mode = read_le<std::uint8_t>(in);
  const auto variant = read_le<std::uint8_t>(in);
  if (mode > 1) throw FormatError("bad indexer mode " + std::to_string(mode));
  if (variant > 1) throw FormatError("bad hash variant " + std::to_string(variant));
  (void)read_le<std::uint16_t>(in);
  const auto rows = read_le<std::uint64_t>(in);
  const auto dim = read_le<std::uint32_t>(in);
  const auto classes = read_le<std::uint32_t>(in);
  const auto count = read_le<std::uint32_t>(in);
  if (rows == 0 || rows > (std::uint64_t{1} << 32) || dim == 0 || dim > (1u << 20) || classes < 2 ||
      classes > (1u << 24) || count == 0 || count > (1u << 16)) {
    throw FormatError("model header out of range");
  }
  std::vector<std::uint32_t> lengths(count);
  for (auto& n : lengths) n = read_le<std::uint32_t>(in);

  // Refuse to allocate more than the stream can hold when its size is known.
  const std::uint64_t payload = (rows + classes) * dim * sizeof(float);
  if (auto here = in.tellg(); here != std::istream::pos_type(-1)) {
    in.seekg(0, std::ios::end);
    const auto end = in.tellg();
    in.seekg(here);
    if (static_cast<std::uint64_t>(end - here) < payload) throw FormatError("model file truncated");
  }

  NGramSet ngrams = [&] {
    try {
      return NGramSet(std::move(lengths));
    } catch (const ConfigError& e) {
      throw FormatError(std::string("bad n-gram set in model: ") + e.what());
    }
  }();
  Model model(rows, dim, classes);
  read_le_array<float>(in, model.embeddings().flat());
  read_le_array<float>(in, model.classifier().flat());

  FeatureIndexer indexer = [&] {
    if (mode == 0) return FeatureIndexer::hashed(static_cast<HashVariant>(variant), rows);
    std::vector<Bytes> vocab;
    vocab.reserve(static_cast<std::size_t>(rows));
    for (std::uint64_t i = 0; i < rows; ++i) vocab.push_back(read_blob(in, 1u << 20));
    try {
      return FeatureIndexer::topk(std::move(vocab));
    } catch (const ConfigError& e) {
      throw FormatError(std::string("bad vocabulary in model: ") + e.what());
    }
  }();
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after model");
  return Classifier{FeatureConfig{std::move(ngrams), std::move(indexer)}, std::move(model)};
}

inline void save_classifier(const std::string& path, const Classifier& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  save_classifier(out, c);
}

inline Classifier load_classifier(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return load_classifier(in);
}

}  // namespace bytesteady

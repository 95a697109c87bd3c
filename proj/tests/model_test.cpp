#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "bytesteady/model.hpp"
#include "bytesteady/random.hpp"

using namespace bytesteady;

namespace {

void fill_uniform(std::span<float> v, Rng& rng, double scale) {
  for (float& x : v) x = static_cast<float>((2.0 * unit_double(rng()) - 1.0) * scale);
}

Model random_model(Rng& rng, std::uint64_t rows, std::uint32_t dim, std::uint32_t k) {
  Model m(rows, dim, k);
  fill_uniform(m.embeddings().flat(), rng, 1.0);
  fill_uniform(m.classifier().flat(), rng, 1.0);
  return m;
}

FeatureBag random_bag(Rng& rng, std::uint64_t rows, std::size_t g) {
  FeatureBag bag;
  for (std::size_t i = 0; i < g; ++i) bag.indices.push_back(static_cast<RowIndex>(uniform_below(rng, rows)));
  return bag;
}

// Independent loss oracle over double copies of the parameters, written
// directly from the definition: mean of embedding rows, matrix product,
// log-softmax.
struct DoubleParams {
  std::vector<double> a, b;
  std::size_t dim, k;

  explicit DoubleParams(const Model& m)
      : a(m.embeddings().flat().begin(), m.embeddings().flat().end()),
        b(m.classifier().flat().begin(), m.classifier().flat().end()),
        dim(m.dim()),
        k(m.num_classes()) {}

  double loss(const FeatureBag& bag, ClassId label) const {
    std::vector<double> rep(dim, 0.0);
    for (RowIndex r : bag.indices) {
      for (std::size_t d = 0; d < dim; ++d) rep[d] += a[r * dim + d];
    }
    if (!bag.empty()) {
      for (double& v : rep) v /= static_cast<double>(bag.size());
    }
    std::vector<double> logits(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t d = 0; d < dim; ++d) logits[c] += b[c * dim + d] * rep[d];
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double l : logits) s += std::exp(l - mx);
    return mx + std::log(s) - logits[label];
  }
};

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

}  // namespace

// ============================================================================
// represent
// ============================================================================

TEST(Represent, EmptyBagIsZero) {
  Rng rng(1);
  const Model m = random_model(rng, 10, 4, 3);
  EXPECT_EQ(represent(m, FeatureBag{}), std::vector<double>(4, 0.0));
}

TEST(Represent, AverageOfRows) {
  Model m(4, 3, 2);
  m.embeddings()(1, 0) = 1.0f;
  m.embeddings()(2, 1) = 1.0f;
  m.embeddings()(3, 0) = 0.25f;
  m.embeddings()(3, 2) = -2.0f;
  EXPECT_EQ(represent(m, FeatureBag{{3, 3}}), (std::vector<double>{0.25, 0.0, -2.0}));
  EXPECT_EQ(represent(m, FeatureBag{{1, 2}}), (std::vector<double>{0.5, 0.5, 0.0}));
}

TEST(Represent, PermutationInvariant) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Model m = random_model(rng, 64, 8, 3);
    FeatureBag bag = random_bag(rng, 64, 1 + uniform_below(rng, 30));
    const auto base = represent(m, bag);
    shuffle(std::span<RowIndex>(bag.indices), rng);
    const auto shuffled = represent(m, bag);
    for (std::size_t d = 0; d < base.size(); ++d) EXPECT_NEAR(base[d], shuffled[d], 1e-12);
  }
}

TEST(Represent, OutOfRangeRowIsALogicError) {
  const Model m(4, 2, 2);
  EXPECT_THROW(represent(m, FeatureBag{{4}}), std::logic_error);
  EXPECT_THROW(forward(m, FeatureBag{{0, 99}}), std::logic_error);
}

// ============================================================================
// forward / softmax
// ============================================================================

TEST(Forward, ZeroClassifierGivesUniform) {
  Rng rng(3);
  Model m = random_model(rng, 16, 4, 5);
  std::fill(m.classifier().flat().begin(), m.classifier().flat().end(), 0.0f);
  const auto p = forward(m, FeatureBag{{1, 2, 3}});
  for (double v : p.probabilities) EXPECT_DOUBLE_EQ(v, 0.2);
  EXPECT_EQ(p.argmax, 0u);  // all tied -> lowest id
}

TEST(Forward, StableForHugeLogits) {
  // Logits (t, -t) with t = 1e4 via A[0] = (1), B = (t, -t).
  Model m(1, 1, 2);
  m.embeddings()(0, 0) = 1.0f;
  m.classifier()(0, 0) = 1e4f;
  m.classifier()(1, 0) = -1e4f;
  const auto p = forward(m, FeatureBag{{0}});
  EXPECT_EQ(p.probabilities[0], 1.0);
  EXPECT_EQ(p.probabilities[1], 0.0);
  EXPECT_EQ(p.argmax, 0u);
  EXPECT_EQ(nll_loss(p, 0), 0.0);
  EXPECT_DOUBLE_EQ(nll_loss(p, 1), 2e4);
}

TEST(Forward, NormalizedAcrossMagnitudes) {
  Rng rng(4);
  for (double scale : {1e-3, 1.0, 1e2, 1e4}) {
    Model m = random_model(rng, 8, 4, 7);
    for (float& v : m.classifier().flat()) v = static_cast<float>(v * scale);
    const auto p = forward(m, FeatureBag{{0, 1}});
    double sum = 0.0;
    for (double v : p.probabilities) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
    EXPECT_EQ(p.argmax, static_cast<ClassId>(std::max_element(p.logits.begin(), p.logits.end()) - p.logits.begin()));
  }
}

TEST(Forward, MatchesExtendedPrecisionOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::uint32_t k = static_cast<std::uint32_t>(uniform_between(rng, 2, 8));
    const std::uint32_t dim = static_cast<std::uint32_t>(uniform_between(rng, 1, 16));
    const Model m = random_model(rng, 32, dim, k);
    const FeatureBag bag = random_bag(rng, 32, uniform_between(rng, 1, 12));

    std::vector<long double> rep(dim, 0.0L);
    for (RowIndex r : bag.indices) {
      for (std::uint32_t d = 0; d < dim; ++d) rep[d] += m.embeddings()(r, d);
    }
    for (auto& v : rep) v /= static_cast<long double>(bag.size());
    std::vector<long double> z(k, 0.0L);
    long double denom = 0.0L;
    for (std::uint32_t c = 0; c < k; ++c) {
      for (std::uint32_t d = 0; d < dim; ++d) z[c] += m.classifier()(c, d) * rep[d];
      denom += std::exp(z[c]);
    }
    const auto p = forward(m, bag);
    for (std::uint32_t c = 0; c < k; ++c) {
      EXPECT_NEAR(p.probabilities[c], static_cast<double>(std::exp(z[c]) / denom), 1e-12);
    }
  }
}

// ============================================================================
// nll_loss
// ============================================================================

TEST(NllLoss, Examples) {
  for (std::size_t k : {2u, 3u, 10u}) {
    Prediction uniform{std::vector<double>(k, 0.5), std::vector<double>(k, 1.0 / k), 0};
    EXPECT_NEAR(nll_loss(uniform, static_cast<ClassId>(k - 1)), std::log(static_cast<double>(k)), 1e-15);
  }
  // log-sum-exp(1,2,3) - 3, frozen from an independent evaluation.
  Prediction p{{1.0, 2.0, 3.0}, {}, 2};
  EXPECT_NEAR(nll_loss(p, 2), 0.4076059644443806, 1e-15);
  EXPECT_THROW(nll_loss(p, 3), ConfigError);
}

TEST(NllLoss, ComputedFromLogitsNotStoredProbabilities) {
  // The stored probability underflows to 0 but the loss stays finite.
  Prediction p{{0.0, -2000.0}, {1.0, 0.0}, 0};
  EXPECT_DOUBLE_EQ(nll_loss(p, 1), 2000.0);
}

// ============================================================================
// backward
// ============================================================================

TEST(Backward, ExactOneHotGivesZeroGradients) {
  Model m(2, 1, 2);
  m.embeddings()(0, 0) = 1.0f;
  m.classifier()(0, 0) = 1000.0f;
  m.classifier()(1, 0) = -1000.0f;
  const auto g = backward(m, FeatureBag{{0}}, 0);
  for (double v : g.classifier.flat()) EXPECT_EQ(v, 0.0);
  for (const auto& [row, v] : g.embeddings) {
    for (double x : v) EXPECT_EQ(x, 0.0);
  }
}

TEST(Backward, EmptyBag) {
  Rng rng(6);
  const Model m = random_model(rng, 4, 3, 3);
  const auto g = backward(m, FeatureBag{}, 1);
  EXPECT_TRUE(g.embeddings.empty());
  for (double v : g.classifier.flat()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, DuplicateRowsAccumulate) {
  Rng rng(7);
  const Model m = random_model(rng, 8, 4, 3);
  const auto once = backward(m, FeatureBag{{5}}, 2);
  const auto twice = backward(m, FeatureBag{{5, 5}}, 2);
  ASSERT_EQ(twice.embeddings.size(), 1u);
  // bag [r, r] has the same representation as [r], and 2 * (1/2) * upstream = upstream.
  for (std::size_t d = 0; d < 4; ++d) {
    EXPECT_DOUBLE_EQ(twice.embeddings.at(5)[d], once.embeddings.at(5)[d]);
  }
}

TEST(Backward, MatchesCentralFiniteDifferences) {
  Rng rng(8);
  constexpr double h = 1e-4;
  const std::uint32_t ks[] = {2, 5, 7};
  const std::uint32_t dims[] = {4, 16};
  const std::size_t gs[] = {1, 3, 10};
  int instances = 0;
  double worst = 0.0;
  while (instances < 100) {
    const std::uint32_t k = ks[instances % 3];
    const std::uint32_t dim = dims[(instances / 3) % 2];
    const std::size_t g = gs[(instances / 6) % 3];
    ++instances;
    const std::uint64_t rows = 12;
    const Model m = random_model(rng, rows, dim, k);
    const FeatureBag bag = random_bag(rng, rows, g);
    const auto label = static_cast<ClassId>(uniform_below(rng, k));
    const Gradients grad = backward(m, bag, label);
    DoubleParams p(m);

    for (std::size_t i = 0; i < p.b.size(); ++i) {
      const double saved = p.b[i];
      p.b[i] = saved + h;
      const double up = p.loss(bag, label);
      p.b[i] = saved - h;
      const double down = p.loss(bag, label);
      p.b[i] = saved;
      const double fd = (up - down) / (2 * h);
      const double err = relative_error(grad.classifier.flat()[i], fd);
      worst = std::max(worst, err);
      ASSERT_LT(err, 1e-4) << "dB[" << i << "] K=" << k << " dim=" << dim << " G=" << g;
    }
    for (std::uint64_t r = 0; r < rows; ++r) {
      for (std::uint32_t d = 0; d < dim; ++d) {
        const std::size_t i = r * dim + d;
        const double saved = p.a[i];
        p.a[i] = saved + h;
        const double up = p.loss(bag, label);
        p.a[i] = saved - h;
        const double down = p.loss(bag, label);
        p.a[i] = saved;
        const double fd = (up - down) / (2 * h);
        auto it = grad.embeddings.find(static_cast<RowIndex>(r));
        const double analytic = it == grad.embeddings.end() ? 0.0 : it->second[d];
        const double err = relative_error(analytic, fd);
        worst = std::max(worst, err);
        ASSERT_LT(err, 1e-4) << "dA[" << r << "][" << d << "] K=" << k << " dim=" << dim << " G=" << g;
      }
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

// ============================================================================
// Capacity: with dim >= K the factorised model reproduces any linear
// classifier over averaged gram-frequency features.
// ============================================================================

TEST(Capacity, ReproducesLinearClassifierOnThreeClassToy) {
  constexpr std::uint32_t kFeatures = 5, kClasses = 3;
  Rng rng(9);
  std::vector<std::vector<double>> w(kClasses, std::vector<double>(kFeatures));
  for (auto& row : w) {
    for (double& x : row) x = static_cast<float>(2.0 * unit_double(rng()) - 1.0);  // float-exact
  }
  const FeatureBag bag{{0, 2, 2, 4, 1, 2}};
  std::vector<double> freq(kFeatures, 0.0);
  for (RowIndex r : bag.indices) freq[r] += 1.0 / static_cast<double>(bag.size());
  std::vector<double> expected(kClasses, 0.0);
  for (std::uint32_t c = 0; c < kClasses; ++c) {
    for (std::uint32_t f = 0; f < kFeatures; ++f) expected[c] += w[c][f] * freq[f];
  }

  // A = identity embedding of the features (dim = #features), B = W.
  Model identity(kFeatures, kFeatures, kClasses);
  for (std::uint32_t f = 0; f < kFeatures; ++f) identity.embeddings()(f, f) = 1.0f;
  for (std::uint32_t c = 0; c < kClasses; ++c) {
    for (std::uint32_t f = 0; f < kFeatures; ++f) identity.classifier()(c, f) = static_cast<float>(w[c][f]);
  }
  // A = W^T, B = identity: dim = K is already enough.
  Model transposed(kFeatures, kClasses, kClasses);
  for (std::uint32_t c = 0; c < kClasses; ++c) {
    transposed.classifier()(c, c) = 1.0f;
    for (std::uint32_t f = 0; f < kFeatures; ++f) transposed.embeddings()(f, c) = static_cast<float>(w[c][f]);
  }
  for (const Model* m : {&identity, &transposed}) {
    const auto p = forward(*m, bag);
    for (std::uint32_t c = 0; c < kClasses; ++c) EXPECT_NEAR(p.logits[c], expected[c], 1e-12);
  }
}

// ============================================================================
// Initialization and serialization
// ============================================================================

TEST(Model, InitializationRangeAndUniformStart) {
  Model m(1000, 16, 4);
  m.initialize(42);
  for (float v : m.embeddings().flat()) {
    EXPECT_LE(std::abs(v), 1.0f / 16);
  }
  for (float v : m.classifier().flat()) EXPECT_EQ(v, 0.0f);
  const auto p = forward(m, FeatureBag{{1, 5, 900}});
  for (double v : p.probabilities) EXPECT_EQ(v, 0.25);
  Model again(1000, 16, 4);
  again.initialize(42);
  EXPECT_EQ(m, again);
  again.initialize(43);
  EXPECT_NE(m, again);
}

TEST(Model, RejectsDegenerateShapes) {
  EXPECT_THROW(Model(0, 4, 2), ConfigError);
  EXPECT_THROW(Model(4, 0, 2), ConfigError);
  EXPECT_THROW(Model(4, 4, 1), ConfigError);
}

namespace {

std::string save_to_string(const Classifier& c) {
  std::ostringstream out(std::ios::binary);
  save_classifier(out, c);
  return out.str();
}

Classifier load_from_string(const std::string& s) {
  std::istringstream in(s, std::ios::binary);
  return load_classifier(in);
}

}  // namespace

TEST(ModelFormat, HashedRoundTripIsBitExact) {
  Rng rng(10);
  Classifier c{FeatureConfig{parse_ngram_set("2[1-8]"), FeatureIndexer::hashed(HashVariant::kCity64, 257)},
               random_model(rng, 257, 5, 3)};
  const std::string bytes = save_to_string(c);
  ASSERT_EQ(bytes.substr(0, 4), "BSTD");
  const Classifier back = load_from_string(bytes);
  EXPECT_EQ(back.features, c.features);
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(save_to_string(back), bytes);
  // Header: magic, version 1, mode 0, variant 1, reserved, rows 257 (LE).
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 0u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[9]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[13]), 1u);
  // Header (40 bytes incl. 8 lengths) + A + B.
  EXPECT_EQ(bytes.size(), 4 + 4 + 4 + 8 + 4 + 4 + 4 + 8 * 4 + (257 + 3) * 5 * 4u);
}

TEST(ModelFormat, TopKRoundTripCarriesVocabulary) {
  Rng rng(11);
  std::vector<Bytes> vocab{to_bytes("AC"), to_bytes("G"), Bytes{0, 255, 10}};
  Classifier c{FeatureConfig{NGramSet{1, 2, 3}, FeatureIndexer::topk(vocab)}, random_model(rng, 3, 4, 2)};
  const std::string bytes = save_to_string(c);
  const Classifier back = load_from_string(bytes);
  EXPECT_EQ(back.features.indexer.vocabulary(), vocab);
  EXPECT_EQ(back.features.indexer.index_of(Bytes{0, 255, 10}), 2u);
  EXPECT_EQ(save_to_string(back), bytes);
}

TEST(ModelFormat, RejectsCorruptFiles) {
  Rng rng(12);
  Classifier c{FeatureConfig{NGramSet{1}, FeatureIndexer::hashed(HashVariant::kFnv1a64, 8)}, random_model(rng, 8, 2, 2)};
  const std::string good = save_to_string(c);
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(load_from_string(bad_magic), FormatError);
  std::string bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW(load_from_string(bad_version), FormatError);
  std::string bad_mode = good;
  bad_mode[8] = 7;
  EXPECT_THROW(load_from_string(bad_mode), FormatError);
  EXPECT_THROW(load_from_string(good.substr(0, good.size() - 1)), FormatError);
  EXPECT_THROW(load_from_string(good.substr(0, 10)), FormatError);
  EXPECT_THROW(load_from_string(good + "x"), FormatError);
  EXPECT_THROW(load_from_string(""), FormatError);
}

TEST(ModelFormat, RejectsIndexerModelMismatchOnSave) {
  Classifier c{FeatureConfig{NGramSet{1}, FeatureIndexer::hashed(HashVariant::kFnv1a64, 9)}, Model(8, 2, 2)};
  std::ostringstream out;
  EXPECT_THROW(save_classifier(out, c), ConfigError);
}

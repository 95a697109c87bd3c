#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "bytesteady/data.hpp"
#include "bytesteady/huffman.hpp"
#include "bytesteady/model.hpp"
#include "bytesteady/ngram.hpp"
#include "bytesteady/random.hpp"

namespace bytesteady {

class TrainingError : public Error {
 public:
  using Error::Error;
};

// How grams become rows. `topk` switches from hashing to a vocabulary of the
// k most frequent training grams.
struct FeatureSpec {
  NGramSet ngrams{4, 8, 12, 16};
  HashVariant hash = HashVariant::kFnv1a64;
  std::uint64_t table_size = std::uint64_t{1} << 24;
  std::optional<std::size_t> topk;

  FeatureConfig build(const Dataset& train) const {
    if (topk) return FeatureConfig{ngrams, build_topk_vocabulary(train.payloads(), ngrams, *topk)};
    return FeatureConfig{ngrams, FeatureIndexer::hashed(hash, table_size)};
  }
};

struct EpochRecord {
  std::uint32_t epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> dev_error;
  double wall_seconds = 0.0;
  double samples_per_sec = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j{{"epoch", epoch},
                     {"mean_loss", mean_loss},
                     {"wall_seconds", wall_seconds},
                     {"samples_per_sec", samples_per_sec}};
    j["dev_error"] = dev_error ? nlohmann::json(*dev_error) : nlohmann::json(nullptr);
    return j;
  }
};

struct TrainConfig {
  FeatureSpec features;
  std::uint32_t dim = 16;
  std::uint32_t epochs = 5;
  double lr = 0.05;
  double weight_decay = 1e-3;
  std::uint32_t workers = 1;
  std::uint64_t seed = 1;
  // Applied to train and dev payloads before featurization.
  std::shared_ptr<const HuffmanCodec> codec;
  // Receives warnings; nullptr silences them.
  std::ostream* log = nullptr;
  // Called after every epoch.
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::uint64_t steps = 0;
  std::optional<double> compression_ratio;

  // One JSON object per line.
  std::string to_jsonl() const {
    std::ostringstream s;
    for (const auto& e : epochs) s << e.to_json().dump() << '\n';
    return s.str();
  }
};

struct TrainResult {
  Classifier classifier;
  TrainReport report;
};

// Linear decay from lr0 at step 0 to lr0 / total at the last step.
inline double learning_rate(double lr0, std::uint64_t step, std::uint64_t total) {
  return lr0 * (1.0 - static_cast<double>(step) / static_cast<double>(total));
}

namespace detail {

// B <- (1 - lr*decay) B - lr dB over all of B; the same shrink-and-step for
// each distinct embedding row the sample touched. Untouched rows are not
// decayed.
template <typename Access>
void apply_update(Model& model, const StepState& st, double lr, double decay) {
  const double shrink = 1.0 - lr * decay;
  const std::uint32_t dim = model.dim();
  auto& b = model.classifier();
  for (std::uint32_t k = 0; k < model.num_classes(); ++k) {
    auto row = b.row(k);
    const double ek = lr * st.error[k];
    for (std::uint32_t d = 0; d < dim; ++d) {
      const double v = shrink * Access::load(row[d]) - ek * st.rep[d];
      Access::store(row[d], static_cast<float>(v));
    }
  }
  if (st.grams == 0) return;
  auto& a = model.embeddings();
  const double inv = 1.0 / static_cast<double>(st.grams);
  for (auto [r, count] : st.rows) {
    auto row = a.row(r);
    const double w = lr * static_cast<double>(count) * inv;
    for (std::uint32_t d = 0; d < dim; ++d) {
      const double v = shrink * Access::load(row[d]) - w * st.upstream[d];
      Access::store(row[d], static_cast<float>(v));
    }
#ifndef NDEBUG
    for (std::uint32_t d = 0; d < dim; ++d) {
      if (!std::isfinite(Access::load(row[d]))) {
        throw TrainingError("non-finite embedding parameter in row " + std::to_string(r));
      }
    }
#endif
  }
}

}  // namespace detail

// One single-threaded SGD step on one sample; returns the pre-update loss.
inline double sgd_step(Model& model, const FeatureBag& bag, ClassId label, double lr, double decay) {
  detail::check_bag(model, bag);
  if (label >= model.num_classes()) throw ConfigError("label out of range");
  detail::StepState st;
  detail::compute_step<detail::PlainAccess>(model, bag, label, st);
  detail::apply_update<detail::PlainAccess>(model, st, lr, decay);
  return st.loss;
}

// Fraction of samples whose argmax differs from the label.
inline double evaluate(const Model& model, const FeatureConfig& features, const Dataset& test,
                       std::uint32_t workers = 1) {
  if (features.indexer.rows() != model.rows()) {
    throw ConfigError("feature config addresses " + std::to_string(features.indexer.rows()) +
                      " rows but the model has " + std::to_string(model.rows()));
  }
  if (test.empty()) throw ConfigError("cannot evaluate on an empty dataset");
  for (const auto& s : test.samples) {
    if (s.label >= model.num_classes()) {
      throw ConfigError("test label " + std::to_string(s.label) + " exceeds the model's " +
                        std::to_string(model.num_classes()) + " classes");
    }
  }
  workers = std::max<std::uint32_t>(1, std::min<std::uint32_t>(workers, static_cast<std::uint32_t>(test.size())));
  std::vector<std::size_t> wrong(workers, 0);
  auto run = [&](std::uint32_t w) {
    const std::size_t lo = test.size() * w / workers;
    const std::size_t hi = test.size() * (w + 1) / workers;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& s = test.samples[i];
      if (forward(model, features.featurize(s.payload)).argmax != s.label) ++wrong[w];
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::jthread> threads;
    for (std::uint32_t w = 0; w < workers; ++w) threads.emplace_back(run, w);
  }
  std::size_t total = 0;
  for (auto n : wrong) total += n;
  return static_cast<double>(total) / static_cast<double>(test.size());
}

inline double evaluate(const Classifier& c, const Dataset& test, std::uint32_t workers = 1) {
  return evaluate(c.model, c.features, test, workers);
}

namespace detail {

template <typename Access>
double run_shard(Model& model, const FeatureConfig& features, const Dataset& data,
                 std::span<const std::size_t> order, std::atomic<std::uint64_t>& step,
                 std::uint64_t total_steps, const TrainConfig& cfg, std::uint32_t epoch) {
  StepState st;
  FeatureBag bag;
  double loss_sum = 0.0;
  for (std::size_t idx : order) {
    const Sample& s = data.samples[idx];
    bag.indices.clear();
    features.indexer.index_all(s.payload, features.ngrams, bag.indices);
    const std::uint64_t t = step.fetch_add(1, std::memory_order_relaxed);
    const double lr = learning_rate(cfg.lr, t, total_steps);
    compute_step<Access>(model, bag, s.label, st);
    if (!std::isfinite(st.loss)) {
      throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", sample " +
                          std::to_string(idx) + ", step " + std::to_string(t) + ", lr " +
                          std::to_string(lr) + " (try a smaller learning rate)");
    }
    apply_update<Access>(model, st, lr, cfg.weight_decay);
    loss_sum += st.loss;
  }
  return loss_sum;
}

}  // namespace detail

// Trains a fresh model. With workers == 1 the result is a pure function of
// (config, data). With more workers, parameters are updated without locks
// (HogWILD): each worker takes a contiguous shard of the epoch's shuffled
// order, and only the global step counter that drives the learning-rate
// schedule is synchronised.
inline TrainResult train(const TrainConfig& cfg, const Dataset& train_in, const Dataset* dev_in = nullptr) {
  if (train_in.empty()) throw ConfigError("training set is empty");
  if (train_in.num_classes < 2) throw ConfigError("training set must declare at least 2 classes");
  train_in.validate();
  if (cfg.epochs == 0) throw ConfigError("epochs must be positive");
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("learning rate must be positive");
  if (!(cfg.weight_decay >= 0.0) || !std::isfinite(cfg.weight_decay)) {
    throw ConfigError("weight decay must be non-negative");
  }
  if (cfg.workers == 0) throw ConfigError("workers must be positive");
  if (cfg.log && cfg.weight_decay != 0.0 && (cfg.weight_decay < 1e-7 || cfg.weight_decay > 1e-2)) {
    *cfg.log << "warning: weight decay " << cfg.weight_decay << " is outside the usual range [1e-7, 1e-2]\n";
  }
  if (dev_in) {
    for (const auto& s : dev_in->samples) {
      if (s.label >= train_in.num_classes) throw ConfigError("dev label exceeds the training classes");
    }
  }

  TrainReport report;
  std::optional<Dataset> train_c, dev_c;
  if (cfg.codec) {
    train_c = compress_dataset(train_in, *cfg.codec);
    if (dev_in) dev_c = compress_dataset(*dev_in, *cfg.codec);
    report.compression_ratio = compression_ratio(*cfg.codec, train_in.payloads());
  }
  const Dataset& data = train_c ? *train_c : train_in;
  const Dataset* dev = dev_c ? &*dev_c : dev_in;

  FeatureConfig features = cfg.features.build(data);
  Model model(features.indexer.rows(), cfg.dim, data.num_classes);
  model.initialize(derive_seed(cfg.seed, 0x696e6974 /* "init" */));

  const std::size_t n = data.size();
  const std::uint64_t total_steps = static_cast<std::uint64_t>(cfg.epochs) * n;
  std::atomic<std::uint64_t> step{0};
  const std::uint32_t workers = std::min<std::uint32_t>(cfg.workers, static_cast<std::uint32_t>(n));

  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(derive_seed(cfg.seed, 0x73687566 /* "shuf" */, epoch));
    const auto order = permutation(n, rng);

    double loss_sum = 0.0;
    if (workers == 1) {
      loss_sum = detail::run_shard<detail::PlainAccess>(model, features, data, order, step, total_steps, cfg, epoch);
    } else {
      std::vector<double> sums(workers, 0.0);
      std::vector<std::exception_ptr> errors(workers);
      {
        std::vector<std::jthread> threads;
        for (std::uint32_t w = 0; w < workers; ++w) {
          threads.emplace_back([&, w] {
            const std::size_t lo = n * w / workers;
            const std::size_t hi = n * (w + 1) / workers;
            try {
              sums[w] = detail::run_shard<detail::RelaxedAccess>(
                  model, features, data, std::span<const std::size_t>(order).subspan(lo, hi - lo), step,
                  total_steps, cfg, epoch);
            } catch (...) {
              errors[w] = std::current_exception();
            }
          });
        }
      }
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
      for (double s : sums) loss_sum += s;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.mean_loss = loss_sum / static_cast<double>(n);
    rec.wall_seconds = secs;
    rec.samples_per_sec = secs > 0 ? static_cast<double>(n) / secs : 0.0;
    if (dev && !dev->empty()) rec.dev_error = evaluate(model, features, *dev);
    if (cfg.on_epoch) cfg.on_epoch(rec);
    report.epochs.push_back(rec);
  }
  report.steps = step.load();
  return TrainResult{Classifier{std::move(features), std::move(model)}, std::move(report)};
}

}  // namespace bytesteady

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "bytesteady/bytesteady.hpp"

namespace bs = bytesteady;

namespace {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3, kMismatch = 4, kFormat = 5 };

// Raised when a file on disk disagrees with what the command line asked for.
class MismatchError : public bs::Error {
 public:
  using Error::Error;
};

class UsageError : public bs::Error {
 public:
  using Error::Error;
};

struct Globals {
  std::uint64_t seed = 1;
  std::uint32_t threads = 1;
  bool quiet = false;
};

struct DataOptions {
  std::string label_key = "cls";
  std::string class_names;
  bool lenient = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--label-key", label_key, "FASTA header field that carries the class");
    cmd->add_option("--class-names", class_names, "FASTA class-name file, one name per line (line i = class i)");
    cmd->add_flag("--lenient", lenient, "FASTA: accept bytes outside ACGTN");
  }

  bs::Dataset load(const std::string& path) const {
    bs::FastaOptions f;
    f.label_key = label_key;
    f.strict = !lenient;
    if (!class_names.empty()) f.class_names = bs::load_class_names(class_names);
    return bs::load_dataset(path, f);
  }
};

std::shared_ptr<const bs::HuffmanCodec> load_codec(const std::string& path) {
  if (path.empty()) return nullptr;
  return std::make_shared<const bs::HuffmanCodec>(bs::load_codec(path));
}

bs::NGramSet parse_ngrams(const std::string& spec) {
  try {
    return bs::parse_ngram_set(spec);
  } catch (const bs::ParseError& e) {
    throw UsageError(std::string("--ngrams: ") + e.what());
  }
}

bs::HashVariant parse_hash(const std::string& name) {
  auto v = bs::parse_hash_variant(name);
  if (!v) throw UsageError("--hash: unknown variant '" + name + "'");
  return *v;
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw bs::IoError("cannot open " + path + " for writing");
  return out;
}

// Keeps the global entries and the train.* entries of a config dump; each
// entry is a blank-line separated block of comment lines plus "key=value".
std::string train_section(const std::string& dump) {
  std::istringstream in(dump);
  std::string out, block, line;
  auto flush = [&] {
    const auto last = block.rfind('\n', block.size() - 2);
    const std::string entry = block.substr(last == std::string::npos ? 0 : last + 1);
    const auto eq = entry.find('=');
    const auto dot = entry.find('.');
    const bool global = eq == std::string::npos || dot == std::string::npos || dot > eq;
    if (global || entry.rfind("train.", 0) == 0) out += (out.empty() ? "" : "\n") + block;
    block.clear();
  };
  while (std::getline(in, line)) {
    if (line.empty()) {
      if (!block.empty()) flush();
    } else {
      block += line + '\n';
    }
  }
  if (!block.empty()) flush();
  return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainCommand {
  CLI::App* cmd = nullptr;
  CLI::Option* ngrams_opt = nullptr;
  CLI::Option* decay_opt = nullptr;
  DataOptions data_opts;
  std::string data, dev, model, report, codec, dump_config;
  double dev_split = 0.0;
  std::string preset = "text";
  std::string ngrams = "4,8,12,16";
  double weight_decay = 1e-3;
  std::uint32_t dim = 16;
  std::uint64_t table_size = std::uint64_t{1} << 24;
  std::string hash = "fnv1a64";
  std::size_t topk = 0;
  std::uint32_t epochs = 5;
  double lr = 0.05;

  void add_to(CLI::App& app) {
    cmd = app.add_subcommand("train", "Train a classifier; writes a model file and a per-epoch report");
    cmd->add_option("--data", data, "Training dataset (TSV, BSDS or FASTA)")->required();
    cmd->add_option("--dev", dev, "Validation dataset");
    cmd->add_option("--dev-split", dev_split, "Hold out this fraction of --data for validation (0 = none)")
        ->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--model", model, "Output model file")->required();
    cmd->add_option("--report", report, "Write the per-epoch JSONL report here");
    cmd->add_option("--codec", codec, "Huffman codec applied to payloads before featurization");
    cmd->add_option("--preset", preset, "Defaults for --ngrams/--weight-decay: text = 4,8,12,16 / 1e-3, gene = 2[1-8] / 1e-6")
        ->check(CLI::IsMember({"text", "gene"}));
    ngrams_opt = cmd->add_option("--ngrams", ngrams, "n-gram set: a,b,c | {n} | [a-b] | k[a-b] | k^[a-b]");
    decay_opt = cmd->add_option("--weight-decay", weight_decay, "Per-step weight decay")->check(CLI::NonNegativeNumber);
    cmd->add_option("--dim", dim, "Embedding dimension")->check(CLI::PositiveNumber);
    cmd->add_option("--table-size", table_size, "Hash table size (embedding rows)")->check(CLI::PositiveNumber);
    cmd->add_option("--hash", hash, "Hash function")->check(CLI::IsMember({"fnv1a64", "city64"}));
    cmd->add_option("--topk", topk, "Use a vocabulary of the k most frequent training grams instead of hashing (0 = hash)");
    cmd->add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
    cmd->add_option("--lr", lr, "Initial learning rate, decayed linearly to 0")->check(CLI::PositiveNumber);
    data_opts.add_to(cmd);
    cmd->add_option("--dump-config", dump_config, "Write the effective configuration to this file and exit")
        ->configurable(false);
  }

  void resolve_preset() {
    if (preset != "gene") return;
    if (ngrams_opt->count() == 0) ngrams_opt->default_val("2[1-8]");
    if (decay_opt->count() == 0) decay_opt->default_val(1e-6);
  }

  int run(const CLI::App& app, const Globals& g) {
    if (!dump_config.empty()) {
      auto out = open_out(dump_config);
      out << train_section(app.config_to_str(true, true));
      if (!out) throw bs::IoError("cannot write " + dump_config);
      return kOk;
    }
    if (!dev.empty() && dev_split > 0.0) throw UsageError("--dev and --dev-split are mutually exclusive");

    bs::TrainConfig cfg;
    cfg.features.ngrams = parse_ngrams(ngrams);
    cfg.features.hash = parse_hash(hash);
    cfg.features.table_size = table_size;
    if (topk > 0) cfg.features.topk = topk;
    cfg.dim = dim;
    cfg.epochs = epochs;
    cfg.lr = lr;
    cfg.weight_decay = weight_decay;
    cfg.workers = g.threads;
    cfg.seed = g.seed;
    cfg.codec = load_codec(codec);
    cfg.log = &std::cerr;
    if (!g.quiet) cfg.on_epoch = [](const bs::EpochRecord& e) { std::cout << e.to_json().dump() << std::endl; };

    bs::Dataset train_set = data_opts.load(data);
    std::optional<bs::Dataset> dev_set;
    if (!dev.empty()) {
      dev_set = data_opts.load(dev);
    } else if (dev_split > 0.0) {
      auto [a, b] = bs::split(train_set, 1.0 - dev_split, bs::derive_seed(g.seed, 0x73706c74));
      train_set = std::move(a);
      dev_set = std::move(b);
    }

    auto result = bs::train(cfg, train_set, dev_set ? &*dev_set : nullptr);
    bs::save_classifier(model, result.classifier);
    if (!report.empty()) {
      auto out = open_out(report);
      out << result.report.to_jsonl();
      if (!out) throw bs::IoError("cannot write " + report);
    }
    return kOk;
  }
};

// ---------------------------------------------------------------------------
// test

struct TestCommand {
  CLI::App* cmd = nullptr;
  DataOptions data_opts;
  std::string model, data, codec;
  std::optional<std::uint64_t> table_size;
  std::optional<std::string> ngrams;
  std::optional<std::string> hash;
  std::optional<std::uint32_t> dim;

  void add_to(CLI::App& app) {
    cmd = app.add_subcommand("test", "Report the error rate of a model on a dataset");
    cmd->add_option("--model", model, "Model file")->required();
    cmd->add_option("--data", data, "Test dataset")->required();
    cmd->add_option("--codec", codec, "Huffman codec the model was trained with");
    cmd->add_option("--table-size", table_size, "Expected hash table size; exit 4 if the model differs");
    cmd->add_option("--ngrams", ngrams, "Expected n-gram set; exit 4 if the model differs");
    cmd->add_option("--hash", hash, "Expected hash function; exit 4 if the model differs");
    cmd->add_option("--dim", dim, "Expected embedding dimension; exit 4 if the model differs");
    data_opts.add_to(cmd);
  }

  int run(const Globals& g) {
    const auto c = bs::load_classifier(model);
    const auto& ix = c.features.indexer;
    const bool hashed = ix.mode() == bs::FeatureIndexer::Mode::kHashed;
    if (table_size && (!hashed || ix.rows() != *table_size)) {
      throw MismatchError("model has " + ix.describe() + ", requested table size " + std::to_string(*table_size));
    }
    if (ngrams && parse_ngrams(*ngrams) != c.features.ngrams) {
      throw MismatchError("model uses n-gram set " + c.features.ngrams.to_string() + ", requested " + *ngrams);
    }
    if (hash && (!hashed || parse_hash(*hash) != ix.hash_variant())) {
      throw MismatchError("model has " + ix.describe() + ", requested hash " + *hash);
    }
    if (dim && *dim != c.model.dim()) {
      throw MismatchError("model has dim " + std::to_string(c.model.dim()) + ", requested " + std::to_string(*dim));
    }

    bs::Dataset ds = data_opts.load(data);
    for (const auto& s : ds.samples) {
      if (s.label >= c.model.num_classes()) {
        throw MismatchError("dataset label " + std::to_string(s.label) + " is outside the model's " +
                            std::to_string(c.model.num_classes()) + " classes");
      }
    }
    if (auto cd = load_codec(codec)) ds = bs::compress_dataset(ds, *cd);
    const double err = bs::evaluate(c, ds, g.threads);
    std::cout << "error " << fixed4(err) << " (" << ds.size() << " samples)\n";
    return kOk;
  }
};

// ---------------------------------------------------------------------------
// predict

struct PredictCommand {
  CLI::App* cmd = nullptr;
  std::string model, codec;

  void add_to(CLI::App& app) {
    cmd = app.add_subcommand("predict",
                             "Classify escaped payloads from stdin, one per line; prints label<TAB>probabilities");
    cmd->add_option("--model", model, "Model file")->required();
    cmd->add_option("--codec", codec, "Huffman codec the model was trained with");
  }

  int run() {
    const auto c = bs::load_classifier(model);
    const auto cd = load_codec(codec);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(std::cin, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      bs::Bytes payload;
      try {
        payload = bs::unescape_payload(line);
      } catch (const bs::ParseError& e) {
        throw bs::ParseError("stdin line " + std::to_string(lineno) + ": " + e.what());
      }
      if (cd) payload = cd->encode(payload).payload;
      const auto p = c.predict(payload);
      std::cout << p.argmax << '\t';
      for (std::size_t k = 0; k < p.probabilities.size(); ++k) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", p.probabilities[k]);
        std::cout << (k ? " " : "") << buf;
      }
      std::cout << '\n';
    }
    return kOk;
  }
};

// ---------------------------------------------------------------------------
// huffman-build / compress

struct HuffmanBuildCommand {
  CLI::App* cmd = nullptr;
  DataOptions data_opts;
  std::string data, out;
  std::uint32_t m = 1;
  unsigned arity = 2;

  void add_to(CLI::App& app) {
    cmd = app.add_subcommand("huffman-build", "Build a Huffman codec from a dataset's payloads; prints the ratio");
    cmd->add_option("--data", data, "Corpus dataset")->required();
    cmd->add_option("--m", m, "Symbol length in bytes")->check(CLI::PositiveNumber);
    cmd->add_option("--arity", arity, "2 = bit-level, 256 = byte-level")->check(CLI::IsMember({2u, 256u}));
    cmd->add_option("--out", out, "Output codec file")->required();
    data_opts.add_to(cmd);
  }

  int run() {
    const bs::Dataset ds = data_opts.load(data);
    const auto corpus = ds.payloads();
    auto codec = bs::HuffmanCodec::build(bs::SymbolDictionary::build(corpus, m), arity);
    bs::save_codec(out, codec);
    std::cout << "ratio " << fixed4(bs::compression_ratio(codec, corpus)) << '\n';
    return kOk;
  }
};

struct CompressCommand {
  CLI::App* cmd = nullptr;
  DataOptions data_opts;
  std::string data, codec, out;

  void add_to(CLI::App& app) {
    cmd = app.add_subcommand("compress", "Huffman-encode every payload of a dataset");
    cmd->add_option("--data", data, "Input dataset")->required();
    cmd->add_option("--codec", codec, "Codec file")->required();
    cmd->add_option("--out", out, "Output dataset (.bsds = binary, otherwise TSV)")->required();
    data_opts.add_to(cmd);
  }

  int run(const Globals& g) {
    const bs::Dataset ds = data_opts.load(data);
    const auto cd = load_codec(codec);
    const auto compressed = bs::compress_dataset(ds, *cd);
    bs::save_dataset(out, compressed);
    if (!g.quiet) std::cout << "ratio " << fixed4(bs::compression_ratio(*cd, ds.payloads())) << '\n';
    return kOk;
  }
};

// ---------------------------------------------------------------------------
// sweep

struct SweepCommand {
  CLI::App* cmd = nullptr;
  DataOptions data_opts;
  std::string spec, data, dev, out;
  double dev_split = 0.1;
  std::string format = "table";

  void add_to(CLI::App& app) {
    cmd = app.add_subcommand("sweep", "Run a hyper-parameter grid from a JSON spec and render the report");
    cmd->add_option("--spec", spec, "JSON sweep spec")->required();
    cmd->add_option("--data", data, "Training dataset")->required();
    cmd->add_option("--dev", dev, "Validation dataset (default: hold out --dev-split of --data)");
    cmd->add_option("--dev-split", dev_split, "Held-out fraction when --dev is absent")
        ->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--format", format, "Report format")->check(CLI::IsMember({"table", "delimited"}));
    cmd->add_option("--out", out, "Write the report here instead of stdout");
    data_opts.add_to(cmd);
  }

  int run(const Globals& g) {
    std::ifstream in(spec);
    if (!in) throw bs::IoError("cannot open " + spec);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw bs::ParseError(spec + ": " + e.what());
    }
    bs::SweepSpec base;
    base.fixed.seed = g.seed;
    base.fixed.workers = g.threads;
    const auto s = bs::SweepSpec::from_json(j, base);

    bs::Dataset train_set = data_opts.load(data);
    bs::Dataset dev_set;
    if (!dev.empty()) {
      dev_set = data_opts.load(dev);
    } else {
      auto [a, b] = bs::split(train_set, 1.0 - dev_split, bs::derive_seed(g.seed, 0x73706c74));
      train_set = std::move(a);
      dev_set = std::move(b);
    }
    const auto report = bs::run_sweep(s, train_set, dev_set);
    const auto text = bs::render_report(
        report, format == "delimited" ? bs::ReportFormat::kDelimited : bs::ReportFormat::kTableText);
    if (out.empty()) {
      std::cout << text;
    } else {
      auto f = open_out(out, std::ios::binary);
      f << text;
      if (!f) throw bs::IoError("cannot write " + out);
    }
    return kOk;
  }
};

// ---------------------------------------------------------------------------
// synth

struct SynthCommand {
  CLI::App* cmd = nullptr;
  bs::SyntheticParams p;
  std::string kind = "separable-text";
  std::string out, dev_out;
  double dev_fraction = 0.1;

  void add_to(CLI::App& app) {
    cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
    cmd->add_option("--kind", kind, "Generator")->check(CLI::IsMember({"separable-text", "dna-uniform", "dna-motif"}));
    cmd->add_option("--samples", p.samples, "Number of samples");
    cmd->add_option("--classes", p.classes, "Number of classes");
    cmd->add_option("--min-length", p.min_length, "Minimum noise/background length");
    cmd->add_option("--max-length", p.max_length, "Maximum noise/background length");
    cmd->add_option("--markers-per-class", p.markers_per_class, "separable-text: markers owned by each class");
    cmd->add_option("--min-marker", p.min_marker, "separable-text: minimum marker length");
    cmd->add_option("--max-marker", p.max_marker, "separable-text: maximum marker length");
    cmd->add_option("--plants", p.plants, "separable-text: markers per sample");
    cmd->add_option("--motif-length", p.motif_length, "dna-motif: motif length");
    cmd->add_option("--out", out, "Output dataset (.bsds = binary, otherwise TSV)")->required();
    cmd->add_option("--dev-out", dev_out, "Also write a held-out split here");
    cmd->add_option("--dev-fraction", dev_fraction, "Held-out fraction when --dev-out is given")
        ->check(CLI::Range(0.0, 1.0));
  }

  int run(const Globals& g) {
    p.kind = *bs::parse_synthetic_kind(kind);
    p.seed = g.seed;
    const auto ds = bs::generate_synthetic(p);
    if (dev_out.empty()) {
      bs::save_dataset(out, ds);
      return kOk;
    }
    auto [a, b] = bs::split(ds, 1.0 - dev_fraction, bs::derive_seed(g.seed, 0x73706c74));
    bs::save_dataset(out, a);
    bs::save_dataset(dev_out, b);
    return kOk;
  }
};

int fail(int code, const std::string& what) {
  std::cerr << "bytesteady: " << what << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Byte-level n-gram classifier with optional Huffman-compressed inputs"};
  app.name("bytesteady");
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Read options from an INI/TOML file (see train --dump-config)");

  Globals g;
  app.add_option("--seed", g.seed, "Base random seed");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", g.quiet, "Suppress progress output");

  TrainCommand train;
  TestCommand test;
  PredictCommand predict;
  HuffmanBuildCommand huffman_build;
  CompressCommand compress;
  SweepCommand sweep;
  SynthCommand synth;
  train.add_to(app);
  test.add_to(app);
  predict.add_to(app);
  huffman_build.add_to(app);
  compress.add_to(app);
  sweep.add_to(app);
  synth.add_to(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kUsage, e.what());
  }

  try {
    if (*train.cmd) {
      train.resolve_preset();
      return train.run(app, g);
    }
    if (*test.cmd) return test.run(g);
    if (*predict.cmd) return predict.run();
    if (*huffman_build.cmd) return huffman_build.run();
    if (*compress.cmd) return compress.run(g);
    if (*sweep.cmd) return sweep.run(g);
    if (*synth.cmd) return synth.run(g);
    return fail(kUsage, "no subcommand");
  } catch (const UsageError& e) {
    return fail(kUsage, e.what());
  } catch (const MismatchError& e) {
    return fail(kMismatch, e.what());
  } catch (const bs::IoError& e) {
    return fail(kIo, e.what());
  } catch (const bs::ParseError& e) {
    return fail(kFormat, e.what());
  } catch (const bs::FormatError& e) {
    return fail(kFormat, e.what());
  } catch (const bs::ConfigError& e) {
    return fail(kUsage, e.what());
  } catch (const std::exception& e) {
    return fail(kFailure, e.what());
  }
}

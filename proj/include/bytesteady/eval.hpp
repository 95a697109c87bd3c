#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bytesteady/data.hpp"
#include "bytesteady/huffman.hpp"
#include "bytesteady/ngram.hpp"
#include "bytesteady/random.hpp"
#include "bytesteady/trainer.hpp"

namespace bytesteady {

// "none", "bit:<m>" (binary tree) or "byte:<m>" (256-ary tree).
struct CodecChoice {
  unsigned arity = 0;  // 0 = no compression
  std::uint32_t m = 1;

  static CodecChoice parse(const std::string& s) {
    if (s == "none") return {};
    const auto colon = s.find(':');
    const std::string kind = s.substr(0, colon);
    if (colon == std::string::npos || (kind != "bit" && kind != "byte")) {
      throw ParseError("codec \"" + s + "\": expected none, bit:<m> or byte:<m>");
    }
    const std::string digits = s.substr(colon + 1);
    if (digits.empty() || digits.size() > 6 ||
        !std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw ParseError("codec \"" + s + "\": bad symbol length");
    }
    CodecChoice c{kind == "bit" ? 2u : 256u, static_cast<std::uint32_t>(std::stoul(digits))};
    if (c.m == 0) throw ParseError("codec \"" + s + "\": symbol length must be >= 1");
    return c;
  }
};

struct SweepSpec {
  std::vector<std::string> ngram_sets{"4,8,12,16"};
  std::vector<double> weight_decays{1e-3};
  std::vector<std::uint32_t> embedding_dims{16};
  std::vector<std::uint64_t> table_sizes{std::uint64_t{1} << 24};
  std::vector<std::string> codecs{"none"};
  // Everything not swept: epochs, lr, workers, base seed, hash variant, top-k.
  TrainConfig fixed;
  std::uint32_t replicates = 1;
  std::size_t budget = 1000;  // max training runs (cells x replicates)

  std::size_t cells() const {
    return ngram_sets.size() * weight_decays.size() * embedding_dims.size() * table_sizes.size() *
           codecs.size();
  }

  void validate() const {
    if (cells() == 0) throw ConfigError("every sweep axis needs at least one value");
    if (replicates == 0) throw ConfigError("replicates must be >= 1");
    if (cells() * replicates > budget) {
      throw ConfigError("sweep has " + std::to_string(cells() * replicates) +
                        " runs, over the budget of " + std::to_string(budget));
    }
    for (const auto& s : ngram_sets) (void)parse_ngram_set(s);
    for (const auto& c : codecs) (void)CodecChoice::parse(c);
  }

  // Keys: ngram_sets, weight_decays, embedding_dims, table_sizes, codecs,
  // replicates, budget, and "fixed": {epochs, lr, workers, seed, hash, topk}.
  // Missing keys keep the values already in `base`.
  static SweepSpec from_json(const nlohmann::json& j) { return from_json(j, SweepSpec{}); }

  static SweepSpec from_json(const nlohmann::json& j, SweepSpec base) {
    SweepSpec s = std::move(base);
    try {
      if (j.contains("ngram_sets")) s.ngram_sets = j.at("ngram_sets").get<std::vector<std::string>>();
      if (j.contains("weight_decays")) s.weight_decays = j.at("weight_decays").get<std::vector<double>>();
      if (j.contains("embedding_dims")) s.embedding_dims = j.at("embedding_dims").get<std::vector<std::uint32_t>>();
      if (j.contains("table_sizes")) s.table_sizes = j.at("table_sizes").get<std::vector<std::uint64_t>>();
      if (j.contains("codecs")) s.codecs = j.at("codecs").get<std::vector<std::string>>();
      if (j.contains("replicates")) s.replicates = j.at("replicates").get<std::uint32_t>();
      if (j.contains("budget")) s.budget = j.at("budget").get<std::size_t>();
      if (j.contains("fixed")) {
        const auto& f = j.at("fixed");
        if (f.contains("epochs")) s.fixed.epochs = f.at("epochs").get<std::uint32_t>();
        if (f.contains("lr")) s.fixed.lr = f.at("lr").get<double>();
        if (f.contains("workers")) s.fixed.workers = f.at("workers").get<std::uint32_t>();
        if (f.contains("seed")) s.fixed.seed = f.at("seed").get<std::uint64_t>();
        if (f.contains("topk")) s.fixed.features.topk = f.at("topk").get<std::size_t>();
        if (f.contains("hash")) {
          auto v = parse_hash_variant(f.at("hash").get<std::string>());
          if (!v) throw ParseError("unknown hash variant");
          s.fixed.features.hash = *v;
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("sweep spec: ") + e.what());
    }
    s.validate();
    return s;
  }
};

struct SweepCell {
  std::string ngram_set;
  double weight_decay = 0.0;
  std::uint32_t dim = 0;
  std::uint64_t table_size = 0;
  std::string codec = "none";

  std::optional<double> error;  // validation error, mean over replicates
  double train_seconds = 0.0;
  double samples_per_sec = 0.0;
  std::optional<double> compression_ratio;
  std::string failure;  // non-empty when the cell failed

  bool failed() const { return !failure.empty(); }
};

struct SweepReport {
  std::vector<SweepCell> cells;
};

// Seed of one (cell, replicate), derived from the base seed and the cell's
// axis coordinates.
inline std::uint64_t cell_seed(std::uint64_t base, std::size_t ngram_i, std::size_t decay_i, std::size_t dim_i,
                               std::size_t table_i, std::size_t codec_i, std::uint32_t replicate) {
  return derive_seed(base, ngram_i, decay_i, dim_i, table_i, codec_i, replicate);
}

// Trains and evaluates one model per cell and replicate. Codecs are built
// from the training (development) split and applied to both splits. A cell
// that throws is recorded as failed; the sweep carries on.
inline SweepReport run_sweep(const SweepSpec& spec, const Dataset& train_set, const Dataset& dev_set,
                             const std::function<void(const SweepCell&)>& on_cell = {}) {
  spec.validate();
  SweepReport report;
  std::map<std::string, std::shared_ptr<const HuffmanCodec>> codecs;

  for (std::size_t gi = 0; gi < spec.ngram_sets.size(); ++gi) {
    for (std::size_t di = 0; di < spec.weight_decays.size(); ++di) {
      for (std::size_t ei = 0; ei < spec.embedding_dims.size(); ++ei) {
        for (std::size_t ti = 0; ti < spec.table_sizes.size(); ++ti) {
          for (std::size_t ci = 0; ci < spec.codecs.size(); ++ci) {
            SweepCell cell;
            cell.ngram_set = spec.ngram_sets[gi];
            cell.weight_decay = spec.weight_decays[di];
            cell.dim = spec.embedding_dims[ei];
            cell.table_size = spec.table_sizes[ti];
            cell.codec = spec.codecs[ci];
            try {
              TrainConfig cfg = spec.fixed;
              cfg.on_epoch = {};
              cfg.features.ngrams = parse_ngram_set(cell.ngram_set);
              cfg.features.table_size = cell.table_size;
              cfg.dim = cell.dim;
              cfg.weight_decay = cell.weight_decay;
              const CodecChoice choice = CodecChoice::parse(cell.codec);
              cfg.codec = nullptr;
              if (choice.arity != 0) {
                auto& slot = codecs[cell.codec];
                if (!slot) {
                  slot = std::make_shared<const HuffmanCodec>(HuffmanCodec::build(
                      SymbolDictionary::build(train_set.payloads(), choice.m), choice.arity));
                }
                cfg.codec = slot;
                cell.compression_ratio = compression_ratio(*slot, dev_set.payloads());
              }
              const Dataset dev = cfg.codec ? compress_dataset(dev_set, *cfg.codec) : dev_set;
              double err = 0.0, secs = 0.0, sps = 0.0;
              for (std::uint32_t r = 0; r < spec.replicates; ++r) {
                cfg.seed = cell_seed(spec.fixed.seed, gi, di, ei, ti, ci, r);
                const auto start = std::chrono::steady_clock::now();
                TrainResult res = train(cfg, train_set);
                secs += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                for (const auto& e : res.report.epochs) sps += e.samples_per_sec / static_cast<double>(res.report.epochs.size());
                err += evaluate(res.classifier, dev);
              }
              const double reps = spec.replicates;
              cell.error = err / reps;
              cell.train_seconds = secs / reps;
              cell.samples_per_sec = sps / reps;
            } catch (const std::exception& e) {
              cell.error.reset();
              cell.failure = e.what();
              if (cell.failure.empty()) cell.failure = "unknown error";
            }
            if (on_cell) on_cell(cell);
            report.cells.push_back(std::move(cell));
          }
        }
      }
    }
  }
  return report;
}

enum class ReportFormat { kTableText, kDelimited };

namespace report_detail {

inline std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string short_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::string percent(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f%%", v * 100.0);
  return buf;
}

inline std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

template <typename T>
std::size_t index_of(std::vector<T>& seen, const T& v) {
  auto it = std::find(seen.begin(), seen.end(), v);
  if (it != seen.end()) return static_cast<std::size_t>(it - seen.begin());
  seen.push_back(v);
  return seen.size() - 1;
}

inline const char* kDelimitedHeader =
    "ngram_set\tweight_decay\tdim\ttable_size\tcodec\terror\ttrain_seconds\tsamples_per_sec\t"
    "compression_ratio\tstatus";

}  // namespace report_detail

// table-text: one Markdown table per (dim, table size, codec) group, rows =
// n-gram sets, columns = weight decays, the group minimum in bold.
// delimited: tab-separated, header row plus one row per cell; exact values.
inline std::string render_report(const SweepReport& report, ReportFormat format) {
  using namespace report_detail;
  std::ostringstream out;
  if (format == ReportFormat::kDelimited) {
    out << kDelimitedHeader << '\n';
    for (const auto& c : report.cells) {
      out << sanitize(c.ngram_set) << '\t' << exact(c.weight_decay) << '\t' << c.dim << '\t' << c.table_size
          << '\t' << sanitize(c.codec) << '\t' << (c.error ? exact(*c.error) : "") << '\t'
          << exact(c.train_seconds) << '\t' << exact(c.samples_per_sec) << '\t'
          << (c.compression_ratio ? exact(*c.compression_ratio) : "") << '\t'
          << (c.failed() ? "failed: " + sanitize(c.failure) : std::string("ok")) << '\n';
    }
    return out.str();
  }

  if (report.cells.empty()) {
    out << "| n-gram set |\n|---|\n";
    return out.str();
  }

  struct Group {
    std::string title;
    std::vector<std::string> rows;
    std::vector<double> cols;
    std::map<std::pair<std::size_t, std::size_t>, const SweepCell*> grid;
  };
  std::vector<std::string> group_keys;
  std::vector<Group> groups;
  for (const auto& c : report.cells) {
    const std::string title = "dim " + std::to_string(c.dim) + ", table " + std::to_string(c.table_size) +
                              ", codec " + c.codec;
    const std::size_t gi = index_of(group_keys, title);
    if (gi == groups.size()) groups.push_back(Group{title, {}, {}, {}});
    Group& g = groups[gi];
    const std::size_t r = index_of(g.rows, c.ngram_set);
    const std::size_t col = index_of(g.cols, c.weight_decay);
    g.grid[{r, col}] = &c;
  }
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& g = groups[gi];
    if (gi) out << '\n';
    if (groups.size() > 1) out << g.title << "\n\n";
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [key, c] : g.grid) {
      if (c->error) best = std::min(best, *c->error);
    }
    out << "| n-gram set |";
    for (double d : g.cols) out << ' ' << short_num(d) << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < g.cols.size(); ++i) out << "---:|";
    out << '\n';
    for (std::size_t r = 0; r < g.rows.size(); ++r) {
      out << "| " << g.rows[r] << " |";
      for (std::size_t col = 0; col < g.cols.size(); ++col) {
        auto it = g.grid.find({r, col});
        std::string v = "-";
        if (it != g.grid.end()) {
          const SweepCell& c = *it->second;
          if (c.failed()) {
            v = "failed";
          } else if (c.error) {
            v = percent(*c.error);
            if (*c.error == best) v = "**" + v + "**";
          }
        }
        out << ' ' << v << " |";
      }
      out << '\n';
    }
  }
  return out.str();
}

// Inverse of the delimited rendering.
inline SweepReport parse_delimited_report(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != report_detail::kDelimitedHeader) {
    throw ParseError("delimited report: missing or unexpected header");
  }
  SweepReport report;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      f.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (f.size() != 10) throw ParseError("delimited report line " + std::to_string(lineno) + ": expected 10 fields");
    try {
      SweepCell c;
      c.ngram_set = f[0];
      c.weight_decay = std::stod(f[1]);
      c.dim = static_cast<std::uint32_t>(std::stoul(f[2]));
      c.table_size = std::stoull(f[3]);
      c.codec = f[4];
      if (!f[5].empty()) c.error = std::stod(f[5]);
      c.train_seconds = std::stod(f[6]);
      c.samples_per_sec = std::stod(f[7]);
      if (!f[8].empty()) c.compression_ratio = std::stod(f[8]);
      if (f[9] != "ok") {
        if (f[9].rfind("failed: ", 0) != 0) throw ParseError("bad status");
        c.failure = f[9].substr(8);
      }
      report.cells.push_back(std::move(c));
    } catch (const std::logic_error&) {
      throw ParseError("delimited report line " + std::to_string(lineno) + ": bad field");
    }
  }
  return report;
}

}  // namespace bytesteady

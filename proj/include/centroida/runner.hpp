#pragma once

// Experiment orchestration: per-seed data preparation, training, evaluation and
// artifact files; multi-seed summaries and parameter sweeps.

#include "centroida/config.hpp"
#include "centroida/eval.hpp"
#include "centroida/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

namespace centroida {

namespace fs = std::filesystem;

struct PreparedData {
  LabeledDataset source;
  LabeledDataset target;  // training split, labels only for evaluation
  LabeledDataset test;    // held-out balanced target split
};

inline ImbalanceSpec imbalance_spec(double p, std::uint64_t seed, const std::vector<int>& order) {
  ImbalanceSpec s{p, seed, order.empty() ? RankOrder::by_count_desc : RankOrder::given_permutation, order};
  return s;
}

/// Builds the three splits for one seed and applies the sampling protocol to the
/// source and target training splits.
inline PreparedData prepare_data(const ExperimentConfig& c, std::uint64_t seed) {
  std::optional<LabeledDataset> src, tgt, test;
  if (c.dataset == DatasetKind::synthetic) {
    GaussianMixturePair mixture(c.synthetic, derive_seed(seed, 10));
    src = mixture.sample(Domain::source, c.synthetic.source_counts, derive_seed(seed, 11));
    tgt = mixture.sample(Domain::target, c.synthetic.target_counts, derive_seed(seed, 12));
    test = mixture.sample(Domain::target, c.test_counts, derive_seed(seed, 13));
  } else {
    src = load_csv(c.csv.source_train, {c.num_classes, Domain::source});
    tgt = load_csv(c.csv.target_train, {c.num_classes, Domain::target});
    test = load_csv(c.csv.target_test, {c.num_classes, Domain::target});
    if (src->dim() != tgt->dim() || src->dim() != test->dim())
      throw InvalidInput("source, target and test CSVs have different feature widths");
  }
  return {apply_sampling_protocol(*src, imbalance_spec(c.p_source, derive_seed(seed, 14), c.source_rank_order)),
          apply_sampling_protocol(*tgt, imbalance_spec(c.p_target, derive_seed(seed, 15), c.target_rank_order)),
          std::move(*test)};
}

inline TrainConfig train_config(const ExperimentConfig& c, std::uint64_t seed) {
  TrainConfig t;
  t.lambda = c.lambda;
  t.temperature = c.temperature;
  t.gamma_form = c.gamma_form;
  t.batch_size = c.batch_size;
  t.epochs = c.epochs;
  t.lr0 = c.lr0;
  t.lr_decay = c.lr_decay;
  t.momentum = c.momentum;
  t.variant = c.variant;
  t.source_centroid_labels = c.source_centroid_labels;
  t.seed = derive_seed(seed, 20);
  return t;
}

struct SeedResult {
  std::uint64_t seed = 0;
  MetricsReport report;
  std::vector<LossRecord> loss_trace;
  std::size_t target_label_reads_during_training = 0;
};

/// Trains and evaluates one seed. When `dir` is non-empty the run artifacts are
/// written there: metrics.json, confusion.csv, loss_trace.csv, checkpoint.json.
inline SeedResult run_seed(const ExperimentConfig& c, std::uint64_t seed, const fs::path& dir = {}) {
  const auto start = std::chrono::steady_clock::now();
  auto data = prepare_data(c, seed);
  auto tc = train_config(c, seed);
  if (!dir.empty() && c.dump_centroids) tc.centroid_dump_dir = (dir / "centroids").string();

  const MlpShape shape{data.source.dim(), c.hidden, c.bottleneck, c.num_classes};
  const std::size_t reads_before = data.target.guard().reads();
  auto state = train(ReferenceMLP(shape, derive_seed(seed, 21)), data.source, data.target, tc);

  SeedResult r;
  r.seed = seed;
  r.target_label_reads_during_training = data.target.guard().reads() - reads_before;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.report = evaluate(state.model, data.test, {config_hash(c), seed, to_string(c.variant), secs});
  r.loss_trace = std::move(state.loss_trace);

  if (!dir.empty()) {
    fs::create_directories(dir);
    std::ofstream((dir / "metrics.json").string()) << r.report.to_json().dump(2) << '\n';
    r.report.confusion.write_csv((dir / "confusion.csv").string());
    write_loss_trace_csv((dir / "loss_trace.csv").string(), r.loss_trace);
    save_checkpoint((dir / "checkpoint.json").string(), state.model);
  }
  return r;
}

struct RunSummary {
  std::vector<SeedResult> seeds;
  double mean_acc = 0.0;
  double stddev_acc = 0.0;  // sample standard deviation, 0 for a single seed

  nlohmann::json to_json() const {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& s : seeds) per.push_back({{"seed", s.seed}, {"mean_acc", s.report.mean_acc}});
    return {{"mean_acc", mean_acc}, {"stddev_acc", stddev_acc}, {"per_seed", per}};
  }
};

inline RunSummary summarize(std::vector<SeedResult> results) {
  RunSummary s;
  s.seeds = std::move(results);
  const double n = static_cast<double>(s.seeds.size());
  for (const auto& r : s.seeds) s.mean_acc += r.report.mean_acc / n;
  if (s.seeds.size() > 1) {
    double ss = 0.0;
    for (const auto& r : s.seeds) ss += (r.report.mean_acc - s.mean_acc) * (r.report.mean_acc - s.mean_acc);
    s.stddev_acc = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

/// Worker cap from CENTROIDA_THREADS (default 1).
inline unsigned worker_threads() {
  const char* env = std::getenv("CENTROIDA_THREADS");
  if (!env || !*env) return 1;
  const std::string text(env);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || v < 1)
    throw ConfigError("CENTROIDA_THREADS", "must be a positive integer, got '" + text + "'");
  return static_cast<unsigned>(v);
}

/// Runs every seed, in parallel up to `threads` workers. Results keep seed order.
inline std::vector<SeedResult> run_seeds(const ExperimentConfig& c, const fs::path& out_dir, unsigned threads) {
  std::vector<SeedResult> results(c.seeds.size());
  std::vector<std::exception_ptr> errors(c.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < c.seeds.size(); i = next++) {
      try {
        const auto dir = out_dir.empty() ? fs::path{} : out_dir / ("seed_" + std::to_string(c.seeds[i]));
        results[i] = run_seed(c, c.seeds[i], dir);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(c.seeds.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const TrainingAbort& e) {
      throw TrainingAbort("seed " + std::to_string(c.seeds[i]) + " (" + to_string(c.variant) + "): " + e.what());
    } catch (const NumericError& e) {
      throw TrainingAbort("seed " + std::to_string(c.seeds[i]) + " (" + to_string(c.variant) + "): " + e.what());
    }
  }
  return results;
}

struct RunOptions {
  bool overwrite = false;
  bool write_files = true;
  unsigned threads = 1;
};

inline void prepare_output_dir(const fs::path& dir, bool overwrite) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!overwrite) throw ConfigError("output_dir", dir.string() + " already exists (pass --overwrite to replace it)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

/// Validates, then runs every seed and writes config.json, seed_<n>/ and summary.json.
inline RunSummary run(const ExperimentConfig& c, const RunOptions& opt = {}) {
  const auto diags = validate(c);
  if (!diags.empty()) throw ConfigError(diags.front().field, diags.front().message);
  fs::path out;
  if (opt.write_files) {
    out = c.output_dir;
    prepare_output_dir(out, opt.overwrite);
    save_config((out / "config.json").string(), c);
  }
  auto summary = summarize(run_seeds(c, out, opt.threads));
  if (opt.write_files) {
    auto j = summary.to_json();
    j["variant"] = to_string(c.variant);
    j["config_hash"] = config_hash(c);
    std::ofstream((out / "summary.json").string()) << j.dump(2) << '\n';
  }
  return summary;
}

struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

/// Parses "key=v1,v2,...". Values may themselves be JSON arrays, so commas inside
/// brackets do not split.
inline GridAxis parse_grid(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
    throw ConfigError("--grid", "expected key=v1,v2,... but got '" + spec + "'");
  GridAxis axis{spec.substr(0, eq), {}};
  std::string cur;
  int depth = 0;
  for (char ch : spec.substr(eq + 1)) {
    if (ch == '[') ++depth;
    if (ch == ']') --depth;
    if (ch == ',' && depth == 0) {
      axis.values.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  axis.values.push_back(cur);
  for (const auto& v : axis.values)
    if (v.empty()) throw ConfigError("--grid", "empty value in '" + spec + "'");
  return axis;
}

/// Axes from the config's own sweep list, with command-line axes replacing any
/// of the same key and appended otherwise.
inline std::vector<GridAxis> sweep_axes(const ExperimentConfig& c, const std::vector<GridAxis>& extra) {
  std::vector<GridAxis> axes;
  for (const auto& [key, values] : c.sweep) axes.push_back({key, values});
  for (const auto& e : extra) {
    auto it = std::find_if(axes.begin(), axes.end(), [&](const GridAxis& a) { return a.key == e.key; });
    if (it != axes.end())
      *it = e;
    else
      axes.push_back(e);
  }
  return axes;
}

struct SweepPoint {
  std::vector<std::pair<std::string, std::string>> assignment;
  RunSummary summary;
};

/// Cartesian product over the axes. Each point runs into
/// <output_dir>/<key>=<value>[__<key>=<value>...] and the table goes to sweep.json.
inline std::vector<SweepPoint> sweep(const ExperimentConfig& base, const std::vector<GridAxis>& axes,
                                     const RunOptions& opt = {}) {
  if (axes.empty()) throw ConfigError("--grid", "at least one grid axis is required");
  const fs::path root = base.output_dir;
  if (opt.write_files) prepare_output_dir(root, opt.overwrite);

  std::vector<std::size_t> idx(axes.size(), 0);
  std::vector<SweepPoint> points;
  while (true) {
    ExperimentConfig c = base;
    SweepPoint pt;
    std::string name;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      const auto& v = axes[a].values[idx[a]];
      c = with_override(c, axes[a].key, v);
      pt.assignment.emplace_back(axes[a].key, v);
      name += (a ? "__" : "") + axes[a].key + "=" + v;
    }
    c.output_dir = (root / name).string();
    c.sweep.clear();
    RunOptions sub = opt;
    sub.overwrite = true;  // the sweep root was already checked
    pt.summary = run(c, sub);
    points.push_back(std::move(pt));

    std::size_t a = 0;
    while (a < axes.size() && ++idx[a] == axes[a].values.size()) idx[a++] = 0;
    if (a == axes.size()) break;
  }

  if (opt.write_files) {
    nlohmann::json table = nlohmann::json::array();
    for (const auto& p : points) {
      nlohmann::json row = p.summary.to_json();
      for (const auto& [k, v] : p.assignment) row["grid"][k] = v;
      table.push_back(row);
    }
    std::ofstream((root / "sweep.json").string()) << table.dump(2) << '\n';
  }
  return points;
}

}  // namespace centroida

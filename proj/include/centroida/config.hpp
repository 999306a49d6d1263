#pragma once

// Experiment configuration: JSON (de)serialization, validation diagnostics and
// dotted-key overrides used by the CLI and sweeps.

#include "centroida/data.hpp"
#include "centroida/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace centroida {

/// A malformed or invalid configuration. `field` names the offending key.
struct ConfigError : InvalidSpec {
  ConfigError(std::string field, const std::string& what)
      : InvalidSpec(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct CsvPaths {
  std::string source_train;
  std::string target_train;
  std::string target_test;

  bool operator==(const CsvPaths&) const = default;
};

enum class DatasetKind { synthetic, csv };

struct ExperimentConfig {
  DatasetKind dataset = DatasetKind::synthetic;
  int num_classes = 5;
  SyntheticSpec synthetic = default_synthetic();
  std::vector<std::size_t> test_counts = std::vector<std::size_t>(5, 200);
  CsvPaths csv;

  double p_source = 1.0;
  double p_target = 0.05;
  std::vector<int> source_rank_order;  // empty: rank by count
  std::vector<int> target_rank_order;

  int hidden = 64;
  int bottleneck = 32;

  double lambda = 5.0;
  double temperature = kDefaultTemperature;
  GammaForm gamma_form = GammaForm::sigmoid_ramp;
  std::size_t batch_size = 50;
  int epochs = 50;
  double lr0 = 0.005;
  bool lr_decay = true;
  double momentum = 0.9;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  Variant variant = Variant::full;
  CentroidLabelSource source_centroid_labels = CentroidLabelSource::classifier;
  bool dump_centroids = false;
  std::string output_dir = "runs/centroida";
  // Grid for the sweep command: key -> values, each value kept as JSON text.
  std::map<std::string, std::vector<std::string>> sweep;

  bool operator==(const ExperimentConfig&) const = default;

  /// Five-class, ten-dimensional mixture whose class means sit around a common
  /// center, rotated by 30 degrees in the target domain. The source keeps a mild
  /// natural imbalance that the sampling protocol then ranks against.
  static SyntheticSpec default_synthetic() {
    SyntheticSpec s;
    s.num_classes = 5;
    s.dim = 10;
    s.mean_scale = 1.0;
    s.center_norm = 6.0;
    s.noise = 0.7;
    s.source_counts = {100, 150, 200, 250, 300};
    s.target_counts = {200, 200, 200, 200, 200};
    s.shift.rotation_deg = 30.0;
    return s;
  }
};

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json sweep_json(const std::map<std::string, std::vector<std::string>>& grid) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [key, values] : grid) {
    auto& arr = out[key] = nlohmann::json::array();
    for (const auto& v : values) arr.push_back(nlohmann::json::parse(v, nullptr, false).is_discarded()
                                                   ? nlohmann::json(v)
                                                   : nlohmann::json::parse(v));
  }
  return out;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json ds;
  if (c.dataset == DatasetKind::synthetic) {
    const auto& s = c.synthetic;
    ds = {{"kind", "synthetic"},
          {"num_classes", c.num_classes},
          {"dim", s.dim},
          {"mean_scale", s.mean_scale},
          {"center_norm", s.center_norm},
          {"noise", s.noise},
          {"source_counts", s.source_counts},
          {"target_counts", s.target_counts},
          {"test_counts", c.test_counts},
          {"rotation_deg", s.shift.rotation_deg},
          {"translation", s.shift.translation},
          {"shift_scale", s.shift.scale}};
  } else {
    ds = {{"kind", "csv"},
          {"num_classes", c.num_classes},
          {"source_train", c.csv.source_train},
          {"target_train", c.csv.target_train},
          {"target_test", c.csv.target_test}};
  }
  return {{"dataset", ds},
          {"p_source", c.p_source},
          {"p_target", c.p_target},
          {"source_rank_order", c.source_rank_order},
          {"target_rank_order", c.target_rank_order},
          {"model", {{"hidden", c.hidden}, {"bottleneck", c.bottleneck}}},
          {"lambda", c.lambda},
          {"temperature", c.temperature},
          {"gamma_form", to_string(c.gamma_form)},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"lr0", c.lr0},
          {"lr_decay", c.lr_decay},
          {"momentum", c.momentum},
          {"seeds", c.seeds},
          {"variant", to_string(c.variant)},
          {"source_centroid_labels", to_string(c.source_centroid_labels)},
          {"dump_centroids", c.dump_centroids},
          {"output_dir", c.output_dir},
          {"sweep", sweep_json(c.sweep)}};
}

namespace detail {

template <typename T>
void read_field(const nlohmann::json& obj, const char* key, T& into, const std::string& path) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    into = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(path + key, "wrong type (" + std::string(it->type_name()) + ")");
  }
}

inline void reject_unknown(const nlohmann::json& obj, std::initializer_list<const char*> known, const std::string& path) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(path + it.key(), "unknown key");
  }
}

template <typename E, typename Parse>
void read_enum(const nlohmann::json& obj, const char* key, E& into, Parse parse) {
  std::string name;
  read_field(obj, key, name, "");
  if (name.empty()) return;
  try {
    into = parse(name);
  } catch (const InvalidSpec& e) {
    throw ConfigError(key, e.what());
  }
}

}  // namespace detail

/// Starts from defaults and applies every key present. Unknown keys are errors.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  detail::reject_unknown(j,
                         {"dataset", "p_source", "p_target", "source_rank_order", "target_rank_order", "model",
                          "lambda", "temperature", "gamma_form", "batch_size", "epochs", "lr0", "lr_decay",
                          "momentum", "seeds", "variant", "source_centroid_labels", "dump_centroids", "output_dir", "sweep"},
                         "");
  ExperimentConfig c;
  if (auto it = j.find("dataset"); it != j.end()) {
    const auto& ds = *it;
    if (!ds.is_object()) throw ConfigError("dataset", "must be an object");
    std::string kind = "synthetic";
    detail::read_field(ds, "kind", kind, "dataset.");
    detail::read_field(ds, "num_classes", c.num_classes, "dataset.");
    if (kind == "synthetic") {
      detail::reject_unknown(ds,
                             {"kind", "num_classes", "dim", "mean_scale", "center_norm", "noise", "source_counts",
                              "target_counts", "test_counts", "rotation_deg", "translation", "shift_scale"},
                             "dataset.");
      auto& s = c.synthetic;
      detail::read_field(ds, "dim", s.dim, "dataset.");
      detail::read_field(ds, "mean_scale", s.mean_scale, "dataset.");
      detail::read_field(ds, "center_norm", s.center_norm, "dataset.");
      detail::read_field(ds, "noise", s.noise, "dataset.");
      detail::read_field(ds, "source_counts", s.source_counts, "dataset.");
      detail::read_field(ds, "target_counts", s.target_counts, "dataset.");
      detail::read_field(ds, "test_counts", c.test_counts, "dataset.");
      detail::read_field(ds, "rotation_deg", s.shift.rotation_deg, "dataset.");
      detail::read_field(ds, "translation", s.shift.translation, "dataset.");
      detail::read_field(ds, "shift_scale", s.shift.scale, "dataset.");
    } else if (kind == "csv") {
      c.dataset = DatasetKind::csv;
      detail::reject_unknown(ds, {"kind", "num_classes", "source_train", "target_train", "target_test"}, "dataset.");
      detail::read_field(ds, "source_train", c.csv.source_train, "dataset.");
      detail::read_field(ds, "target_train", c.csv.target_train, "dataset.");
      detail::read_field(ds, "target_test", c.csv.target_test, "dataset.");
    } else {
      throw ConfigError("dataset.kind", "expected 'synthetic' or 'csv', got '" + kind + "'");
    }
    c.synthetic.num_classes = c.num_classes;
  }
  detail::read_field(j, "p_source", c.p_source, "");
  detail::read_field(j, "p_target", c.p_target, "");
  detail::read_field(j, "source_rank_order", c.source_rank_order, "");
  detail::read_field(j, "target_rank_order", c.target_rank_order, "");
  if (auto it = j.find("model"); it != j.end()) {
    if (!it->is_object()) throw ConfigError("model", "must be an object");
    detail::reject_unknown(*it, {"hidden", "bottleneck"}, "model.");
    detail::read_field(*it, "hidden", c.hidden, "model.");
    detail::read_field(*it, "bottleneck", c.bottleneck, "model.");
  }
  detail::read_field(j, "lambda", c.lambda, "");
  detail::read_field(j, "temperature", c.temperature, "");
  detail::read_enum(j, "gamma_form", c.gamma_form, parse_gamma_form);
  detail::read_field(j, "batch_size", c.batch_size, "");
  detail::read_field(j, "epochs", c.epochs, "");
  detail::read_field(j, "lr0", c.lr0, "");
  detail::read_field(j, "lr_decay", c.lr_decay, "");
  detail::read_field(j, "momentum", c.momentum, "");
  detail::read_field(j, "seeds", c.seeds, "");
  detail::read_enum(j, "variant", c.variant, parse_variant);
  detail::read_enum(j, "source_centroid_labels", c.source_centroid_labels, parse_label_source);
  detail::read_field(j, "dump_centroids", c.dump_centroids, "");
  detail::read_field(j, "output_dir", c.output_dir, "");
  if (auto it = j.find("sweep"); it != j.end()) {
    if (!it->is_object()) throw ConfigError("sweep", "must be an object of key -> value list");
    for (auto axis = it->begin(); axis != it->end(); ++axis) {
      if (!axis->is_array() || axis->empty()) throw ConfigError("sweep." + axis.key(), "must be a non-empty list");
      auto& values = c.sweep[axis.key()];
      for (const auto& v : *axis) values.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    }
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("--config", std::string("invalid JSON in ") + path + ": " + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const std::string& path, const ExperimentConfig& c) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write config: " + path);
  out << to_json(c).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Validation

struct Diagnostic {
  std::string field;
  std::string message;
};

inline std::vector<Diagnostic> validate(const ExperimentConfig& c) {
  std::vector<Diagnostic> out;
  auto bad = [&](std::string field, std::string msg) { out.push_back({std::move(field), std::move(msg)}); };
  const auto k = static_cast<std::size_t>(std::max(c.num_classes, 0));

  if (c.num_classes < 2) bad("dataset.num_classes", "need at least 2 classes");
  if (c.dataset == DatasetKind::synthetic) {
    const auto& s = c.synthetic;
    if (s.dim < 2) bad("dataset.dim", "must be >= 2");
    if (!(s.mean_scale > 0.0)) bad("dataset.mean_scale", "must be > 0");
    if (!(s.center_norm >= 0.0)) bad("dataset.center_norm", "must be >= 0");
    if (!(s.noise >= 0.0)) bad("dataset.noise", "must be >= 0");
    if (s.source_counts.size() != k) bad("dataset.source_counts", "needs one count per class");
    if (s.target_counts.size() != k) bad("dataset.target_counts", "needs one count per class");
    if (c.test_counts.size() != k) bad("dataset.test_counts", "needs one count per class");
    for (const auto* counts : {&s.source_counts, &s.target_counts, &c.test_counts})
      if (!counts->empty() && std::all_of(counts->begin(), counts->end(), [](auto n) { return n == 0; }))
        bad("dataset", "a per-class count list sums to zero");
    if (!std::isfinite(s.shift.scale) || s.shift.scale == 0.0)
      bad("dataset.shift_scale", "degenerate shift: scale must be finite and non-zero");
    if (!std::isfinite(s.shift.rotation_deg)) bad("dataset.rotation_deg", "must be finite");
    if (!s.shift.translation.empty() && static_cast<int>(s.shift.translation.size()) != s.dim)
      bad("dataset.translation", "needs dim entries (or none)");
  } else {
    for (const auto& [field, path] : {std::pair{"dataset.source_train", &c.csv.source_train},
                                      std::pair{"dataset.target_train", &c.csv.target_train},
                                      std::pair{"dataset.target_test", &c.csv.target_test}}) {
      if (path->empty())
        bad(field, "path is required");
      else if (!std::filesystem::is_regular_file(*path))
        bad(field, "file not found: " + *path);
    }
  }

  for (const auto& [field, p] : {std::pair{"p_source", c.p_source}, std::pair{"p_target", c.p_target}})
    if (!(p > 0.0 && p <= 1.0)) bad(field, "must lie in (0, 1]");
  for (const auto& [field, order] : {std::pair{"source_rank_order", &c.source_rank_order},
                                     std::pair{"target_rank_order", &c.target_rank_order}}) {
    if (order->empty()) continue;
    std::vector<int> sorted = *order;
    std::sort(sorted.begin(), sorted.end());
    bool perm = sorted.size() == k;
    for (std::size_t i = 0; perm && i < sorted.size(); ++i) perm = sorted[i] == static_cast<int>(i);
    if (!perm) bad(field, "must be a permutation of the class ids");
  }

  if (c.hidden < 0) bad("model.hidden", "must be >= 0");
  if (c.bottleneck < 1) bad("model.bottleneck", "must be >= 1");
  if (!(c.lambda >= 0.0)) bad("lambda", "must be >= 0");
  if (!(c.temperature > 0.0)) bad("temperature", "must be > 0");
  if (c.batch_size < 1) bad("batch_size", "must be >= 1");
  if (c.epochs < 1) bad("epochs", "must be >= 1");
  if (!(c.lr0 > 0.0)) bad("lr0", "must be > 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) bad("momentum", "must lie in [0, 1)");
  if (c.seeds.empty()) bad("seeds", "at least one seed is required");
  if (c.output_dir.empty()) bad("output_dir", "must not be empty");
  return out;
}

// ---------------------------------------------------------------------------
// Overrides

/// Sets a dotted key (e.g. "model.hidden") on a config document. The value text is
/// parsed as JSON when possible, otherwise taken as a string. The key "p" sets both
/// p_source and p_target.
inline void apply_override(nlohmann::json& doc, const std::string& key, const std::string& value_text) {
  nlohmann::json value = nlohmann::json::parse(value_text, nullptr, false);
  if (value.is_discarded()) value = value_text;
  if (key == "p") {
    doc["p_source"] = value;
    doc["p_target"] = value;
    return;
  }
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError(key, "empty path segment");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline ExperimentConfig with_override(const ExperimentConfig& c, const std::string& key, const std::string& value) {
  auto doc = to_json(c);
  apply_override(doc, key, value);
  return config_from_json(doc);
}

/// FNV-1a over the serialized config minus output location and seeds.
inline std::string config_hash(const ExperimentConfig& c) {
  auto j = to_json(c);
  j.erase("output_dir");
  j.erase("seeds");
  j.erase("sweep");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace centroida

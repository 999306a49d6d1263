#pragma once

// Confusion matrix, per-class mean accuracy and the metrics report.

#include "centroida/data.hpp"
#include "centroida/model.hpp"

#include <json.hpp>

#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace centroida {

/// counts[i][j] = number of class-i samples predicted as class j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int k) : k_(k), counts_(static_cast<std::size_t>(k) * static_cast<std::size_t>(k), 0) {
    if (k < 1) throw InvalidSpec("confusion matrix needs K >= 1");
  }

  int num_classes() const { return k_; }
  std::size_t at(int truth, int pred) const { return counts_[index(truth, pred)]; }
  void add(int truth, int pred) { ++counts_[index(truth, pred)]; }

  std::size_t row_sum(int truth) const {
    std::size_t s = 0;
    for (int j = 0; j < k_; ++j) s += at(truth, j);
    return s;
  }

  std::size_t total() const {
    std::size_t s = 0;
    for (auto c : counts_) s += c;
    return s;
  }

  std::vector<std::size_t> row_sums() const {
    std::vector<std::size_t> out(static_cast<std::size_t>(k_));
    for (int i = 0; i < k_; ++i) out[static_cast<std::size_t>(i)] = row_sum(i);
    return out;
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write confusion matrix: " + path);
    out << "true\\pred";
    for (int j = 0; j < k_; ++j) out << ',' << j;
    out << '\n';
    for (int i = 0; i < k_; ++i) {
      out << i;
      for (int j = 0; j < k_; ++j) out << ',' << at(i, j);
      out << '\n';
    }
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t index(int i, int j) const {
    if (i < 0 || i >= k_ || j < 0 || j >= k_)
      throw InvalidInput("label pair (" + std::to_string(i) + ", " + std::to_string(j) + ") outside [0, " +
                         std::to_string(k_) + ")");
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(k_) + static_cast<std::size_t>(j);
  }

  int k_;
  std::vector<std::size_t> counts_;
};

inline ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> pred, int k) {
  if (truth.size() != pred.size()) throw InvalidInput("truth and prediction lengths differ");
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], pred[i]);
  return cm;
}

struct ClassAccuracy {
  std::vector<double> per_class;  // NaN for empty classes
  double mean = 0.0;              // over non-empty classes only
  std::vector<int> empty_classes;
};

inline ClassAccuracy per_class_mean_accuracy(const ConfusionMatrix& cm, std::span<const std::size_t> class_counts) {
  const int k = cm.num_classes();
  if (static_cast<int>(class_counts.size()) != k) throw InvalidInput("class_counts must have K entries");
  ClassAccuracy out;
  out.per_class.assign(static_cast<std::size_t>(k), std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < k; ++c) {
    const auto n = class_counts[static_cast<std::size_t>(c)];
    if (n != cm.row_sum(c)) throw InvalidInput("class_counts disagree with confusion row " + std::to_string(c));
    if (n == 0) {
      out.empty_classes.push_back(c);
      continue;
    }
    const double acc = static_cast<double>(cm.at(c, c)) / static_cast<double>(n);
    out.per_class[static_cast<std::size_t>(c)] = acc;
    sum += acc;
    ++used;
  }
  if (used == 0) throw InvalidInput("per-class mean accuracy undefined: every class is empty");
  out.mean = sum / used;
  return out;
}

inline double plain_accuracy(const ConfusionMatrix& cm) {
  std::size_t hit = 0;
  for (int c = 0; c < cm.num_classes(); ++c) hit += cm.at(c, c);
  return static_cast<double>(hit) / static_cast<double>(cm.total());
}

inline Labels predict(const ReferenceMLP& model, const Matrix& x) { return argmax_rows(model.logits(x)); }

struct RunMetadata {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string variant;
  double wall_clock_seconds = 0.0;
};

struct MetricsReport {
  ConfusionMatrix confusion{1};
  std::vector<double> per_class_acc;
  double mean_acc = 0.0;
  double plain_acc = 0.0;
  std::vector<std::size_t> class_counts;
  std::vector<int> empty_classes;
  RunMetadata run;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["mean_acc"] = mean_acc;
    j["plain_acc"] = plain_acc;
    j["per_class_acc"] = nlohmann::json::array();
    for (double a : per_class_acc) j["per_class_acc"].push_back(std::isnan(a) ? nlohmann::json(nullptr) : nlohmann::json(a));
    j["class_counts"] = class_counts;
    j["empty_classes"] = empty_classes;
    auto& cm = j["confusion"] = nlohmann::json::array();
    for (int i = 0; i < confusion.num_classes(); ++i) {
      std::vector<std::size_t> row;
      for (int c = 0; c < confusion.num_classes(); ++c) row.push_back(confusion.at(i, c));
      cm.push_back(row);
    }
    j["run"] = {{"config_hash", run.config_hash},
                {"seed", run.seed},
                {"variant", run.variant},
                {"wall_clock_seconds", run.wall_clock_seconds}};
    return j;
  }
};

/// Scores a model on a labelled split. Reads the split's labels (this is the only
/// place target labels are meant to be read).
inline MetricsReport evaluate(const ReferenceMLP& model, const LabeledDataset& test, RunMetadata meta = {}) {
  const Labels pred = predict(model, test.features());
  const Labels& truth = test.labels();
  MetricsReport r;
  r.confusion = confusion_matrix(truth, pred, test.num_classes());
  r.class_counts = r.confusion.row_sums();
  const auto acc = per_class_mean_accuracy(r.confusion, r.class_counts);
  r.per_class_acc = acc.per_class;
  r.mean_acc = acc.mean;
  r.empty_classes = acc.empty_classes;
  r.plain_acc = plain_accuracy(r.confusion);
  r.run = std::move(meta);
  return r;
}

}  // namespace centroida

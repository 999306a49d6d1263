#pragma once

// Datasets, the long-tail sampling protocol, batch samplers, the synthetic
// Gaussian-mixture domain pair and CSV ingestion.

#include "centroida/core.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace centroida {

/// Counts reads of a dataset's labels. Target-domain datasets hand out labels only
/// through this guard so tests can prove the training path never looks at them.
class LabelAccessGuard {
 public:
  void record() { reads_.fetch_add(1, std::memory_order_relaxed); }
  std::size_t reads() const { return reads_.load(std::memory_order_relaxed); }

 private:
  std::atomic<std::size_t> reads_{0};
};

class LabeledDataset {
 public:
  LabeledDataset(Matrix features, Labels labels, int num_classes, Domain domain,
                 std::vector<std::string> class_names = {})
      : features_(std::move(features)),
        labels_(std::move(labels)),
        num_classes_(num_classes),
        domain_(domain),
        class_names_(std::move(class_names)),
        guard_(std::make_shared<LabelAccessGuard>()) {
    if (features_.rows() < 1 || features_.cols() < 1)
      throw InvalidInput("dataset needs at least one row and one feature column");
    if (static_cast<Eigen::Index>(labels_.size()) != features_.rows())
      throw InvalidInput("label count " + std::to_string(labels_.size()) + " != row count " +
                         std::to_string(features_.rows()));
    if (num_classes_ < 1) throw InvalidInput("num_classes must be >= 1");
    if (!class_names_.empty() && static_cast<int>(class_names_.size()) != num_classes_)
      throw InvalidInput("class_names must have one entry per class");
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i] < 0 || labels_[i] >= num_classes_)
        throw InvalidInput("label " + std::to_string(labels_[i]) + " at row " + std::to_string(i) +
                           " outside [0, " + std::to_string(num_classes_) + ")");
    }
  }

  const Matrix& features() const { return features_; }
  std::size_t size() const { return static_cast<std::size_t>(features_.rows()); }
  int dim() const { return static_cast<int>(features_.cols()); }
  int num_classes() const { return num_classes_; }
  Domain domain() const { return domain_; }
  const std::vector<std::string>& class_names() const { return class_names_; }

  /// Ground-truth labels. Reads on target datasets are recorded by the guard.
  const Labels& labels() const {
    if (domain_ == Domain::target) guard_->record();
    return labels_;
  }

  const LabelAccessGuard& guard() const { return *guard_; }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes_), 0);
    for (int y : labels()) ++counts[static_cast<std::size_t>(y)];
    return counts;
  }

  /// Rows in the given order. The copy gets its own access guard.
  LabeledDataset subset(std::span<const std::size_t> rows) const {
    Matrix f(static_cast<Eigen::Index>(rows.size()), features_.cols());
    Labels l(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      f.row(static_cast<Eigen::Index>(i)) = features_.row(static_cast<Eigen::Index>(rows[i]));
      l[i] = labels_[rows[i]];
    }
    return LabeledDataset(std::move(f), std::move(l), num_classes_, domain_, class_names_);
  }

  Matrix gather(std::span<const std::size_t> rows) const {
    Matrix f(static_cast<Eigen::Index>(rows.size()), features_.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      f.row(static_cast<Eigen::Index>(i)) = features_.row(static_cast<Eigen::Index>(rows[i]));
    return f;
  }

 private:
  Matrix features_;
  Labels labels_;
  int num_classes_;
  Domain domain_;
  std::vector<std::string> class_names_;
  std::shared_ptr<LabelAccessGuard> guard_;
};

// ---------------------------------------------------------------------------
// Sampling protocol

enum class RankOrder { by_count_desc, given_permutation };

struct ImbalanceSpec {
  double p = 1.0;
  std::uint64_t seed = 0;
  RankOrder order = RankOrder::by_count_desc;
  /// permutation[j] is the class placed at rank j (used with given_permutation).
  std::vector<int> permutation;
};

/// Class ids ordered by rank. Ties in count go to the lower class id.
inline std::vector<int> rank_classes(std::span<const std::size_t> counts, const ImbalanceSpec& spec) {
  const int k = static_cast<int>(counts.size());
  if (spec.order == RankOrder::given_permutation) {
    std::vector<int> sorted = spec.permutation;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> expected(static_cast<std::size_t>(k));
    std::iota(expected.begin(), expected.end(), 0);
    if (sorted != expected) throw InvalidSpec("rank permutation must list every class id exactly once");
    return spec.permutation;
  }
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)];
  });
  return order;
}

/// Kept count for rank j: round-half-up of n_max * p^(j / (num_ranks - 1)), at least 1.
inline std::size_t protocol_count(std::size_t n_max, double p, int rank, int num_ranks) {
  if (num_ranks < 2) throw InvalidSpec("sampling protocol undefined for fewer than two classes");
  if (!(p > 0.0) || p > 1.0) throw InvalidSpec("imbalance ratio p must lie in (0, 1]");
  const double exact = static_cast<double>(n_max) *
                       std::pow(p, static_cast<double>(rank) / static_cast<double>(num_ranks - 1));
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(exact + 0.5)));
}

/// Subsamples each class to follow a geometric long tail over the class ranking.
/// Within a class rows are picked uniformly without replacement and keep their order.
inline LabeledDataset apply_sampling_protocol(const LabeledDataset& ds, const ImbalanceSpec& spec) {
  const int k = ds.num_classes();
  if (k < 2) throw InvalidSpec("sampling protocol undefined for a single-class dataset");
  if (!(spec.p > 0.0) || spec.p > 1.0) throw InvalidSpec("imbalance ratio p must lie in (0, 1]");

  const Labels& labels = ds.labels();
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  std::vector<std::size_t> counts(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) counts[static_cast<std::size_t>(c)] = by_class[static_cast<std::size_t>(c)].size();

  const auto ranking = rank_classes(counts, spec);
  const std::size_t n_max = *std::max_element(counts.begin(), counts.end());

  std::mt19937_64 rng(spec.seed);
  std::vector<std::size_t> keep;
  for (int rank = 0; rank < k; ++rank) {
    auto& rows = by_class[static_cast<std::size_t>(ranking[static_cast<std::size_t>(rank)])];
    const std::size_t target = std::min(rows.size(), protocol_count(n_max, spec.p, rank, k));
    std::shuffle(rows.begin(), rows.end(), rng);
    keep.insert(keep.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(target));
  }
  std::sort(keep.begin(), keep.end());
  return ds.subset(keep);
}

// ---------------------------------------------------------------------------
// Samplers

/// Draws a class uniformly, then a row of that class uniformly with replacement.
class ClassBalancedSampler {
 public:
  ClassBalancedSampler(const LabeledDataset& ds, std::size_t batch_size, std::uint64_t seed)
      : batch_size_(batch_size), rng_(seed) {
    if (ds.domain() != Domain::source)
      throw InvalidInput("class-balanced sampling needs labels and only applies to the source domain");
    if (batch_size_ < 1) throw InvalidSpec("batch_size must be >= 1");
    by_class_.resize(static_cast<std::size_t>(ds.num_classes()));
    const Labels& labels = ds.labels();
    for (std::size_t i = 0; i < labels.size(); ++i) by_class_[static_cast<std::size_t>(labels[i])].push_back(i);
    for (std::size_t c = 0; c < by_class_.size(); ++c)
      if (by_class_[c].empty()) throw InvalidInput("class " + std::to_string(c) + " has no samples");
    batches_per_epoch_ = (ds.size() + batch_size_ - 1) / batch_size_;
  }

  std::size_t batches_per_epoch() const { return batches_per_epoch_; }
  std::size_t batch_size() const { return batch_size_; }

  int draw_class() {
    std::uniform_int_distribution<std::size_t> pick(0, by_class_.size() - 1);
    return static_cast<int>(pick(rng_));
  }

  std::vector<std::size_t> next_batch() {
    std::vector<std::size_t> out(batch_size_);
    for (auto& idx : out) {
      const auto& rows = by_class_[static_cast<std::size_t>(draw_class())];
      std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
      idx = rows[pick(rng_)];
    }
    return out;
  }

 private:
  std::size_t batch_size_;
  std::mt19937_64 rng_;
  std::vector<std::vector<std::size_t>> by_class_;
  std::size_t batches_per_epoch_ = 0;
};

/// Shuffled passes over [0, n) without replacement; reshuffles when a pass runs out.
/// Never touches labels, so it is safe for the target domain.
class UniformSampler {
 public:
  UniformSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : n_(n), batch_size_(batch_size), rng_(seed) {
    if (n_ == 0) throw InvalidInput("cannot sample from an empty dataset");
    if (batch_size_ < 1) throw InvalidSpec("batch_size must be >= 1");
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    cursor_ = n_;
  }

  std::size_t batches_per_epoch() const { return (n_ + batch_size_ - 1) / batch_size_; }

  std::vector<std::size_t> next_batch() {
    std::vector<std::size_t> out(batch_size_);
    for (auto& idx : out) {
      if (cursor_ == n_) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
      }
      idx = order_[cursor_++];
    }
    return out;
  }

 private:
  std::size_t n_;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_;
};

// ---------------------------------------------------------------------------
// Synthetic domain pair

struct CovariateShift {
  double rotation_deg = 0.0;
  std::vector<double> translation;  // empty means zero
  double scale = 1.0;

  bool operator==(const CovariateShift&) const = default;
};

struct SyntheticSpec {
  int num_classes = 5;
  int dim = 10;
  double mean_scale = 3.0;   // class means ~ center + N(0, mean_scale^2 I)
  double center_norm = 0.0;  // |center|; the center points along (1, 1, ..., 1)
  double noise = 1.0;        // isotropic within-class std
  std::vector<std::size_t> source_counts;
  std::vector<std::size_t> target_counts;
  CovariateShift shift;

  bool operator==(const SyntheticSpec&) const = default;
};

/// Rotation by the same angle in every coordinate plane (0,1), (2,3), ...; an odd
/// trailing coordinate is left fixed.
inline Matrix plane_rotation(int dim, double degrees) {
  Matrix r = Matrix::Identity(dim, dim);
  const double a = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  for (int i = 0; i + 1 < dim; i += 2) {
    r(i, i) = c;
    r(i, i + 1) = -s;
    r(i + 1, i) = s;
    r(i + 1, i + 1) = c;
  }
  return r;
}

/// A K-class isotropic Gaussian mixture and its shifted copy. Both domains share
/// p(y|x) up to the transform x -> scale * R x + t applied to every class mean.
class GaussianMixturePair {
 public:
  GaussianMixturePair(const SyntheticSpec& spec, std::uint64_t seed) : spec_(spec) {
    if (spec.num_classes < 2) throw InvalidSpec("synthetic pair needs at least two classes");
    if (spec.dim < 2) throw InvalidSpec("synthetic pair needs dim >= 2");
    if (!(spec.noise >= 0.0) || !(spec.mean_scale > 0.0) || !(spec.center_norm >= 0.0))
      throw InvalidSpec("noise and center_norm must be >= 0, mean_scale > 0");
    const auto& sh = spec.shift;
    if (!std::isfinite(sh.scale) || sh.scale == 0.0 || !std::isfinite(sh.rotation_deg))
      throw InvalidSpec("degenerate covariate shift: transform has rank zero or is not finite");
    if (!sh.translation.empty() && static_cast<int>(sh.translation.size()) != spec.dim)
      throw InvalidSpec("shift translation must have dim entries");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, spec.mean_scale);
    source_means_.resize(spec.num_classes, spec.dim);
    for (Eigen::Index k = 0; k < source_means_.rows(); ++k)
      for (Eigen::Index d = 0; d < source_means_.cols(); ++d)
        source_means_(k, d) = spec.center_norm / std::sqrt(static_cast<double>(spec.dim)) + normal(rng);

    rotation_ = plane_rotation(spec.dim, sh.rotation_deg);
    Eigen::RowVectorXd t = Eigen::RowVectorXd::Zero(spec.dim);
    for (std::size_t d = 0; d < sh.translation.size(); ++d) t(static_cast<Eigen::Index>(d)) = sh.translation[d];
    target_means_ = sh.scale * source_means_ * rotation_.transpose();
    target_means_.rowwise() += t;
  }

  const Matrix& source_means() const { return source_means_; }
  const Matrix& target_means() const { return target_means_; }
  const Matrix& rotation() const { return rotation_; }

  /// Draws counts[k] points of class k, grouped by class.
  LabeledDataset sample(Domain domain, std::span<const std::size_t> counts, std::uint64_t seed) const {
    if (static_cast<int>(counts.size()) != spec_.num_classes)
      throw InvalidSpec("per-class counts must have num_classes entries");
    const std::size_t n = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    if (n == 0) throw InvalidSpec("per-class counts sum to zero");
    const Matrix& means = domain == Domain::source ? source_means_ : target_means_;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix x(static_cast<Eigen::Index>(n), spec_.dim);
    Labels y(n);
    Eigen::Index row = 0;
    for (int k = 0; k < spec_.num_classes; ++k) {
      for (std::size_t i = 0; i < counts[static_cast<std::size_t>(k)]; ++i, ++row) {
        for (int d = 0; d < spec_.dim; ++d) x(row, d) = means(k, d) + spec_.noise * normal(rng);
        y[static_cast<std::size_t>(row)] = k;
      }
    }
    return LabeledDataset(std::move(x), std::move(y), spec_.num_classes, domain);
  }

 private:
  SyntheticSpec spec_;
  Matrix source_means_;
  Matrix target_means_;
  Matrix rotation_;
};

inline std::pair<LabeledDataset, LabeledDataset> make_synthetic_pair(const SyntheticSpec& spec,
                                                                     std::uint64_t seed) {
  GaussianMixturePair mixture(spec, seed);
  auto counts_or_default = [&](const std::vector<std::size_t>& c) {
    return c.empty() ? std::vector<std::size_t>(static_cast<std::size_t>(spec.num_classes), 100) : c;
  };
  const auto sc = counts_or_default(spec.source_counts);
  const auto tc = counts_or_default(spec.target_counts);
  return {mixture.sample(Domain::source, sc, seed ^ 0x5eedULL),
          mixture.sample(Domain::target, tc, seed ^ 0x7a6eULL)};
}

// ---------------------------------------------------------------------------
// CSV

struct CsvSchema {
  int num_classes = 0;
  Domain domain = Domain::source;
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    cells.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return value;
}

}  // namespace detail

/// Reads `f0,...,f{D-1},label`. Data rows are numbered from 1 in error messages.
inline LabeledDataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open CSV file: " + path);
  if (schema.num_classes < 1) throw InvalidSpec("CSV schema needs num_classes >= 1");

  std::string line;
  if (!std::getline(in, line)) throw InvalidInput(path + ": empty file");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split_commas(detail::trim(line));
  if (header.size() < 2 || detail::trim(header.back()) != "label")
    throw InvalidInput(path + ": header must be f0,...,f{D-1},label");
  const std::size_t dim = header.size() - 1;
  for (std::size_t d = 0; d < dim; ++d) {
    if (detail::trim(header[d]) != "f" + std::to_string(d))
      throw InvalidInput(path + ": header column " + std::to_string(d) + " must be f" + std::to_string(d));
  }

  std::vector<double> values;
  Labels labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    ++row;
    const auto cells = detail::split_commas(body);
    if (cells.size() != dim + 1)
      throw ParseError(row, "expected " + std::to_string(dim + 1) + " cells, got " + std::to_string(cells.size()));
    for (std::size_t d = 0; d < dim; ++d) {
      const auto v = detail::parse_number<double>(cells[d]);
      if (!v || !std::isfinite(*v))
        throw ParseError(row, "non-numeric value '" + std::string(cells[d]) + "' in column f" + std::to_string(d));
      values.push_back(*v);
    }
    const auto y = detail::parse_number<int>(cells[dim]);
    if (!y) throw ParseError(row, "label '" + std::string(cells[dim]) + "' is not an integer");
    if (*y < 0 || *y >= schema.num_classes)
      throw ParseError(row, "label " + std::to_string(*y) + " outside [0, " + std::to_string(schema.num_classes) + ")");
    labels.push_back(*y);
  }
  if (labels.empty()) throw InvalidInput(path + ": no data rows");

  Matrix x = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(labels.size()),
                                static_cast<Eigen::Index>(dim));
  return LabeledDataset(std::move(x), std::move(labels), schema.num_classes, schema.domain);
}

/// Writes with round-trip precision. Reads the labels, so it counts as a label access.
inline void save_csv(const std::string& path, const LabeledDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write CSV file: " + path);
  for (int d = 0; d < ds.dim(); ++d) out << 'f' << d << ',';
  out << "label\n";
  const Labels& labels = ds.labels();
  char buf[64];
  for (Eigen::Index i = 0; i < ds.features().rows(); ++i) {
    for (Eigen::Index d = 0; d < ds.features().cols(); ++d) {
      const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, ds.features()(i, d));
      out.write(buf, end - buf);
      out << ',';
    }
    out << labels[static_cast<std::size_t>(i)] << '\n';
  }
}

}  // namespace centroida

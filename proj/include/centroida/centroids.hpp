#pragma once

// Accumulative class centroids: a per-class running weighted mean of features that
// is fed batch by batch within an epoch and cleared at epoch start.

#include "centroida/core.hpp"

#include <fstream>
#include <limits>
#include <span>

namespace centroida {

class CentroidStore {
 public:
  CentroidStore() = default;
  CentroidStore(int num_classes, int feature_dim, Domain domain)
      : centroids_(Matrix::Zero(num_classes, feature_dim)),
        acc_weight_(Vector::Zero(num_classes)),
        domain_(domain) {
    if (num_classes < 1 || feature_dim < 1) throw InvalidSpec("centroid store needs K >= 1 and D >= 1");
  }

  const Matrix& centroids() const { return centroids_; }
  const Vector& acc_weight() const { return acc_weight_; }
  Domain domain() const { return domain_; }
  int num_classes() const { return static_cast<int>(centroids_.rows()); }
  int feature_dim() const { return static_cast<int>(centroids_.cols()); }

  bool eligible(int k) const { return acc_weight_(k) > 0.0; }
  bool any_eligible() const { return (acc_weight_.array() > 0.0).any(); }
  bool is_zero() const { return centroids_.isZero(0.0) && acc_weight_.isZero(0.0); }

  void reset() {
    centroids_.setZero();
    acc_weight_.setZero();
  }

  /// C_k <- (C_k P_k + sum_i f_i w_i) / (P_k + sum_i w_i), P_k <- P_k + sum_i w_i over rows
  /// labelled k. Classes whose incoming weight sums to zero are left unchanged.
  void update(const Matrix& feats, const Vector& weights, std::span<const int> labels) {
    if (feats.cols() != centroids_.cols())
      throw InvalidInput("feature width " + std::to_string(feats.cols()) + " != store width " +
                         std::to_string(centroids_.cols()));
    if (feats.rows() != weights.size() || static_cast<Eigen::Index>(labels.size()) != feats.rows())
      throw InvalidInput("features, weights and labels must have one entry per row");
    for (Eigen::Index i = 0; i < weights.size(); ++i)
      if (!(weights(i) >= 0.0)) throw InvalidInput("centroid weights must be non-negative");
    for (int y : labels)
      if (y < 0 || y >= num_classes()) throw InvalidInput("label " + std::to_string(y) + " out of range");

    Matrix sums = Matrix::Zero(centroids_.rows(), centroids_.cols());
    Vector mass = Vector::Zero(centroids_.rows());
    for (Eigen::Index i = 0; i < feats.rows(); ++i) {
      const int k = labels[static_cast<std::size_t>(i)];
      sums.row(k) += weights(i) * feats.row(i);
      mass(k) += weights(i);
    }
    for (Eigen::Index k = 0; k < centroids_.rows(); ++k) {
      if (mass(k) == 0.0) continue;
      const double total = acc_weight_(k) + mass(k);
      centroids_.row(k) = (centroids_.row(k) * acc_weight_(k) + sums.row(k)) / total;
      acc_weight_(k) = total;
    }
  }

  /// Copy with the batch applied; `this` is left as the pre-update state.
  CentroidStore updated(const Matrix& feats, const Vector& weights, std::span<const int> labels) const {
    CentroidStore next = *this;
    next.update(feats, weights, labels);
    return next;
  }

  void dump_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write centroid dump: " + path);
    out.precision(17);
    for (Eigen::Index k = 0; k < centroids_.rows(); ++k) {
      for (Eigen::Index d = 0; d < centroids_.cols(); ++d) out << (d ? "," : "") << centroids_(k, d);
      out << '\n';
    }
  }

 private:
  Matrix centroids_;
  Vector acc_weight_;
  Domain domain_ = Domain::source;
};

/// Gradients of a batch update, with the pre-update state held constant.
/// `after` is the store produced by the update, d_centroids is dL/dC' (K x D).
inline void centroid_update_backward(const CentroidStore& after, const Matrix& feats, const Vector& weights,
                                     std::span<const int> labels, const Matrix& d_centroids,
                                     Matrix& d_feats, Vector& d_weights) {
  d_feats.setZero(feats.rows(), feats.cols());
  d_weights.setZero(weights.size());
  for (Eigen::Index i = 0; i < feats.rows(); ++i) {
    const int k = labels[static_cast<std::size_t>(i)];
    const double total = after.acc_weight()(k);
    if (total == 0.0) continue;
    d_feats.row(i) = (weights(i) / total) * d_centroids.row(k);
    d_weights(i) = d_centroids.row(k).dot(feats.row(i) - after.centroids().row(k)) / total;
  }
}

/// Nearest eligible centroid per row in Euclidean distance; ties go to the lower id.
inline Labels nearest_centroid_labels(const CentroidStore& store, const Matrix& feats) {
  if (!store.any_eligible()) throw NotReady("no class centroid has accumulated weight yet");
  if (feats.cols() != store.feature_dim()) throw InvalidInput("feature width does not match centroid store");
  Labels out(static_cast<std::size_t>(feats.rows()));
  for (Eigen::Index i = 0; i < feats.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_k = -1;
    for (int k = 0; k < store.num_classes(); ++k) {
      if (!store.eligible(k)) continue;
      const double d = (feats.row(i) - store.centroids().row(k)).squaredNorm();
      if (d < best) {
        best = d;
        best_k = k;
      }
    }
    out[static_cast<std::size_t>(i)] = best_k;
  }
  return out;
}

struct CentroidLoss {
  bool active = false;
  double value = 0.0;
  int eligible_classes = 0;
  Matrix d_source;  // dL/dC^s, K x D (zero rows for ineligible classes)
  Matrix d_target;
};

/// |E| * sum_{k in E} ||C^s_k - C^t_k|| / sum_{i,j in E} ||C^s_i - C^t_j||, E being the
/// classes with weight in both stores. Needs |E| >= 2 and a non-zero denominator,
/// otherwise the result is inactive with value 0. Pairwise cost is O(|E|^2 D).
inline CentroidLoss centroid_alignment_loss(const CentroidStore& src, const CentroidStore& tgt) {
  if (src.num_classes() != tgt.num_classes() || src.feature_dim() != tgt.feature_dim())
    throw InvalidInput("source and target centroid stores differ in shape");
  CentroidLoss out;
  std::vector<int> e;
  for (int k = 0; k < src.num_classes(); ++k)
    if (src.eligible(k) && tgt.eligible(k)) e.push_back(k);
  out.eligible_classes = static_cast<int>(e.size());
  out.d_source = Matrix::Zero(src.num_classes(), src.feature_dim());
  out.d_target = Matrix::Zero(src.num_classes(), src.feature_dim());
  if (e.size() < 2) return out;

  const Matrix& cs = src.centroids();
  const Matrix& ct = tgt.centroids();
  double numer = 0.0, denom = 0.0;
  for (int i : e) {
    numer += (cs.row(i) - ct.row(i)).norm();
    for (int j : e) denom += (cs.row(i) - ct.row(j)).norm();
  }
  if (denom == 0.0) return out;

  const double n_e = static_cast<double>(e.size());
  out.active = true;
  out.value = n_e * numer / denom;

  // d/dC of numer and denom via unit difference vectors; zero-length pairs get a zero subgradient.
  const double a = n_e / denom;
  const double b = n_e * numer / (denom * denom);
  for (int i : e) {
    for (int j : e) {
      const Eigen::RowVectorXd diff = cs.row(i) - ct.row(j);
      const double len = diff.norm();
      if (len == 0.0) continue;
      const Eigen::RowVectorXd unit = diff / len;
      double coef = -b;
      if (i == j) coef += a;
      out.d_source.row(i) += coef * unit;
      out.d_target.row(j) -= coef * unit;
    }
  }
  return out;
}

}  // namespace centroida

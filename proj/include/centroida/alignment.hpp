#pragma once

// Class-wise cross-domain feature alignment: weighted mean distance between
// same-label source/target pairs over the weighted mean distance of
// different-label pairs.

#include "centroida/core.hpp"

#include <span>

namespace centroida {

/// dist(i, j) = ||a_i - b_j||_2.
inline Matrix pairwise_distances(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw InvalidInput("pairwise_distances: width " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
  Matrix d(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) d(i, j) = (a.row(i) - b.row(j)).norm();
  return d;
}

struct PairAssignment {
  Labels source_labels;  // classifier argmax
  Labels target_labels;  // nearest-centroid corrected
  Vector source_weights;
  Vector target_weights;
  Matrix dist;  // B_s x B_t

  bool same(Eigen::Index i, Eigen::Index j) const {
    return source_labels[static_cast<std::size_t>(i)] == target_labels[static_cast<std::size_t>(j)];
  }
};

inline PairAssignment make_pair_assignment(const Matrix& src_feats, const Matrix& tgt_feats, Labels src_labels,
                                           Labels tgt_labels, Vector src_weights, Vector tgt_weights) {
  if (static_cast<Eigen::Index>(src_labels.size()) != src_feats.rows() || src_weights.size() != src_feats.rows() ||
      static_cast<Eigen::Index>(tgt_labels.size()) != tgt_feats.rows() || tgt_weights.size() != tgt_feats.rows())
    throw InvalidInput("pair assignment: labels and weights must match batch sizes");
  return {std::move(src_labels), std::move(tgt_labels), std::move(src_weights), std::move(tgt_weights),
          pairwise_distances(src_feats, tgt_feats)};
}

struct ClassWiseLoss {
  bool active = false;
  double value = 0.0;
  double d_same = 0.0;
  double d_diff = 0.0;
  // Filled only by the gradient overload.
  Matrix d_source_feats;
  Matrix d_target_feats;
  Vector d_source_weights;
  Vector d_target_weights;
};

namespace detail {

struct MaskSums {
  double same_num = 0, same_den = 0, diff_num = 0, diff_den = 0;
  bool same_any = false, diff_any = false;
};

inline MaskSums mask_sums(const PairAssignment& a) {
  MaskSums s;
  for (Eigen::Index i = 0; i < a.dist.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.dist.cols(); ++j) {
      const double w = std::sqrt(a.source_weights(i) * a.target_weights(j));
      if (a.same(i, j)) {
        s.same_any = true;
        s.same_num += w * a.dist(i, j);
        s.same_den += w;
      } else {
        s.diff_any = true;
        s.diff_num += w * a.dist(i, j);
        s.diff_den += w;
      }
    }
  }
  return s;
}

}  // namespace detail

/// d_same / d_diff over the full source x target grid. Inactive (value 0) when either
/// mask is empty, either mask carries zero weight, or d_diff is zero.
inline ClassWiseLoss class_wise_loss(const PairAssignment& a) {
  for (Eigen::Index i = 0; i < a.source_weights.size(); ++i)
    if (!(a.source_weights(i) >= 0.0)) throw InvalidInput("class-wise loss weights must be non-negative");
  for (Eigen::Index j = 0; j < a.target_weights.size(); ++j)
    if (!(a.target_weights(j) >= 0.0)) throw InvalidInput("class-wise loss weights must be non-negative");

  ClassWiseLoss out;
  const auto s = detail::mask_sums(a);
  if (!s.same_any || !s.diff_any || s.same_den == 0.0 || s.diff_den == 0.0) return out;
  out.d_same = s.same_num / s.same_den;
  out.d_diff = s.diff_num / s.diff_den;
  if (out.d_diff == 0.0) return out;
  out.active = true;
  out.value = out.d_same / out.d_diff;
  return out;
}

/// Value plus gradients with respect to both feature batches and both weight vectors.
inline ClassWiseLoss class_wise_loss(const Matrix& src_feats, const Matrix& tgt_feats, const PairAssignment& a) {
  ClassWiseLoss out = class_wise_loss(a);
  out.d_source_feats = Matrix::Zero(src_feats.rows(), src_feats.cols());
  out.d_target_feats = Matrix::Zero(tgt_feats.rows(), tgt_feats.cols());
  out.d_source_weights = Vector::Zero(src_feats.rows());
  out.d_target_weights = Vector::Zero(tgt_feats.rows());
  if (!out.active) return out;

  const auto s = detail::mask_sums(a);
  const double inv_diff = 1.0 / out.d_diff;
  const double ratio_over_diff = out.d_same / (out.d_diff * out.d_diff);
  for (Eigen::Index i = 0; i < a.dist.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.dist.cols(); ++j) {
      const double w = std::sqrt(a.source_weights(i) * a.target_weights(j));
      if (w == 0.0) continue;
      const double d = a.dist(i, j);
      double g_dist, g_w;
      if (a.same(i, j)) {
        g_dist = inv_diff * w / s.same_den;
        g_w = inv_diff * (d - out.d_same) / s.same_den;
      } else {
        g_dist = -ratio_over_diff * w / s.diff_den;
        g_w = -ratio_over_diff * (d - out.d_diff) / s.diff_den;
      }
      if (d > 0.0) {
        const Eigen::RowVectorXd unit = (src_feats.row(i) - tgt_feats.row(j)) / d;
        out.d_source_feats.row(i) += g_dist * unit;
        out.d_target_feats.row(j) -= g_dist * unit;
      }
      // w = sqrt(ws * wt): dw/dws = wt / (2w)
      out.d_source_weights(i) += g_w * a.target_weights(j) / (2.0 * w);
      out.d_target_weights(j) += g_w * a.source_weights(i) / (2.0 * w);
    }
  }
  return out;
}

}  // namespace centroida

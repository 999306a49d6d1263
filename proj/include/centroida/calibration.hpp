#pragma once

// Temperature-scaled probabilities and the per-sample confidence weights derived
// from them, with their vector-Jacobian products back to the logits.

#include "centroida/core.hpp"

#include <algorithm>

namespace centroida {

inline constexpr double kDefaultTemperature = 2.0;
inline constexpr double kEntropyFloor = 1e-12;

/// Row-wise softmax(logits / T) with max subtraction.
inline Matrix temperature_softmax(const Matrix& logits, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw InvalidSpec("temperature must be positive");
  if (!logits.allFinite()) throw NumericError("non-finite logits");
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    out.row(i) = ((logits.row(i).array() - top) / temperature).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

inline Vector max_prob(const Matrix& probs) { return probs.rowwise().maxCoeff(); }

/// H_i = -sum_j p_ij ln p_ij, probabilities clamped to 1e-12 inside the log.
inline Vector row_entropy(const Matrix& probs) {
  Vector h(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
      const double p = probs(i, j);
      acc -= p * std::log(std::max(p, kEntropyFloor));
    }
    h(i) = acc;
  }
  return h;
}

/// W_i = B (1 + e^{-H_i}) / sum_k (1 + e^{-H_k}) * P_i^max.
/// Confident, low-entropy rows get more weight; the normalizer averages to one.
inline Vector batch_weights(const Vector& max_probs, const Vector& entropy) {
  const Vector e = (1.0 + (-entropy.array()).exp()).matrix();
  const double b = static_cast<double>(e.size());
  return (b / e.sum()) * e.cwiseProduct(max_probs);
}

inline Vector batch_weights(const Matrix& probs) { return batch_weights(max_prob(probs), row_entropy(probs)); }

struct ProbBatch {
  Matrix probs;
  Vector max_prob;
  Vector entropy;
  Vector weight;
  double temperature = kDefaultTemperature;

  static ProbBatch from_logits(const Matrix& logits, double temperature = kDefaultTemperature) {
    ProbBatch pb;
    pb.temperature = temperature;
    pb.probs = temperature_softmax(logits, temperature);
    pb.max_prob = centroida::max_prob(pb.probs);
    pb.entropy = row_entropy(pb.probs);
    pb.weight = batch_weights(pb.max_prob, pb.entropy);
    return pb;
  }

  Eigen::Index size() const { return probs.rows(); }
};

/// Pulls upstream gradients on max_prob and weight back to the logits.
/// Either upstream vector may be empty (treated as zero).
inline Matrix prob_batch_backward(const ProbBatch& pb, const Vector& d_max_prob, const Vector& d_weight) {
  const Eigen::Index b = pb.size(), k = pb.probs.cols();
  Vector g_max = d_max_prob.size() ? d_max_prob : Vector::Zero(b);
  Vector g_ent = Vector::Zero(b);

  if (d_weight.size()) {
    const Vector e = (1.0 + (-pb.entropy.array()).exp()).matrix();
    const double s = e.sum();
    const double bn = static_cast<double>(b);
    // W_i = bn * e_i * m_i / s
    g_max.array() += d_weight.array() * bn * e.array() / s;
    const double cross = (d_weight.array() * pb.max_prob.array() * e.array()).sum() * bn / (s * s);
    for (Eigen::Index j = 0; j < b; ++j) {
      const double d_e = d_weight(j) * bn * pb.max_prob(j) / s - cross;
      g_ent(j) = -std::exp(-pb.entropy(j)) * d_e;
    }
  }

  Matrix d_logits(b, k);
  Vector g_p(k);
  for (Eigen::Index i = 0; i < b; ++i) {
    const int top = argmax_row(pb.probs, i);
    for (Eigen::Index j = 0; j < k; ++j) {
      const double p = pb.probs(i, j);
      g_p(j) = p > kEntropyFloor ? -g_ent(i) * (std::log(p) + 1.0) : -g_ent(i) * std::log(kEntropyFloor);
    }
    g_p(top) += g_max(i);
    const double dot = pb.probs.row(i).dot(g_p);
    for (Eigen::Index j = 0; j < k; ++j) d_logits(i, j) = pb.probs(i, j) * (g_p(j) - dot) / pb.temperature;
  }
  return d_logits;
}

}  // namespace centroida

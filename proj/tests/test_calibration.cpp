#include "centroida/calibration.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

namespace centroida {
namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

TEST(TemperatureSoftmax, HandValues) {
  const Matrix a = temperature_softmax(rows({{0, 0}}), 2.0);
  EXPECT_NEAR(a(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(a(0, 1), 0.5, 1e-15);

  const Matrix b = temperature_softmax(rows({{2 * std::log(2.0), 0}}), 2.0);
  EXPECT_NEAR(b(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(b(0, 1), 1.0 / 3.0, 1e-15);

  const Matrix c = temperature_softmax(rows({{1000, 0}}), 2.0);
  EXPECT_TRUE(c.allFinite());
  EXPECT_NEAR(c(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(c(0, 1), 0.0, 1e-15);
}

TEST(TemperatureSoftmax, Errors) {
  EXPECT_THROW(temperature_softmax(rows({{0, 0}}), 0.0), InvalidSpec);
  EXPECT_THROW(temperature_softmax(rows({{0, 0}}), -1.0), InvalidSpec);
  EXPECT_THROW(temperature_softmax(rows({{std::nan(""), 0}}), 2.0), NumericError);
  EXPECT_THROW(temperature_softmax(rows({{std::numeric_limits<double>::infinity(), 0}}), 2.0), NumericError);
}

TEST(TemperatureSoftmaxProperty, UnitTemperatureMatchesPlainSoftmax) {
  std::mt19937_64 rng(1);
  const Matrix z = oracle::random_matrix(20, 6, rng, 4.0);
  const Matrix p = temperature_softmax(z, 1.0);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double denom = 0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) denom += std::exp(z(i, j));
    for (Eigen::Index j = 0; j < z.cols(); ++j) EXPECT_NEAR(p(i, j), std::exp(z(i, j)) / denom, 1e-10);
  }
}

TEST(TemperatureSoftmaxProperty, LargeTemperatureTendsToUniform) {
  std::mt19937_64 rng(2);
  const Matrix z = oracle::random_matrix(5, 4, rng, 10.0);
  double prev = 1.0;
  for (double t : {1.0, 10.0, 1e3, 1e6}) {
    const double dev = (temperature_softmax(z, t).array() - 0.25).abs().maxCoeff();
    EXPECT_LT(dev, prev);
    prev = dev;
  }
  EXPECT_LT(prev, 1e-5);
}

TEST(ProbBatchProperty, InvariantsOnRandomLogits) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + trial % 7;
    const Matrix z = oracle::random_matrix(1 + trial % 13, k, rng, 5.0);
    const auto pb = ProbBatch::from_logits(z);
    const auto b = static_cast<double>(z.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      EXPECT_NEAR(pb.probs.row(i).sum(), 1.0, 1e-6);
      EXPECT_GE(pb.probs.row(i).minCoeff(), 0.0);
      EXPECT_LE(pb.probs.row(i).maxCoeff(), 1.0);
      EXPECT_EQ(pb.max_prob(i), pb.probs.row(i).maxCoeff());
      EXPECT_GE(pb.entropy(i), 0.0);
      EXPECT_LE(pb.entropy(i), std::log(static_cast<double>(k)) + 1e-12);
    }
    const Vector e = (1.0 + (-pb.entropy.array()).exp()).matrix();
    EXPECT_NEAR((b * e / e.sum()).sum(), b, 1e-6);
  }
}

TEST(MaxProb, Examples) {
  EXPECT_DOUBLE_EQ(max_prob(rows({{0.8, 0.2}}))(0), 0.8);
  EXPECT_DOUBLE_EQ(max_prob(rows({{0.25, 0.25, 0.25, 0.25}}))(0), 0.25);
  EXPECT_DOUBLE_EQ(max_prob(rows({{0, 1, 0}}))(0), 1.0);
}

TEST(RowEntropy, Examples) {
  EXPECT_NEAR(row_entropy(rows({{0, 1, 0}}))(0), 0.0, 1e-10);
  EXPECT_NEAR(row_entropy(rows({{0.25, 0.25, 0.25, 0.25}}))(0), std::log(4.0), 1e-12);
  EXPECT_NEAR(std::log(4.0), 1.386294, 1e-6);
  const Vector h = row_entropy(rows({{0.5, 0.4, 0.1, 0.0}, {0.5, 0.1, 0.2, 0.2}}));
  EXPECT_LT(h(0), h(1));
  const double expected0 = -(0.5 * std::log(0.5) + 0.4 * std::log(0.4) + 0.1 * std::log(0.1));
  EXPECT_NEAR(h(0), expected0, 1e-10);
}

TEST(BatchWeights, TwoRowHandValue) {
  const Vector w = batch_weights(rows({{1, 0}, {0.5, 0.5}}));
  EXPECT_NEAR(w(0), 8.0 / 7.0, 1e-6);
  EXPECT_NEAR(w(1), 3.0 / 7.0, 1e-6);
  EXPECT_NEAR(w(0), 1.142857, 1e-6);
  EXPECT_NEAR(w(1), 0.428571, 1e-6);
}

TEST(BatchWeights, SingleRowEqualsMaxProb) {
  for (const auto& r : {rows({{0.7, 0.2, 0.1}}), rows({{0.5, 0.5}}), rows({{1.0, 0.0}})})
    EXPECT_NEAR(batch_weights(r)(0), r.maxCoeff(), 1e-15);
}

TEST(BatchWeights, LowerEntropyWinsAtEqualMaxProb) {
  const Vector w = batch_weights(rows({{0.5, 0.5, 0.0}, {0.5, 0.25, 0.25}}));
  EXPECT_GT(w(0), w(1));
}

TEST(BatchWeightsProperty, ScaleEquivariantInMaxProb) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.1, 1.0), h(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    Vector m(9), e(9);
    for (int i = 0; i < 9; ++i) m(i) = u(rng), e(i) = h(rng);
    const Vector w1 = batch_weights(m, e);
    const Vector w2 = batch_weights(Vector(2.0 * m), e);
    EXPECT_TRUE(w2.isApprox(2.0 * w1, 1e-14));
  }
}

TEST(BatchWeightsProperty, RowPermutationPermutesWeights) {
  std::mt19937_64 rng(5);
  const Matrix p = temperature_softmax(oracle::random_matrix(12, 4, rng, 3.0), 2.0);
  std::vector<int> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix q(12, 4);
  for (int i = 0; i < 12; ++i) q.row(i) = p.row(perm[static_cast<std::size_t>(i)]);
  const Vector wp = batch_weights(p), wq = batch_weights(q);
  for (int i = 0; i < 12; ++i) EXPECT_NEAR(wq(i), wp(perm[static_cast<std::size_t>(i)]), 1e-14);
}

TEST(ProbBatchBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  Matrix z = oracle::random_matrix(6, 4, rng, 2.0);
  const Vector a = oracle::random_matrix(6, 1, rng), c = oracle::random_matrix(6, 1, rng);
  // scalar = a . P^max + c . W
  auto scalar = [&] {
    const auto pb = ProbBatch::from_logits(z, 2.0);
    return a.dot(pb.max_prob) + c.dot(pb.weight);
  };
  const auto pb = ProbBatch::from_logits(z, 2.0);
  const Matrix g = prob_batch_backward(pb, a, c);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double num = oracle::central_difference(scalar, z.data()[i], 1e-5);
    EXPECT_LT(oracle::relative_error(g.data()[i], num), 1e-6) << "entry " << i;
  }
}

TEST(ProbBatchBackward, EmptyUpstreamGivesZero) {
  const auto pb = ProbBatch::from_logits(rows({{1, 2, 3}, {0, 0, 1}}));
  EXPECT_TRUE(prob_batch_backward(pb, Vector(), Vector()).isZero(0.0));
  EXPECT_EQ(pb.size(), 2);
  EXPECT_EQ(pb.temperature, 2.0);
}

}  // namespace
}  // namespace centroida

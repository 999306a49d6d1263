#include "centroida/centroids.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace centroida {
namespace {

Matrix row2(double a, double b) {
  Matrix m(1, 2);
  m << a, b;
  return m;
}

Vector scalar(double w) { return Vector::Constant(1, w); }

TEST(CentroidStore, StartsAndResetsToZero) {
  CentroidStore s(3, 2, Domain::target);
  EXPECT_TRUE(s.is_zero());
  EXPECT_FALSE(s.any_eligible());
  s.update(row2(1, 2), scalar(0.5), Labels{1});
  EXPECT_FALSE(s.is_zero());
  s.reset();
  EXPECT_TRUE(s.is_zero());
  s.reset();
  EXPECT_TRUE(s.is_zero());
  EXPECT_EQ(s.domain(), Domain::target);
}

TEST(CentroidStore, ZeroStoresGiveInactiveLoss) {
  CentroidStore a(3, 2, Domain::source), b(3, 2, Domain::target);
  const auto l = centroid_alignment_loss(a, b);
  EXPECT_FALSE(l.active);
  EXPECT_EQ(l.eligible_classes, 0);
  EXPECT_EQ(l.value, 0.0);
}

TEST(CentroidStore, SinglePointThenSecondPoint) {
  CentroidStore s(2, 2, Domain::source);
  s.update(row2(1, 0), scalar(0.8), Labels{0});
  EXPECT_EQ(s.centroids().row(0), row2(1, 0));
  EXPECT_DOUBLE_EQ(s.acc_weight()(0), 0.8);
  EXPECT_TRUE(s.eligible(0));
  EXPECT_FALSE(s.eligible(1));

  s.update(row2(0, 1), scalar(0.2), Labels{0});
  EXPECT_NEAR(s.centroids()(0, 0), 0.8, 1e-15);
  EXPECT_NEAR(s.centroids()(0, 1), 0.2, 1e-15);
  EXPECT_DOUBLE_EQ(s.acc_weight()(0), 1.0);
  EXPECT_TRUE(s.centroids().row(1).isZero(0.0));
}

TEST(CentroidStore, ZeroWeightClassUntouched) {
  CentroidStore s(2, 2, Domain::source);
  s.update(row2(3, 3), scalar(0.0), Labels{1});
  EXPECT_TRUE(s.is_zero());
  s.update(row2(1, 1), scalar(1.0), Labels{1});
  s.update(row2(9, 9), scalar(0.0), Labels{1});
  EXPECT_EQ(s.centroids().row(1), row2(1, 1));
  EXPECT_EQ(s.acc_weight()(1), 1.0);
}

TEST(CentroidStore, UpdateErrors) {
  CentroidStore s(2, 2, Domain::source);
  EXPECT_THROW(s.update(row2(1, 1), scalar(-0.1), Labels{0}), InvalidInput);
  EXPECT_THROW(s.update(row2(1, 1), scalar(0.1), Labels{2}), InvalidInput);
  EXPECT_THROW(s.update(row2(1, 1), scalar(0.1), Labels{-1}), InvalidInput);
  EXPECT_THROW(s.update(Matrix::Zero(1, 3), scalar(0.1), Labels{0}), InvalidInput);
  EXPECT_THROW(s.update(row2(1, 1), Vector::Zero(2), Labels{0}), InvalidInput);
  EXPECT_TRUE(s.is_zero());
}

TEST(CentroidStore, UpdatedLeavesOriginal) {
  CentroidStore s(2, 2, Domain::source);
  const auto next = s.updated(row2(1, 1), scalar(1.0), Labels{0});
  EXPECT_TRUE(s.is_zero());
  EXPECT_TRUE(next.eligible(0));
}

TEST(CentroidStoreProperty, StreamingMatchesOneShotMean) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> w(0.0, 1.0);
  std::uniform_int_distribution<int> lab(0, 3);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 200;
    const Matrix x = oracle::random_matrix(n, 5, rng, 4.0);
    std::vector<double> wts(n);
    Labels y(n);
    for (int i = 0; i < n; ++i) wts[static_cast<std::size_t>(i)] = w(rng), y[static_cast<std::size_t>(i)] = lab(rng);

    CentroidStore s(4, 5, Domain::source);
    std::uniform_int_distribution<int> cut(1, 40);
    for (int start = 0; start < n;) {
      const int len = std::min(cut(rng), n - start);
      Vector bw(len);
      for (int i = 0; i < len; ++i) bw(i) = wts[static_cast<std::size_t>(start + i)];
      s.update(x.middleRows(start, len), bw, std::span<const int>(y).subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(len)));
      start += len;
    }
    for (int k = 0; k < 4; ++k) {
      const auto mean = oracle::weighted_class_mean(x, wts, y, k);
      for (int d = 0; d < 5; ++d)
        EXPECT_LT(oracle::relative_error(s.centroids()(k, d), mean[static_cast<std::size_t>(d)], 1e-12), 1e-5);
    }
  }
}

TEST(CentroidStoreProperty, CentroidInsideBoundingBoxAndWeightMonotone) {
  std::mt19937_64 rng(8);
  CentroidStore s(2, 3, Domain::source);
  Matrix lo = Matrix::Constant(2, 3, 1e300), hi = Matrix::Constant(2, 3, -1e300);
  Vector prev = Vector::Zero(2);
  for (int b = 0; b < 30; ++b) {
    const Matrix x = oracle::random_matrix(4, 3, rng);
    const Labels y{b % 2, 1, 0, b % 2};
    s.update(x, Vector::Constant(4, 0.3), y);
    for (int i = 0; i < 4; ++i) {
      lo.row(y[static_cast<std::size_t>(i)]) = lo.row(y[static_cast<std::size_t>(i)]).cwiseMin(x.row(i));
      hi.row(y[static_cast<std::size_t>(i)]) = hi.row(y[static_cast<std::size_t>(i)]).cwiseMax(x.row(i));
    }
    EXPECT_TRUE((s.acc_weight().array() >= prev.array()).all());
    prev = s.acc_weight();
    EXPECT_TRUE((s.centroids().array() >= lo.array() - 1e-12).all());
    EXPECT_TRUE((s.centroids().array() <= hi.array() + 1e-12).all());
  }
}

TEST(CentroidUpdateBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  CentroidStore prior(3, 2, Domain::source);
  prior.update(oracle::random_matrix(3, 2, rng), Vector::Constant(3, 0.7), Labels{0, 1, 2});
  Matrix f = oracle::random_matrix(5, 2, rng);
  Vector w(5);
  w << 0.3, 0.9, 0.5, 0.1, 0.6;
  const Labels y{0, 2, 2, 1, 0};
  const Matrix dc = oracle::random_matrix(3, 2, rng);
  auto value = [&] { return (prior.updated(f, w, y).centroids().array() * dc.array()).sum(); };
  Matrix df;
  Vector dw;
  centroid_update_backward(prior.updated(f, w, y), f, w, y, dc, df, dw);
  for (Eigen::Index i = 0; i < f.size(); ++i)
    EXPECT_LT(oracle::relative_error(df.data()[i], oracle::central_difference(value, f.data()[i], 1e-6)), 1e-6);
  for (Eigen::Index i = 0; i < w.size(); ++i)
    EXPECT_LT(oracle::relative_error(dw(i), oracle::central_difference(value, w(i), 1e-6)), 1e-6);
}

// ---------------------------------------------------------------------------
// Nearest-centroid labels

CentroidStore store_with(const Matrix& centroids, const std::vector<bool>& eligible) {
  CentroidStore s(static_cast<int>(centroids.rows()), static_cast<int>(centroids.cols()), Domain::target);
  for (Eigen::Index k = 0; k < centroids.rows(); ++k)
    if (eligible[static_cast<std::size_t>(k)]) s.update(centroids.row(k), Vector::Constant(1, 1.0), Labels{static_cast<int>(k)});
  return s;
}

TEST(NearestCentroid, ExactMatchAndTieAndEnumeration) {
  Matrix c(3, 2);
  c << 0, 0, 4, 0, 0, 4;
  const auto s = store_with(c, {true, true, true});
  EXPECT_EQ(nearest_centroid_labels(s, c.row(2)), Labels{2});

  // (2, 0) is equidistant from C_0 and C_1.
  EXPECT_EQ(nearest_centroid_labels(s, row2(2, 0)), Labels{0});
  // (2, 2) is equidistant from all three.
  EXPECT_EQ(nearest_centroid_labels(s, row2(2, 2)), Labels{0});

  std::mt19937_64 rng(10);
  const Matrix q = oracle::random_matrix(50, 2, rng, 5.0);
  const auto got = nearest_centroid_labels(s, q);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    std::vector<double> d;
    for (int k = 0; k < 3; ++k) d.push_back(oracle::euclid(&q(i, 0), &c(k, 0), 2));
    EXPECT_EQ(got[static_cast<std::size_t>(i)], std::min_element(d.begin(), d.end()) - d.begin());
  }
  EXPECT_EQ(nearest_centroid_labels(s, row2(3.5, 0.2)), Labels{1});
}

TEST(NearestCentroid, SkipsIneligibleAndFailsWhenNoneReady) {
  Matrix c(3, 2);
  c << 0, 0, 4, 0, 0, 4;
  const auto s = store_with(c, {false, true, true});
  EXPECT_EQ(nearest_centroid_labels(s, row2(0, 0)), Labels{1});  // tie 1 vs 2 -> 1
  EXPECT_THROW(nearest_centroid_labels(CentroidStore(3, 2, Domain::target), row2(0, 0)), NotReady);
  EXPECT_THROW(nearest_centroid_labels(s, Matrix::Zero(1, 3)), InvalidInput);
}

TEST(NearestCentroidProperty, RowPermutationInvariant) {
  std::mt19937_64 rng(11);
  const auto s = store_with(oracle::random_matrix(4, 3, rng), {true, true, false, true});
  const Matrix q = oracle::random_matrix(30, 3, rng);
  std::vector<int> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix qp(30, 3);
  for (int i = 0; i < 30; ++i) qp.row(i) = q.row(perm[static_cast<std::size_t>(i)]);
  const auto a = nearest_centroid_labels(s, q), b = nearest_centroid_labels(s, qp);
  for (int i = 0; i < 30; ++i) EXPECT_EQ(b[static_cast<std::size_t>(i)], a[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
}

// ---------------------------------------------------------------------------
// Centroid alignment loss

std::pair<CentroidStore, CentroidStore> stores(const Matrix& cs, const Matrix& ct) {
  const std::vector<bool> all(static_cast<std::size_t>(cs.rows()), true);
  auto s = store_with(cs, all);
  auto t = store_with(ct, all);
  return {s, t};
}

TEST(CentroidLoss, WorkedTwoClassExample) {
  Matrix cs(2, 2), ct(2, 2);
  cs << 0, 0, 2, 0;
  ct << 0, 1, 2, 1;
  const auto [s, t] = stores(cs, ct);
  const auto l = centroid_alignment_loss(s, t);
  ASSERT_TRUE(l.active);
  const double expected = 4.0 / (2.0 + 2.0 * std::sqrt(5.0));
  EXPECT_NEAR(l.value, expected, 1e-12);
  EXPECT_NEAR(l.value, 0.618034, 1e-6);
  EXPECT_NEAR(l.value, oracle::centroid_loss(cs, ct), 1e-12);
}

TEST(CentroidLoss, PerfectAlignmentIsZero) {
  Matrix c(3, 2);
  c << 0, 0, 1, 5, -2, 3;
  const auto [s, t] = stores(c, c);
  const auto l = centroid_alignment_loss(s, t);
  EXPECT_TRUE(l.active);
  EXPECT_EQ(l.value, 0.0);
}

TEST(CentroidLoss, TranslatedTargetsMatchOracle) {
  std::mt19937_64 rng(12);
  const Matrix cs = oracle::random_matrix(5, 4, rng);
  for (double shift : {0.0, 0.5, 3.0, -10.0}) {
    const Matrix ct = (cs.array() + shift).matrix();
    const auto [s, t] = stores(cs, ct);
    EXPECT_NEAR(centroid_alignment_loss(s, t).value, oracle::centroid_loss(cs, ct), 1e-12) << "shift " << shift;
  }
}

TEST(CentroidLoss, OnlySharedEligibleClassesCount) {
  std::mt19937_64 rng(13);
  const Matrix cs = oracle::random_matrix(4, 3, rng), ct = oracle::random_matrix(4, 3, rng);
  const auto s = store_with(cs, {true, true, true, false});
  const auto t = store_with(ct, {false, true, true, true});
  const auto l = centroid_alignment_loss(s, t);
  EXPECT_EQ(l.eligible_classes, 2);
  EXPECT_NEAR(l.value, oracle::centroid_loss(cs.middleRows(1, 2), ct.middleRows(1, 2)), 1e-12);
  EXPECT_TRUE(l.d_source.row(0).isZero(0.0));
  EXPECT_TRUE(l.d_target.row(3).isZero(0.0));

  const auto one = store_with(ct, {false, false, true, false});
  EXPECT_FALSE(centroid_alignment_loss(s, one).active);
}

TEST(CentroidLoss, CoincidentCentroidsInactive) {
  Matrix c = Matrix::Ones(3, 2);
  const auto [s, t] = stores(c, c);
  EXPECT_FALSE(centroid_alignment_loss(s, t).active);
}

TEST(CentroidLossProperty, NonNegativeAndGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix cs = oracle::random_matrix(4, 3, rng), ct = oracle::random_matrix(4, 3, rng);
    auto [s, t] = stores(cs, ct);
    const auto l = centroid_alignment_loss(s, t);
    EXPECT_GE(l.value, 0.0);
    Matrix a = cs, b = ct;
    auto value = [&] { return oracle::centroid_loss(a, b); };
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      EXPECT_LT(oracle::relative_error(l.d_source.data()[i], oracle::central_difference(value, a.data()[i], 1e-5)), 1e-5);
      EXPECT_LT(oracle::relative_error(l.d_target.data()[i], oracle::central_difference(value, b.data()[i], 1e-5)), 1e-5);
    }
  }
}

TEST(CentroidLoss, ShapeMismatchThrows) {
  EXPECT_THROW(centroid_alignment_loss(CentroidStore(2, 2, Domain::source), CentroidStore(3, 2, Domain::target)),
               InvalidInput);
}

}  // namespace
}  // namespace centroida

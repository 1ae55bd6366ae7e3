#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "mswl/rng.hpp"
#include "mswl/svm.hpp"
#include "oracles.hpp"

using namespace mswl;

namespace {

/// Dual feasibility and stationarity checks every trained model must pass.
void expect_valid_model(const SvmModel& model, const Matrix& x, const Vector& y,
                        double tol = kSmoTol) {
  ASSERT_GT(model.n_support(), 0);
  double dual_sum = 0.0;
  for (Eigen::Index s = 0; s < model.n_support(); ++s) {
    const double a = std::abs(model.dual_coefficients[s]);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, model.c * (1.0 + 1e-12));
    dual_sum += model.dual_coefficients[s];
  }
  EXPECT_LE(std::abs(dual_sum), 1e-6);
  // Free support vectors sit on the margin.
  const double band = 1e-6 * model.c;
  for (Eigen::Index s = 0; s < model.n_support(); ++s) {
    const double a = std::abs(model.dual_coefficients[s]);
    if (a > band && a < model.c - band) {
      const double margin = (model.dual_coefficients[s] > 0 ? 1.0 : -1.0) *
                            decision_value(model, model.support_points.row(s).transpose());
      EXPECT_NEAR(margin, 1.0, 1e-3);
    }
  }
  (void)x;
  (void)y;
  (void)tol;
}

struct Blobs {
  Matrix x;
  Vector y;
};

/// Two 2D blobs centred at (+2,0) and (-2,0) with radius < 1, so the
/// x-coordinate alone is an independent linear separator with margin >= 1.
Blobs separable_blobs(int per_class, unsigned seed) {
  Rng rng(seed);
  Blobs b;
  b.x.resize(2 * per_class, 2);
  b.y.resize(2 * per_class);
  for (int i = 0; i < 2 * per_class; ++i) {
    const bool pos = i < per_class;
    double dx = 0.0, dy = 0.0;
    do {
      dx = 0.6 * rng.normal();
      dy = 0.6 * rng.normal();
    } while (dx * dx + dy * dy >= 0.81);
    b.x(i, 0) = (pos ? 2.0 : -2.0) + dx;
    b.x(i, 1) = dy;
    b.y[i] = pos ? 1.0 : -1.0;
  }
  return b;
}

}  // namespace

TEST(RbfKernel, HandCases) {
  Vector a(3), b(3);
  a << 1, 2, 3;
  b << 1, 2, 3;
  EXPECT_DOUBLE_EQ(rbf_kernel(a, b, 3.7), 1.0);
  b << 4, 5, 6;
  EXPECT_DOUBLE_EQ(rbf_kernel(a, b, 0.0), 1.0);
  Vector c(1), d(1);
  c << 0.0;
  d << 1.0; // squared distance exactly 1
  EXPECT_NEAR(rbf_kernel(c, d, std::log(2.0)), 0.5, 1e-15);
  Vector e(2);
  EXPECT_THROW(rbf_kernel(a, e, 1.0), SolverError);
}

TEST(SmoTrain, TwoPointSymmetry) {
  Matrix x(2, 1);
  x << 1.0, -1.0;
  Vector y(2);
  y << 1.0, -1.0;
  const SvmModel model = smo_train(x, y, 10.0, 0.7);
  Vector origin(1);
  origin << 0.0;
  EXPECT_NEAR(decision_value(model, origin), 0.0, 1e-6);
  expect_valid_model(model, x, y);
}

TEST(SmoTrain, SeparableBlobsPerfectTrainingAccuracy) {
  const Blobs b = separable_blobs(20, 5);
  // Independent separability check: the classes do not overlap on x0.
  double min_pos = 1e9, max_neg = -1e9;
  for (int i = 0; i < b.x.rows(); ++i) {
    if (b.y[i] > 0) min_pos = std::min(min_pos, b.x(i, 0));
    else max_neg = std::max(max_neg, b.x(i, 0));
  }
  ASSERT_GE(min_pos - max_neg, 1.0);

  const SvmModel model = smo_train(b.x, b.y, 10.0, 0.5);
  const Vector pred = predict(model, b.x);
  EXPECT_EQ(pred, b.y);
  expect_valid_model(model, b.x, b.y);
}

TEST(SmoTrain, XorPattern) {
  Matrix x(4, 2);
  x << 0, 0, 1, 1, 0, 1, 1, 0;
  Vector y(4);
  y << -1, -1, 1, 1;
  const SvmModel model = smo_train(x, y, 10.0, 4.0);
  const Vector pred = predict(model, x);
  EXPECT_EQ(pred, y);
  expect_valid_model(model, x, y);
}

TEST(SmoTrain, DeterministicBitForBit) {
  const Blobs b = separable_blobs(15, 6);
  const SvmModel m1 = smo_train(b.x, b.y, 4.0, 1.3);
  const SvmModel m2 = smo_train(b.x, b.y, 4.0, 1.3);
  ASSERT_EQ(m1.n_support(), m2.n_support());
  EXPECT_EQ(0, std::memcmp(m1.dual_coefficients.data(), m2.dual_coefficients.data(),
                           sizeof(double) * m1.dual_coefficients.size()));
  EXPECT_EQ(m1.bias, m2.bias);
}

TEST(SmoTrain, LabelFlipNegatesDecision) {
  const Blobs b = separable_blobs(12, 7);
  const SvmModel m = smo_train(b.x, b.y, 2.0, 0.8);
  const SvmModel neg = smo_train(b.x, Vector(-b.y), 2.0, 0.8);
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    Vector point(2);
    point << 3.0 * rng.normal(), 3.0 * rng.normal();
    EXPECT_NEAR(decision_value(m, point), -decision_value(neg, point), 1e-8);
  }
}

TEST(SmoTrain, InputValidation) {
  Matrix x(4, 1);
  x << 1, 2, 3, 4;
  Vector y_single = Vector::Constant(4, 1.0);
  EXPECT_THROW(smo_train(x, y_single, 1.0, 1.0), SolverError);
  Vector y(4);
  y << 1, -1, 1, -1;
  EXPECT_THROW(smo_train(x, y, -1.0, 1.0), SolverError);
  Matrix bad = x;
  bad(2, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(smo_train(bad, y, 1.0, 1.0), SolverError);
}

TEST(Predict, TieMapsToPositiveAndDimensionChecked) {
  Matrix x(2, 1);
  x << 1.0, -1.0;
  Vector y(2);
  y << 1.0, -1.0;
  const SvmModel model = smo_train(x, y, 10.0, 0.7);
  SvmModel zero_bias = model; // force an exact zero decision value
  zero_bias.dual_coefficients.setZero();
  zero_bias.bias = 0.0;
  Matrix q(1, 1);
  q << 0.3;
  EXPECT_EQ(predict(zero_bias, q)[0], 1.0);
  Matrix wrong(1, 2);
  wrong << 0.1, 0.2;
  EXPECT_THROW(predict(model, wrong), SolverError);
}

TEST(Predict, PointwiseOnDuplicateRows) {
  const Blobs b = separable_blobs(10, 9);
  const SvmModel model = smo_train(b.x, b.y, 5.0, 1.0);
  Matrix dup(4, 2);
  dup.row(0) = b.x.row(0);
  dup.row(1) = b.x.row(0);
  dup.row(2) = b.x.row(3);
  dup.row(3) = b.x.row(3);
  const Vector pred = predict(model, dup);
  EXPECT_EQ(pred[0], pred[1]);
  EXPECT_EQ(pred[2], pred[3]);
}

TEST(GridSearch, SinglePointGridReturnsItsMetrics) {
  const Blobs b = separable_blobs(12, 10);
  HyperGrid grid;
  grid.c_values = {2.0};
  grid.gamma_values = {0.5};
  const FoldAssignment folds = stratified_folds(b.y, 4, 3);
  const GridSearchResult res = grid_search_cv(b.x, b.y, grid, folds);
  EXPECT_EQ(res.c, 2.0);
  EXPECT_EQ(res.gamma, 0.5);
  EXPECT_GT(res.metrics.accuracy, 0.9);
}

TEST(GridSearch, BestIsMaxOverRecomputedPoints) {
  Rng rng(11);
  Matrix x(40, 3);
  Vector y(40);
  for (int i = 0; i < 40; ++i) {
    for (int j = 0; j < 3; ++j) x(i, j) = rng.normal();
    y[i] = x(i, 0) + 0.5 * rng.normal() > 0 ? 1.0 : -1.0;
  }
  y[0] = 1.0;
  y[1] = -1.0;
  HyperGrid grid;
  grid.c_values = {0.5, 2.0, 8.0};
  grid.gamma_values = {0.1, 1.0};
  const FoldAssignment folds = stratified_folds(y, 5, 4);
  const GridSearchResult best = grid_search_cv(x, y, grid, folds);
  for (double c : grid.c_values) {
    for (double gamma : grid.gamma_values) {
      HyperGrid single;
      single.c_values = {c};
      single.gamma_values = {gamma};
      const GridSearchResult point = grid_search_cv(x, y, single, folds);
      EXPECT_GE(best.metrics.accuracy, point.metrics.accuracy)
          << "c=" << c << " gamma=" << gamma;
    }
  }
}

TEST(GridSearch, TwoRingDataBeatsNinetyPercent) {
  // Concentric rings: inner ring positive, outer ring negative.
  Rng rng(12);
  Matrix x(200, 2);
  Vector y(200);
  for (int i = 0; i < 200; ++i) {
    const bool inner = i % 2 == 0;
    const double radius = (inner ? 1.0 : 3.0) + 0.2 * rng.normal();
    const double angle = 2.0 * 3.14159265358979323846 * rng.uniform01();
    x(i, 0) = radius * std::cos(angle);
    x(i, 1) = radius * std::sin(angle);
    y[i] = inner ? 1.0 : -1.0;
  }
  const FoldAssignment folds = stratified_folds(y, 5, 5);
  const GridSearchResult res = grid_search_cv(x, y, default_grid(), folds);
  EXPECT_GT(res.metrics.accuracy, 0.9);
}

TEST(GridSearch, PooledCountsEqualConcatenatedPredictions) {
  const Blobs b = separable_blobs(15, 13);
  HyperGrid grid;
  grid.c_values = {1.0};
  grid.gamma_values = {0.7};
  const FoldAssignment folds = stratified_folds(b.y, 3, 6);
  const GridSearchResult res = grid_search_cv(b.x, b.y, grid, folds);

  // Recompute: train per fold with smo_train, concatenate held-out
  // predictions, compare the resulting metrics.
  Vector all_pred(b.y.size());
  for (int f = 0; f < folds.k; ++f) {
    std::vector<int> train_ix, test_ix;
    for (int i = 0; i < b.y.size(); ++i) {
      if (folds.fold_of_subject[i] == f) test_ix.push_back(i);
      else train_ix.push_back(i);
    }
    Matrix xt(train_ix.size(), 2);
    Vector yt(train_ix.size());
    for (std::size_t a = 0; a < train_ix.size(); ++a) {
      xt.row(a) = b.x.row(train_ix[a]);
      yt[a] = b.y[train_ix[a]];
    }
    const SvmModel model = smo_train(xt, yt, 1.0, 0.7);
    for (int t : test_ix)
      all_pred[t] = decision_value(model, b.x.row(t).transpose()) >= 0 ? 1.0 : -1.0;
  }
  EXPECT_EQ(confusion_metrics(all_pred, b.y), res.metrics);
}

TEST(GridSearch, RejectsBadGrid) {
  const Blobs b = separable_blobs(8, 14);
  const FoldAssignment folds = stratified_folds(b.y, 2, 7);
  HyperGrid empty;
  EXPECT_THROW(grid_search_cv(b.x, b.y, empty, folds), SolverError);
  HyperGrid unsorted;
  unsorted.c_values = {2.0, 1.0};
  unsorted.gamma_values = {0.5};
  EXPECT_THROW(grid_search_cv(b.x, b.y, unsorted, folds), SolverError);
}

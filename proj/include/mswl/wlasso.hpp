#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mswl/common.hpp"

namespace mswl {

/// Per-feature penalty multipliers for the weighted LASSO objective
///   ||y - X b||^2 + lambda * sum_j factors[j] * |b_j|.
/// All ones is the ordinary LASSO.
struct PenaltyVector {
  Vector factors;

  static PenaltyVector ones(Eigen::Index n) {
    PenaltyVector p;
    p.factors = Vector::Ones(n);
    return p;
  }
};

inline void validate_penalty(const PenaltyVector& p, Eigen::Index n_features) {
  if (p.factors.size() != n_features)
    throw SolverError("penalty length " + std::to_string(p.factors.size()) +
                      " != n_features " + std::to_string(n_features));
  for (Eigen::Index j = 0; j < p.factors.size(); ++j) {
    const double f = p.factors[j];
    if (!std::isfinite(f) || f < 0.0 || f > 1.0)
      throw SolverError("penalty factor " + std::to_string(j) + " outside [0,1]");
  }
}

struct LassoSolution {
  Vector coefficients;
  double lambda = 0.0;
  double objective = 0.0;
  int n_sweeps = 0;
  bool converged = false;
};

/// Sorted, strictly increasing feature indices.
struct FeatureSet {
  std::vector<int> indices;

  int size() const { return static_cast<int>(indices.size()); }
  bool empty() const { return indices.empty(); }
  bool contains(int j) const {
    return std::binary_search(indices.begin(), indices.end(), j);
  }
  bool operator==(const FeatureSet&) const = default;
};

inline double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

/// Smallest lambda with an all-zero solution: max_j 2|x_j'y| / factor_j.
/// A zero factor leaves its feature unpenalized at every lambda, so no
/// global sparsity threshold exists and the call is an error.
inline double lambda_max(const Matrix& x, const Vector& y, const PenaltyVector& penalty) {
  validate_penalty(penalty, x.cols());
  if (!all_finite(x) || !all_finite(y)) throw SolverError("lambda_max: non-finite input");
  double best = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double f = penalty.factors[j];
    if (f == 0.0)
      throw SolverError("lambda_max undefined: feature " + std::to_string(j) +
                        " has zero penalty factor; use the path API");
    best = std::max(best, 2.0 * std::abs(x.col(j).dot(y)) / f);
  }
  return best;
}

inline double lasso_objective(const Matrix& x, const Vector& y, const Vector& beta,
                              double lambda, const PenaltyVector& penalty) {
  double pen = 0.0;
  for (Eigen::Index j = 0; j < beta.size(); ++j)
    pen += penalty.factors[j] * std::abs(beta[j]);
  return (y - x * beta).squaredNorm() + lambda * pen;
}

/// Max KKT violation of the weighted LASSO optimality conditions; near
/// zero certifies the solution.
inline double kkt_residual(const Matrix& x, const Vector& y, const Vector& beta,
                           double lambda, const PenaltyVector& penalty) {
  const Vector r = y - x * beta;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double g = 2.0 * x.col(j).dot(r);
    const double lf = lambda * penalty.factors[j];
    double viol;
    if (beta[j] > 0.0) viol = std::abs(g - lf);
    else if (beta[j] < 0.0) viol = std::abs(g + lf);
    else viol = std::max(0.0, std::abs(g) - lf);
    worst = std::max(worst, viol);
  }
  return worst;
}

struct FitOptions {
  double tol = 1e-7;      // max coefficient change per sweep
  double kkt_tol = 1e-6;  // optimality certificate to stop at
  int max_sweeps = 10000;
  // When set, receives the freshly recomputed objective after every sweep.
  std::vector<double>* sweep_objectives = nullptr;
};

/// Cyclic coordinate descent on the weighted LASSO objective. Coordinate
/// order is fixed ascending so repeated runs are bit-identical.
inline LassoSolution fit(const Matrix& x, const Vector& y, double lambda,
                         const PenaltyVector& penalty,
                         const Vector* warm_start = nullptr,
                         const FitOptions& opts = {}) {
  const Eigen::Index p = x.cols();
  validate_penalty(penalty, p);
  if (!all_finite(x) || !all_finite(y)) throw SolverError("fit: non-finite input");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw SolverError("fit: lambda must be >= 0");
  if (!(opts.tol > 0.0)) throw SolverError("fit: tol must be > 0");
  if (warm_start && warm_start->size() != p)
    throw SolverError("fit: warm start length mismatch");

  Vector beta = warm_start ? *warm_start : Vector::Zero(p);
  if (warm_start && !all_finite(beta)) throw SolverError("fit: non-finite warm start");
  Vector col_sq(p);
  for (Eigen::Index j = 0; j < p; ++j) col_sq[j] = x.col(j).squaredNorm();
  Vector r = y - x * beta;

  LassoSolution sol;
  sol.lambda = lambda;
  bool converged = false;
  int sweep = 0;
  for (; sweep < opts.max_sweeps; ++sweep) {
    double max_delta = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (col_sq[j] <= 0.0) continue;
      const double old = beta[j];
      const double c = x.col(j).dot(r) + col_sq[j] * old;
      const double nb = soft_threshold(c, lambda * penalty.factors[j] * 0.5) / col_sq[j];
      if (nb != old) {
        r += x.col(j) * (old - nb);
        beta[j] = nb;
        max_delta = std::max(max_delta, std::abs(nb - old));
      }
    }
    if (opts.sweep_objectives)
      opts.sweep_objectives->push_back(lasso_objective(x, y, beta, lambda, penalty));
    if (max_delta <= opts.tol) {
      // Tiny sweeps are necessary but not sufficient; certify with the
      // KKT residual before stopping, and refresh the drifted residual
      // if more sweeps are needed.
      if (kkt_residual(x, y, beta, lambda, penalty) <= opts.kkt_tol) {
        converged = true;
        ++sweep;
        break;
      }
      r = y - x * beta;
    }
  }
  sol.coefficients = std::move(beta);
  sol.n_sweeps = sweep;
  sol.converged = converged;
  sol.objective = lasso_objective(x, y, sol.coefficients, lambda, penalty);
  return sol;
}

struct SelectionResult {
  FeatureSet features;
  double lambda = 0.0;   // path point the support was taken from
  bool flagged = false;  // empty support (degenerate y or coarse path)
};

inline FeatureSet support_of(const Vector& beta) {
  FeatureSet s;
  for (Eigen::Index j = 0; j < beta.size(); ++j)
    if (beta[j] != 0.0) s.indices.push_back(static_cast<int>(j));
  return s;
}

inline int selection_target_count(double target_fraction, Eigen::Index n_features) {
  return static_cast<int>(std::llround(target_fraction * static_cast<double>(n_features)));
}

/// Warm-started regularization path on a log grid from lambda_max down
/// to lambda_max*1e-3; returns the support whose size lands nearest the
/// target count, ties toward the sparser (larger-lambda) point.
inline SelectionResult select_features(const Matrix& x, const Vector& y,
                                       const PenaltyVector& penalty,
                                       double target_fraction, int path_len = 100,
                                       const FitOptions& opts = {}) {
  if (!(target_fraction > 0.0 && target_fraction < 1.0))
    throw SolverError("select_features: target_fraction must be in (0,1)");
  if (path_len < 20) throw SolverError("select_features: path_len must be >= 20");
  const int target = selection_target_count(target_fraction, x.cols());
  if (target == 0)
    throw SolverError("select_features: target count rounds to 0 for fraction " +
                      format_real(target_fraction));

  const double lmax = lambda_max(x, y, penalty);
  SelectionResult result;
  if (lmax <= 0.0) {
    // y has no correlation with any column (e.g. all-zero labels).
    result.flagged = true;
    return result;
  }

  int best_gap = -1;
  Vector warm = Vector::Zero(x.cols());
  for (int i = 0; i < path_len; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(path_len - 1);
    const double lambda = lmax * std::pow(1e-3, frac);
    const LassoSolution sol = fit(x, y, lambda, penalty, &warm, opts);
    warm = sol.coefficients;
    FeatureSet support = support_of(sol.coefficients);
    const int gap = std::abs(support.size() - target);
    if (best_gap < 0 || gap < best_gap) {
      best_gap = gap;
      result.features = std::move(support);
      result.lambda = lambda;
    }
  }
  result.flagged = result.features.empty();
  return result;
}

}  // namespace mswl

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mswl/common.hpp"
#include "mswl/tabular.hpp"

namespace mswl {

/// RBF-kernel support vector classifier. dual_coefficients holds
/// alpha_i * y_i for every support point.
struct SvmModel {
  Matrix support_points; // n_sv x d
  Vector dual_coefficients;
  double bias = 0.0;
  double gamma = 0.0;
  double c = 0.0;

  Eigen::Index n_support() const { return support_points.rows(); }
};

inline double rbf_kernel(const Eigen::Ref<const Vector>& a,
                         const Eigen::Ref<const Vector>& b, double gamma) {
  if (a.size() != b.size()) throw SolverError("rbf_kernel: dimension mismatch");
  return std::exp(-gamma * (a - b).squaredNorm());
}

struct HyperGrid {
  std::vector<double> c_values;
  std::vector<double> gamma_values;
};

/// The standard coarse RBF grid: C in 2^-5..2^15, gamma in 2^-15..2^3,
/// both stepping by factors of 4.
inline HyperGrid default_grid() {
  HyperGrid g;
  for (int e = -5; e <= 15; e += 2) g.c_values.push_back(std::ldexp(1.0, e));
  for (int e = -15; e <= 3; e += 2) g.gamma_values.push_back(std::ldexp(1.0, e));
  return g;
}

inline void validate_grid(const HyperGrid& g) {
  if (g.c_values.empty() || g.gamma_values.empty())
    throw SolverError("hyperparameter grid must be nonempty");
  auto check = [](const std::vector<double>& v, const char* name) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!(v[i] > 0.0) || !std::isfinite(v[i]))
        throw SolverError(std::string(name) + " values must be positive and finite");
      if (i > 0 && v[i] <= v[i - 1])
        throw SolverError(std::string(name) + " values must be sorted strictly ascending");
    }
  };
  check(g.c_values, "c");
  check(g.gamma_values, "gamma");
}

namespace detail {

struct SmoResult {
  Vector alpha;
  double bias = 0.0;
  long iterations = 0;
  bool converged = false;
};

/// Maximal-violating-pair SMO on the dual with precomputed kernel matrix.
/// Ties in pair selection go to the lowest index, so identical inputs
/// give bit-identical duals.
inline SmoResult smo_solve(const Matrix& kernel, const Vector& y, double c,
                           double tol, long max_passes) {
  const Eigen::Index n = y.size();
  SmoResult res;
  res.alpha = Vector::Zero(n);
  // g is the gradient of the maximize-form dual: g_k = 1 - y_k * f_k
  // with f_k the biasless decision value at point k.
  Vector g = Vector::Ones(n);
  auto upper = [&](Eigen::Index k) { return y[k] > 0 ? c : 0.0; };  // bound on y*alpha
  auto lower = [&](Eigen::Index k) { return y[k] > 0 ? 0.0 : -c; };

  long it = 0;
  for (; it < max_passes; ++it) {
    Eigen::Index i = -1, j = -1;
    double i_max = 0.0, j_min = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double ya = y[k] * res.alpha[k];
      const double yg = y[k] * g[k];
      if (ya < upper(k) && (i < 0 || yg > i_max)) {
        i = k;
        i_max = yg;
      }
      if (ya > lower(k) && (j < 0 || yg < j_min)) {
        j = k;
        j_min = yg;
      }
    }
    if (i < 0 || j < 0 || i_max - j_min <= tol) {
      res.converged = true;
      break;
    }
    const double eta = kernel(i, i) + kernel(j, j) - 2.0 * kernel(i, j);
    double step = std::min(upper(i) - y[i] * res.alpha[i], y[j] * res.alpha[j] - lower(j));
    if (eta > 1e-12) step = std::min(step, (i_max - j_min) / eta);
    res.alpha[i] = std::clamp(res.alpha[i] + y[i] * step, 0.0, c);
    res.alpha[j] = std::clamp(res.alpha[j] - y[j] * step, 0.0, c);
    for (Eigen::Index k = 0; k < n; ++k)
      g[k] += step * y[k] * (kernel(j, k) - kernel(i, k));
  }
  res.iterations = it;

  // Bias from free support vectors (y_k * g_k equals it exactly there);
  // midpoint of the final KKT gap when none is free.
  double sum = 0.0;
  long free_count = 0;
  const double band = 1e-9 * c;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (res.alpha[k] > band && res.alpha[k] < c - band) {
      sum += y[k] * g[k];
      ++free_count;
    }
  }
  if (free_count > 0) {
    res.bias = sum / static_cast<double>(free_count);
  } else {
    double i_max = 0.0, j_min = 0.0;
    bool have_i = false, have_j = false;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double ya = y[k] * res.alpha[k];
      const double yg = y[k] * g[k];
      if (ya < upper(k) && (!have_i || yg > i_max)) {
        i_max = yg;
        have_i = true;
      }
      if (ya > lower(k) && (!have_j || yg < j_min)) {
        j_min = yg;
        have_j = true;
      }
    }
    res.bias = (i_max + j_min) / 2.0;
  }
  return res;
}

inline Matrix squared_distances(const Matrix& x) {
  const Eigen::Index n = x.rows();
  Matrix d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d2(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = (x.row(i) - x.row(j)).squaredNorm();
      d2(i, j) = v;
      d2(j, i) = v;
    }
  }
  return d2;
}

inline void validate_training_input(const Matrix& x, const Vector& y, double c) {
  if (x.rows() != y.size()) throw SolverError("smo_train: row/label count mismatch");
  if (!all_finite(x) || !all_finite(y)) throw SolverError("smo_train: non-finite input");
  if (!(c > 0.0)) throw SolverError("smo_train: c must be > 0");
  bool pos = false, neg = false;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] == 1.0) pos = true;
    else if (y[i] == -1.0) neg = true;
    else throw SolverError("smo_train: labels must be +1 or -1");
  }
  if (!pos || !neg) throw SolverError("smo_train: both classes must be present");
}

}  // namespace detail

inline constexpr double kSmoTol = 5e-4;
inline constexpr long kSmoMaxPasses = 100000;

inline SvmModel smo_train(const Matrix& x, const Vector& y, double c, double gamma,
                          double tol = kSmoTol, long max_passes = kSmoMaxPasses) {
  detail::validate_training_input(x, y, c);
  if (!(gamma >= 0.0)) throw SolverError("smo_train: gamma must be >= 0");
  const Matrix kernel = (-gamma * detail::squared_distances(x).array()).exp();
  const detail::SmoResult res = detail::smo_solve(kernel, y, c, tol, max_passes);
  if (!res.converged)
    log_line(LogLevel::debug, "smo_train stopped at iteration cap (" +
                                  std::to_string(res.iterations) + ")");
  SvmModel model;
  model.gamma = gamma;
  model.c = c;
  model.bias = res.bias;
  std::vector<Eigen::Index> sv;
  for (Eigen::Index k = 0; k < y.size(); ++k)
    if (res.alpha[k] > 0.0) sv.push_back(k);
  if (sv.empty()) throw SolverError("smo_train: empty support set");
  model.support_points.resize(static_cast<Eigen::Index>(sv.size()), x.cols());
  model.dual_coefficients.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t s = 0; s < sv.size(); ++s) {
    model.support_points.row(static_cast<Eigen::Index>(s)) = x.row(sv[s]);
    model.dual_coefficients[static_cast<Eigen::Index>(s)] = res.alpha[sv[s]] * y[sv[s]];
  }
  return model;
}

inline double decision_value(const SvmModel& model, const Eigen::Ref<const Vector>& point) {
  if (point.size() != model.support_points.cols())
    throw SolverError("predict: dimension mismatch");
  double f = model.bias;
  for (Eigen::Index s = 0; s < model.n_support(); ++s)
    f += model.dual_coefficients[s] *
         rbf_kernel(model.support_points.row(s).transpose(), point, model.gamma);
  return f;
}

/// Sign of the decision function; an exact 0 maps to +1.
inline Vector predict(const SvmModel& model, const Matrix& x) {
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    out[i] = decision_value(model, x.row(i).transpose()) >= 0.0 ? 1.0 : -1.0;
  return out;
}

struct GridSearchResult {
  double c = 0.0;
  double gamma = 0.0;
  Metrics metrics;
};

/// Cross-validated grid search: trains on k-1 folds, pools confusion
/// counts over held-out folds, keeps the pair with the best pooled
/// accuracy (ties to smaller c, then smaller gamma).
inline GridSearchResult grid_search_cv(const Matrix& x, const Vector& y,
                                       const HyperGrid& grid, const FoldAssignment& folds,
                                       double tol = kSmoTol, long max_passes = kSmoMaxPasses) {
  validate_grid(grid);
  const Eigen::Index n = x.rows();
  if (static_cast<Eigen::Index>(folds.fold_of_subject.size()) != n)
    throw SolverError("grid_search_cv: fold assignment does not match data");
  if (!all_finite(x)) throw SolverError("grid_search_cv: non-finite input");

  const Matrix d2 = detail::squared_distances(x);
  const std::size_t nc = grid.c_values.size();
  const std::size_t ng = grid.gamma_values.size();
  std::vector<ConfusionCounts> pooled(nc * ng);

  for (std::size_t gi = 0; gi < ng; ++gi) {
    const double gamma = grid.gamma_values[gi];
    const Matrix kernel = (-gamma * d2.array()).exp();
    for (int f = 0; f < folds.k; ++f) {
      std::vector<int> train_ix, test_ix;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (folds.fold_of_subject[static_cast<std::size_t>(i)] == f)
          test_ix.push_back(static_cast<int>(i));
        else
          train_ix.push_back(static_cast<int>(i));
      }
      const Eigen::Index nt = static_cast<Eigen::Index>(train_ix.size());
      Matrix ktr(nt, nt);
      Vector ytr(nt);
      for (Eigen::Index a = 0; a < nt; ++a) {
        ytr[a] = y[train_ix[static_cast<std::size_t>(a)]];
        for (Eigen::Index b = 0; b < nt; ++b)
          ktr(a, b) = kernel(train_ix[static_cast<std::size_t>(a)],
                             train_ix[static_cast<std::size_t>(b)]);
      }
      bool pos = false, neg = false;
      for (Eigen::Index a = 0; a < nt; ++a) (ytr[a] > 0 ? pos : neg) = true;
      if (!pos || !neg)
        throw SolverError("grid_search_cv: training split for fold " + std::to_string(f) +
                          " lost a class; use more stratified folds");
      for (std::size_t ci = 0; ci < nc; ++ci) {
        detail::SmoResult res;
        try {
          res = detail::smo_solve(ktr, ytr, grid.c_values[ci], tol, max_passes);
        } catch (const Error& e) {
          throw SolverError("grid_search_cv: fold " + std::to_string(f) + ", c=" +
                            format_real(grid.c_values[ci]) + ", gamma=" + format_real(gamma) +
                            ": " + e.what());
        }
        ConfusionCounts& counts = pooled[ci * ng + gi];
        for (int t : test_ix) {
          double dec = res.bias;
          for (Eigen::Index a = 0; a < nt; ++a)
            dec += res.alpha[a] * ytr[a] * kernel(train_ix[static_cast<std::size_t>(a)], t);
          const bool pred_pos = dec >= 0.0;
          const bool actual_pos = y[t] > 0;
          if (actual_pos && pred_pos) ++counts.tp;
          else if (actual_pos) ++counts.fn;
          else if (pred_pos) ++counts.fp;
          else ++counts.tn;
        }
      }
    }
  }

  // Integer correct-count comparison keeps the argmax free of float
  // equality surprises.
  std::size_t best_ci = 0, best_gi = 0;
  long best_correct = -1;
  for (std::size_t ci = 0; ci < nc; ++ci) {
    for (std::size_t gi = 0; gi < ng; ++gi) {
      const long correct = pooled[ci * ng + gi].correct();
      if (correct > best_correct) {
        best_correct = correct;
        best_ci = ci;
        best_gi = gi;
      }
    }
  }
  GridSearchResult out;
  out.c = grid.c_values[best_ci];
  out.gamma = grid.gamma_values[best_gi];
  out.metrics = metrics_from_counts(pooled[best_ci * ng + best_gi]);
  return out;
}

}  // namespace mswl

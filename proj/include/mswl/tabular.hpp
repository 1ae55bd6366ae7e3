#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "mswl/common.hpp"
#include "mswl/rng.hpp"

namespace mswl {

/// One site's private data. Covariate columns are age (years),
/// sex (0/1) and ICV (mm^3); labels are +1 patient / -1 control.
struct SubjectTable {
  std::string site_id;
  std::vector<std::string> subject_ids;
  Matrix features;   // n_subjects x n_features
  std::vector<std::string> feature_names;
  Matrix covariates; // n_subjects x 3
  Vector labels;     // entries in {+1, -1}

  Eigen::Index n_subjects() const { return features.rows(); }
  Eigen::Index n_features() const { return features.cols(); }
};

inline const std::vector<std::string>& covariate_names() {
  static const std::vector<std::string> names = {"intercept", "age", "sex", "icv"};
  return names;
}

inline void validate_table(const SubjectTable& t) {
  const auto n = t.n_subjects();
  if (n < 4) throw DataError("site '" + t.site_id + "': need at least 4 subjects");
  if (t.labels.size() != n || t.covariates.rows() != n)
    throw DataError("site '" + t.site_id + "': row count mismatch across blocks");
  if (t.covariates.cols() != 3)
    throw DataError("site '" + t.site_id + "': expected 3 covariate columns");
  if (static_cast<Eigen::Index>(t.feature_names.size()) != t.n_features())
    throw DataError("site '" + t.site_id + "': feature name count mismatch");
  if (!t.subject_ids.empty() &&
      static_cast<Eigen::Index>(t.subject_ids.size()) != n)
    throw DataError("site '" + t.site_id + "': subject id count mismatch");
  if (!all_finite(t.features) || !all_finite(t.covariates) || !all_finite(t.labels))
    throw DataError("site '" + t.site_id + "': non-finite entry");
  bool has_pos = false, has_neg = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (t.labels[i] == 1.0) has_pos = true;
    else if (t.labels[i] == -1.0) has_neg = true;
    else throw DataError("site '" + t.site_id + "': label outside {+1,-1}");
  }
  if (!has_pos || !has_neg)
    throw DataError("site '" + t.site_id + "': both label classes must be present");
  std::set<std::string> seen;
  for (const auto& name : t.feature_names) {
    if (!seen.insert(name).second)
      throw DataError("site '" + t.site_id + "': duplicate feature name '" + name + "'");
  }
}

namespace detail {

/// Intercept-augmented covariate design with unit-normalized columns.
/// Normalization keeps the projection identical while taming ICV's
/// ~1e6 scale.
inline Matrix covariate_design(const SubjectTable& t) {
  const auto n = t.n_subjects();
  Matrix d(n, 4);
  d.col(0).setOnes();
  d.block(0, 1, n, 3) = t.covariates;
  for (int j = 0; j < 4; ++j) {
    const double norm = d.col(j).norm();
    if (norm > 0) d.col(j) /= norm;
  }
  return d;
}

inline void check_design_rank(const Matrix& design, const std::string& site_id) {
  Eigen::ColPivHouseholderQR<Matrix> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() == design.cols()) return;
  // Walk prefixes to name the first column that fails to add rank.
  for (int j = 1; j < design.cols(); ++j) {
    Eigen::ColPivHouseholderQR<Matrix> prefix(design.leftCols(j + 1));
    prefix.setThreshold(1e-10);
    if (prefix.rank() < j + 1) {
      throw DataError("site '" + site_id + "': degenerate covariate design, column '" +
                      covariate_names()[j] + "' is linearly dependent");
    }
  }
  throw DataError("site '" + site_id + "': degenerate covariate design");
}

}  // namespace detail

/// Replaces every feature column by its residual from an OLS fit on
/// [1, age, sex, ICV]. Labels and covariates pass through unchanged.
/// The projection is applied twice so residuals stay orthogonal to the
/// design at machine precision.
inline SubjectTable residualize(const SubjectTable& t) {
  validate_table(t);
  const Matrix design = detail::covariate_design(t);
  detail::check_design_rank(design, t.site_id);
  Eigen::HouseholderQR<Matrix> qr(design);
  SubjectTable out = t;
  Matrix resid = t.features - design * qr.solve(t.features);
  resid -= design * qr.solve(resid);
  out.features = std::move(resid);
  return out;
}

struct StandardizeResult {
  Matrix standardized;
  Vector column_means;
  Vector column_scales; // sample standard deviations
};

/// Centers and scales each column to mean 0, sample sd 1. Constant
/// columns are an error: silently dropping them would shift feature
/// indices out of alignment across sites.
inline StandardizeResult standardize(const Matrix& m) {
  const auto n = m.rows();
  if (n < 2) throw DataError("standardize: need at least 2 rows");
  StandardizeResult r;
  r.column_means = m.colwise().mean();
  r.column_scales.resize(m.cols());
  r.standardized.resize(n, m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const Vector centered = m.col(j).array() - r.column_means[j];
    const double sd = std::sqrt(centered.squaredNorm() / static_cast<double>(n - 1));
    if (!(sd > 1e-12))
      throw DataError("standardize: column " + std::to_string(j) +
                      " is constant (sd <= 1e-12)");
    r.column_scales[j] = sd;
    r.standardized.col(j) = centered / sd;
  }
  return r;
}

inline Matrix unstandardize(const Matrix& std_m, const Vector& means, const Vector& scales) {
  Matrix out(std_m.rows(), std_m.cols());
  for (Eigen::Index j = 0; j < std_m.cols(); ++j)
    out.col(j) = std_m.col(j).array() * scales[j] + means[j];
  return out;
}

/// Classification accuracy, specificity and sensitivity.
struct Metrics {
  double accuracy = 0.0;
  double specificity = 0.0;
  double sensitivity = 0.0;

  bool operator==(const Metrics&) const = default;
};

struct ConfusionCounts {
  long tp = 0, tn = 0, fp = 0, fn = 0;

  long total() const { return tp + tn + fp + fn; }
  long correct() const { return tp + tn; }
};

inline Metrics metrics_from_counts(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0 || c.tn + c.fp == 0)
    throw DataError("confusion metrics undefined: a class is absent from the actual labels");
  Metrics m;
  m.accuracy = static_cast<double>(c.correct()) / static_cast<double>(c.total());
  m.sensitivity = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  m.specificity = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  return m;
}

inline ConfusionCounts confusion_counts(const Vector& predicted, const Vector& actual) {
  if (predicted.size() != actual.size())
    throw DataError("confusion metrics: length mismatch");
  ConfusionCounts c;
  for (Eigen::Index i = 0; i < actual.size(); ++i) {
    const bool pos = actual[i] > 0;
    const bool pred_pos = predicted[i] > 0;
    if (pos && pred_pos) ++c.tp;
    else if (pos && !pred_pos) ++c.fn;
    else if (!pos && pred_pos) ++c.fp;
    else ++c.tn;
  }
  return c;
}

/// Positive class is the patient label (+1). Errors when the actual
/// labels contain a single class, where the rates are 0/0.
inline Metrics confusion_metrics(const Vector& predicted, const Vector& actual) {
  return metrics_from_counts(confusion_counts(predicted, actual));
}

/// Stratified k-fold assignment, frozen by seed so rounds of the
/// protocol reuse identical folds.
struct FoldAssignment {
  std::vector<int> fold_of_subject;
  int k = 0;
  std::uint64_t seed = 0;
};

inline FoldAssignment stratified_folds(const Vector& labels, int k, std::uint64_t seed) {
  if (k < 2) throw DataError("stratified_folds: k must be >= 2");
  std::vector<int> pos, neg;
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels[i] > 0) pos.push_back(static_cast<int>(i));
    else neg.push_back(static_cast<int>(i));
  }
  const std::size_t largest = std::max(pos.size(), neg.size());
  if (largest < static_cast<std::size_t>(k))
    throw DataError("stratified_folds: largest class has " + std::to_string(largest) +
                    " members, fewer than k=" + std::to_string(k));
  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);
  FoldAssignment fa;
  fa.k = k;
  fa.seed = seed;
  fa.fold_of_subject.assign(labels.size(), -1);
  // Deal positives round-robin from fold 0, then keep dealing negatives
  // from where the counter stopped: positive counts per fold differ by
  // at most one and so do total fold sizes.
  std::size_t counter = 0;
  for (int idx : pos) fa.fold_of_subject[idx] = static_cast<int>(counter++ % k);
  for (int idx : neg) fa.fold_of_subject[idx] = static_cast<int>(counter++ % k);
  return fa;
}

}  // namespace mswl

#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "mswl/common.hpp"
#include "mswl/svm.hpp"
#include "mswl/tabular.hpp"
#include "mswl/wlasso.hpp"

namespace mswl {

/// Who participates and how many subjects each holds. Proportions are
/// relative subject counts; no raw data enters the registry.
struct SiteRegistry {
  struct Entry {
    std::string site_id;
    int n_subjects = 0;
  };
  std::vector<Entry> entries; // sorted by site_id

  int m() const { return static_cast<int>(entries.size()); }
  int total_subjects() const {
    int t = 0;
    for (const auto& e : entries) t += e.n_subjects;
    return t;
  }
};

inline SiteRegistry make_registry(std::vector<SiteRegistry::Entry> entries) {
  if (entries.empty()) throw ProtocolError("registry: at least one site required");
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.site_id < b.site_id; });
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].n_subjects <= 0)
      throw ProtocolError("registry: site '" + entries[i].site_id +
                          "' has nonpositive subject count");
    if (i > 0 && entries[i].site_id == entries[i - 1].site_id)
      throw ProtocolError("registry: duplicate site id '" + entries[i].site_id + "'");
  }
  SiteRegistry r;
  r.entries = std::move(entries);
  return r;
}

inline Vector site_proportions(const SiteRegistry& registry) {
  const double total = static_cast<double>(registry.total_subjects());
  Vector p(registry.m());
  for (int s = 0; s < registry.m(); ++s)
    p[s] = static_cast<double>(registry.entries[s].n_subjects) / total;
  return p;
}

/// Everything a site ever sends: feature indices plus three scalar
/// metrics. No coefficients, no covariates, no raw rows.
struct SiteReport {
  std::string site_id;
  int round = 0;
  FeatureSet selected;
  Metrics metrics;
};

struct WeightVector {
  Vector weights; // each in [0, 1/m]
};

/// W_f = sum_s Psi_{s,f} * A_s * P_s / m, with Psi the selection
/// indicator of feature f at site s and A_s the reported accuracy.
inline WeightVector aggregate_weights(const std::vector<SiteReport>& reports,
                                      const SiteRegistry& registry, int n_features) {
  const int m = registry.m();
  if (static_cast<int>(reports.size()) != m)
    throw ProtocolError("aggregate: got " + std::to_string(reports.size()) +
                        " reports for " + std::to_string(m) + " sites");
  std::map<std::string, const SiteReport*> by_site;
  for (const auto& r : reports) {
    if (!by_site.emplace(r.site_id, &r).second)
      throw ProtocolError("aggregate: duplicate report from site '" + r.site_id + "'");
  }
  const int round = reports.front().round;
  for (const auto& r : reports) {
    if (r.round != round)
      throw ProtocolError("aggregate: round mismatch, site '" + r.site_id + "' reported round " +
                          std::to_string(r.round) + " while site '" +
                          reports.front().site_id + "' reported round " + std::to_string(round));
  }

  const Vector proportions = site_proportions(registry);
  WeightVector w;
  w.weights = Vector::Zero(n_features);
  for (int s = 0; s < m; ++s) {
    const auto& entry = registry.entries[s];
    auto it = by_site.find(entry.site_id);
    if (it == by_site.end())
      throw ProtocolError("aggregate: missing report from site '" + entry.site_id + "'");
    const SiteReport& rep = *it->second;
    const double contribution = rep.metrics.accuracy * proportions[s] / static_cast<double>(m);
    for (int f : rep.selected.indices) {
      if (f < 0 || f >= n_features)
        throw ProtocolError("aggregate: site '" + entry.site_id + "' selected index " +
                            std::to_string(f) + " outside [0," + std::to_string(n_features) + ")");
      w.weights[f] += contribution;
    }
  }
  const double bound = 1.0 / static_cast<double>(m) + 1e-12;
  for (Eigen::Index f = 0; f < w.weights.size(); ++f) {
    if (w.weights[f] < 0.0 || w.weights[f] > bound)
      throw ProtocolError("aggregate: weight " + std::to_string(f) + " escaped [0, 1/m]");
  }
  return w;
}

/// Penalty factor 1 - W_f: consensus-backed features are penalized less.
inline PenaltyVector penalty_from_weights(const WeightVector& w) {
  PenaltyVector p;
  p.factors = 1.0 - w.weights.array();
  return p;
}

/// Integration server state (Algorithm 1). previous_accuracy starts at
/// zero for every site, so any positive round-0 accuracy counts as an
/// improvement.
struct ServerState {
  SiteRegistry registry;
  int n_features = 0;
  int round = 0;
  std::map<std::string, SiteReport> last_reports;
  std::map<std::string, double> previous_accuracy;
  bool terminated = false;
};

inline ServerState make_server_state(SiteRegistry registry, int n_features) {
  ServerState s;
  s.registry = std::move(registry);
  s.n_features = n_features;
  for (const auto& e : s.registry.entries) s.previous_accuracy[e.site_id] = 0.0;
  return s;
}

struct ServerDecision {
  bool terminate = false;
  WeightVector weights;   // valid when !terminate
  PenaltyVector penalty;  // valid when !terminate
};

/// One server round: continue with fresh penalties while at least one
/// site strictly improved on accuracy, terminate otherwise.
inline ServerDecision server_step(ServerState& state, const std::vector<SiteReport>& reports) {
  if (state.terminated) throw ProtocolError("server_step: reports received after termination");
  for (const auto& r : reports) {
    if (r.round != state.round)
      throw ProtocolError("server_step: site '" + r.site_id + "' reported round " +
                          std::to_string(r.round) + ", expected " + std::to_string(state.round));
  }
  // Validates one-report-per-site as a side effect.
  WeightVector weights = aggregate_weights(reports, state.registry, state.n_features);

  bool improvement = false;
  for (const auto& r : reports) {
    if (r.metrics.accuracy > state.previous_accuracy.at(r.site_id)) improvement = true;
  }
  for (const auto& r : reports) {
    state.previous_accuracy[r.site_id] = r.metrics.accuracy;
    state.last_reports[r.site_id] = r;
  }

  ServerDecision decision;
  if (!improvement) {
    state.terminated = true;
    decision.terminate = true;
    return decision;
  }
  decision.penalty = penalty_from_weights(weights);
  decision.weights = std::move(weights);
  state.round += 1;
  return decision;
}

struct SiteConfig {
  double sparsity_fraction = 0.16;
  int path_len = 100;
  double lasso_tol = 1e-7;
  HyperGrid grid = default_grid();
  int folds_k = 5;
  std::uint64_t fold_seed = 7;
  double smo_tol = kSmoTol;
  long smo_max_passes = kSmoMaxPasses;
};

/// One site's working state (Algorithm 2): residualized + standardized
/// data frozen before round 0, folds frozen across rounds, and the
/// currently accepted (F, A).
struct SiteState {
  std::string site_id;
  Matrix x;          // residualized, standardized features
  Vector y;          // labels in {+1,-1}
  Vector y_centered; // labels centered for the LASSO
  FoldAssignment folds;
  SiteConfig config;
  int round = 0;
  FeatureSet current_features; // F_i, empty before round 0
  Metrics current_metrics;     // A_i, zero before round 0

  Eigen::Index n_features() const { return x.cols(); }
  Eigen::Index n_subjects() const { return x.rows(); }
};

inline SiteState make_site_state(const SubjectTable& raw, const SiteConfig& config) {
  const SubjectTable residualized = residualize(raw);
  StandardizeResult std_result;
  try {
    std_result = standardize(residualized.features);
  } catch (const DataError& e) {
    // Re-address the column by feature name for the site operator.
    std::string msg(e.what());
    const std::string prefix = "standardize: column ";
    if (msg.rfind(prefix, 0) == 0) {
      const std::size_t idx = std::stoul(msg.substr(prefix.size()));
      throw DataError("site '" + raw.site_id + "': feature '" + raw.feature_names[idx] +
                      "' is constant after residualization; drop it before the protocol");
    }
    throw;
  }
  SiteState s;
  s.site_id = raw.site_id;
  s.x = std::move(std_result.standardized);
  s.y = raw.labels;
  s.y_centered = raw.labels.array() - raw.labels.mean();
  s.folds = stratified_folds(raw.labels, config.folds_k, config.fold_seed);
  s.config = config;
  return s;
}

struct SiteStepResult {
  SiteReport report;
  bool adopted = false;         // (F', A') replaced (F, A)
  bool cache_hit = false;       // F' == F, no SVM run
  bool empty_selection = false; // F' empty, kept old feature set
};

/// One site round: run the weighted LASSO selection, evaluate a changed
/// feature set with the frozen-fold grid search, adopt only on a strict
/// accuracy improvement, and always report the accepted (F, A).
inline SiteStepResult site_step(SiteState& state, const PenaltyVector& penalty) {
  validate_penalty(penalty, state.n_features());
  SiteStepResult result;
  const SelectionResult sel = select_features(state.x, state.y_centered, penalty,
                                              state.config.sparsity_fraction,
                                              state.config.path_len,
                                              FitOptions{state.config.lasso_tol});
  if (sel.features == state.current_features) {
    result.cache_hit = true;
  } else if (sel.features.empty()) {
    result.empty_selection = true;
    log_line(LogLevel::warn, "site '" + state.site_id +
                                 "': empty selection, keeping current feature set");
  } else {
    Matrix sub(state.x.rows(), sel.features.size());
    for (int k = 0; k < sel.features.size(); ++k)
      sub.col(k) = state.x.col(sel.features.indices[static_cast<std::size_t>(k)]);
    const GridSearchResult gs =
        grid_search_cv(sub, state.y, state.config.grid, state.folds,
                       state.config.smo_tol, state.config.smo_max_passes);
    if (gs.metrics.accuracy > state.current_metrics.accuracy) {
      state.current_features = sel.features;
      state.current_metrics = gs.metrics;
      result.adopted = true;
    }
  }
  result.report.site_id = state.site_id;
  result.report.round = state.round;
  result.report.selected = state.current_features;
  result.report.metrics = state.current_metrics;
  state.round += 1;
  return result;
}

}  // namespace mswl

#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "mswl/common.hpp"
#include "mswl/rng.hpp"
#include "mswl/tabular.hpp"

namespace mswl {

/// Synthetic multi-site cohort: a common planted support separates the
/// classes, covariates leak into every feature, and each site carries
/// its own feature offsets. Defaults mirror the five-site demographics
/// the protocol was designed around.
struct CohortConfig {
  std::vector<int> site_sizes = {45, 110, 130, 172, 100};
  int n_features = 152;
  int planted_support = 24;
  double effect_size = 0.6; // standardized mean difference on support features
  double site_noise = 0.5;  // scale of per-site per-feature offsets
  std::vector<double> covariate_loadings = {0.4, 0.3, 0.4}; // age, sex, icv
  std::vector<double> patient_fractions = {22.0 / 45.0, 54.0 / 110.0, 69.0 / 130.0,
                                           101.0 / 172.0, 53.0 / 100.0};
  std::uint64_t seed = 1;
};

struct SyntheticCohort {
  std::vector<SubjectTable> tables;
  std::vector<int> planted_support; // sorted feature indices
};

namespace detail {

inline std::string zero_padded(int value, int width) {
  std::string s = std::to_string(value);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

inline void validate_cohort_config(const CohortConfig& cfg) {
  if (cfg.site_sizes.empty()) throw DataError("cohort: at least one site required");
  for (std::size_t s = 0; s < cfg.site_sizes.size(); ++s)
    if (cfg.site_sizes[s] < 4)
      throw DataError("cohort: site " + std::to_string(s + 1) + " needs at least 4 subjects");
  if (cfg.n_features < 1) throw DataError("cohort: n_features must be positive");
  if (cfg.planted_support < 0 || cfg.planted_support > cfg.n_features)
    throw DataError("cohort: planted_support must lie in [0, n_features]");
  if (!(cfg.site_noise >= 0.0)) throw DataError("cohort: site_noise must be >= 0");
  if (cfg.covariate_loadings.size() != 3)
    throw DataError("cohort: covariate_loadings must have 3 entries");
  if (cfg.patient_fractions.size() != cfg.site_sizes.size())
    throw DataError("cohort: patient_fractions size != site_sizes size");
  for (std::size_t s = 0; s < cfg.patient_fractions.size(); ++s) {
    const double f = cfg.patient_fractions[s];
    if (!(f > 0.0 && f < 1.0))
      throw DataError("cohort: patient fraction of site " + std::to_string(s + 1) +
                      " outside (0,1)");
    const long pat = std::lround(f * cfg.site_sizes[s]);
    if (pat <= 0 || pat >= cfg.site_sizes[s])
      throw DataError("cohort: site " + std::to_string(s + 1) +
                      " would have a single-class cohort; adjust size or fraction");
  }
}

}  // namespace detail

inline SyntheticCohort generate_cohort(const CohortConfig& cfg) {
  detail::validate_cohort_config(cfg);
  const int n_sites = static_cast<int>(cfg.site_sizes.size());
  const int site_width = n_sites >= 10 ? 2 : 1;
  const int feat_width = std::max(3, static_cast<int>(std::to_string(cfg.n_features).size()));

  SyntheticCohort cohort;
  {
    Rng rng(substream_seed(cfg.seed, 0));
    std::vector<int> all(cfg.n_features);
    for (int j = 0; j < cfg.n_features; ++j) all[j] = j;
    rng.shuffle(all);
    cohort.planted_support.assign(all.begin(), all.begin() + cfg.planted_support);
    std::sort(cohort.planted_support.begin(), cohort.planted_support.end());
  }
  std::vector<bool> in_support(cfg.n_features, false);
  for (int j : cohort.planted_support) in_support[j] = true;

  // Site-to-site demographic variation, cycled for configs with more
  // than five sites.
  static const double age_means[5] = {43.0, 38.0, 50.0, 41.0, 40.0};
  static const double age_sds[5] = {13.0, 10.0, 8.0, 12.0, 11.0};
  const double icv_mean = 1.45e6, icv_sd = 1.5e5;

  for (int s = 0; s < n_sites; ++s) {
    const int n = cfg.site_sizes[s];
    const int n_pat = static_cast<int>(std::lround(cfg.patient_fractions[s] * n));
    Rng rng(substream_seed(cfg.seed, static_cast<std::uint64_t>(s) + 1));

    SubjectTable t;
    t.site_id = "site_" + detail::zero_padded(s + 1, site_width);
    t.feature_names.reserve(cfg.n_features);
    for (int j = 0; j < cfg.n_features; ++j)
      t.feature_names.push_back("f" + detail::zero_padded(j + 1, feat_width));

    std::vector<double> labels(n, -1.0);
    std::fill(labels.begin(), labels.begin() + n_pat, 1.0);
    rng.shuffle(labels);

    std::vector<double> site_offset(cfg.n_features);
    for (int j = 0; j < cfg.n_features; ++j) site_offset[j] = cfg.site_noise * rng.normal();

    t.features.resize(n, cfg.n_features);
    t.covariates.resize(n, 3);
    t.labels.resize(n);
    t.subject_ids.reserve(n);
    const int subj_width = std::max(3, static_cast<int>(std::to_string(n).size()));
    for (int i = 0; i < n; ++i) {
      t.subject_ids.push_back(t.site_id + "_s" + detail::zero_padded(i + 1, subj_width));
      t.labels[i] = labels[i];
      const double age = age_means[s % 5] + age_sds[s % 5] * rng.normal();
      const double sex = rng.bernoulli(0.58) ? 1.0 : 0.0;
      const double icv = icv_mean + icv_sd * rng.normal();
      t.covariates(i, 0) = age;
      t.covariates(i, 1) = sex;
      t.covariates(i, 2) = icv;
      const double age_z = (age - age_means[s % 5]) / age_sds[s % 5];
      const double sex_c = sex - 0.5;
      const double icv_z = (icv - icv_mean) / icv_sd;
      const double leak = cfg.covariate_loadings[0] * age_z +
                          cfg.covariate_loadings[1] * sex_c +
                          cfg.covariate_loadings[2] * icv_z;
      for (int j = 0; j < cfg.n_features; ++j) {
        double v = rng.normal() + site_offset[j] + leak;
        if (labels[i] > 0 && in_support[j]) v += cfg.effect_size;
        t.features(i, j) = v;
      }
    }
    validate_table(t);
    cohort.tables.push_back(std::move(t));
  }
  return cohort;
}

// ---------------------------------------------------------------------------
// CSV schema: subject_id,label,age,sex,icv,<feature names...>
// label in {1,-1}, sex in {0,1}, floats with '.' separator, LF endings.

namespace detail {

inline double parse_number(const std::string& tok, std::size_t row, const std::string& col) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || tok.empty())
    throw DataError("csv row " + std::to_string(row) + ", column '" + col +
                    "': not a number: '" + tok + "'");
  return v;
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace detail

inline SubjectTable load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (content.find('\r') != std::string::npos)
    throw DataError("'" + path + "': CR line endings are not part of the schema");

  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < content.size()) {
    const auto pos = content.find('\n', start);
    if (pos == std::string::npos) {
      lines.push_back(content.substr(start));
      break;
    }
    lines.push_back(content.substr(start, pos - start));
    start = pos + 1;
  }
  if (lines.empty()) throw DataError("'" + path + "': empty file");

  const auto header = detail::split_fields(lines[0]);
  static const std::vector<std::string> fixed = {"subject_id", "label", "age", "sex", "icv"};
  if (header.size() < fixed.size() + 1)
    throw DataError("'" + path + "': header must be subject_id,label,age,sex,icv,<features...>");
  for (std::size_t c = 0; c < fixed.size(); ++c) {
    if (header[c] != fixed[c])
      throw DataError("'" + path + "': header column " + std::to_string(c + 1) + " must be '" +
                      fixed[c] + "', got '" + header[c] + "'");
  }
  const std::size_t p = header.size() - fixed.size();

  SubjectTable t;
  t.site_id = std::filesystem::path(path).stem().string();
  t.feature_names.assign(header.begin() + fixed.size(), header.end());

  const std::size_t n = lines.size() - 1;
  t.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  t.covariates.resize(static_cast<Eigen::Index>(n), 3);
  t.labels.resize(static_cast<Eigen::Index>(n));
  std::set<std::string> ids;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t row_no = r + 2; // 1-based, after the header
    const auto fields = detail::split_fields(lines[r + 1]);
    if (fields.size() != header.size())
      throw DataError("csv row " + std::to_string(row_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    if (fields[0].empty()) throw DataError("csv row " + std::to_string(row_no) + ": empty subject_id");
    if (!ids.insert(fields[0]).second)
      throw DataError("csv row " + std::to_string(row_no) + ": duplicate subject_id '" +
                      fields[0] + "'");
    t.subject_ids.push_back(fields[0]);
    if (fields[1] == "1") t.labels[static_cast<Eigen::Index>(r)] = 1.0;
    else if (fields[1] == "-1") t.labels[static_cast<Eigen::Index>(r)] = -1.0;
    else
      throw DataError("csv row " + std::to_string(row_no) + ": label must be 1 or -1, got '" +
                      fields[1] + "'");
    t.covariates(static_cast<Eigen::Index>(r), 0) = detail::parse_number(fields[2], row_no, "age");
    if (fields[3] == "0") t.covariates(static_cast<Eigen::Index>(r), 1) = 0.0;
    else if (fields[3] == "1") t.covariates(static_cast<Eigen::Index>(r), 1) = 1.0;
    else
      throw DataError("csv row " + std::to_string(row_no) + ": sex must be 0 or 1, got '" +
                      fields[3] + "'");
    t.covariates(static_cast<Eigen::Index>(r), 2) = detail::parse_number(fields[4], row_no, "icv");
    for (std::size_t j = 0; j < p; ++j) {
      t.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
          detail::parse_number(fields[fixed.size() + j], row_no, t.feature_names[j]);
    }
  }
  validate_table(t);
  return t;
}

inline void write_csv(const SubjectTable& t, const std::string& path) {
  validate_table(t);
  if (t.subject_ids.empty())
    throw DataError("write_csv: table '" + t.site_id + "' has no subject ids");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "subject_id,label,age,sex,icv";
  for (const auto& name : t.feature_names) out << ',' << name;
  out << '\n';
  for (Eigen::Index i = 0; i < t.n_subjects(); ++i) {
    out << t.subject_ids[static_cast<std::size_t>(i)];
    out << ',' << (t.labels[i] > 0 ? "1" : "-1");
    out << ',' << format_real(t.covariates(i, 0));
    out << ',' << (t.covariates(i, 1) > 0 ? "1" : "0");
    out << ',' << format_real(t.covariates(i, 2));
    for (Eigen::Index j = 0; j < t.n_features(); ++j) out << ',' << format_real(t.features(i, j));
    out << '\n';
  }
  if (!out) throw DataError("write failed for '" + path + "'");
}

inline void write_cohort(const SyntheticCohort& cohort, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& t : cohort.tables)
    write_csv(t, (std::filesystem::path(dir) / (t.site_id + ".csv")).string());
  std::ofstream truth(std::filesystem::path(dir) / "planted_support.json", std::ios::binary);
  truth << "{\"planted_support\":[";
  for (std::size_t k = 0; k < cohort.planted_support.size(); ++k) {
    if (k) truth << ',';
    truth << cohort.planted_support[k];
  }
  truth << "]}\n";
}

}  // namespace mswl

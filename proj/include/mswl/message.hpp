#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mswl/common.hpp"
#include "mswl/consensus.hpp"

namespace mswl {

// Wire protocol: one JSON object per line, fixed key order, reals with
// 17 significant digits, LF-terminated. Key orders are part of the
// format:
//   hello     {type, site_id, n_subjects, n_features}
//   weights   {type, round, penalty}
//   report    {type, site_id, round, selected, accuracy, specificity, sensitivity}
//   terminate {type, round}

struct HelloMsg {
  std::string site_id;
  int n_subjects = 0;
  int n_features = 0;
  bool operator==(const HelloMsg&) const = default;
};

struct WeightsMsg {
  int round = 0;
  std::vector<double> penalty;
  bool operator==(const WeightsMsg&) const = default;
};

struct ReportMsg {
  SiteReport report;
  bool operator==(const ReportMsg& o) const {
    return report.site_id == o.report.site_id && report.round == o.report.round &&
           report.selected == o.report.selected && report.metrics == o.report.metrics;
  }
};

struct TerminateMsg {
  int round = 0;
  bool operator==(const TerminateMsg&) const = default;
};

using Message = std::variant<HelloMsg, WeightsMsg, ReportMsg, TerminateMsg>;

namespace detail {

inline std::string json_string(const std::string& s) { return nlohmann::json(s).dump(); }

inline void require_finite_metric(double v, const char* name) {
  if (!std::isfinite(v) || v < 0.0 || v > 1.0)
    throw WireError(std::string("report metric '") + name + "' outside [0,1]");
}

}  // namespace detail

/// Report payloads are indices and three scalars, nothing else; this is
/// the privacy schema and it is enforced on every encode.
inline void validate_report_schema(const SiteReport& r,
                                   std::optional<int> n_features = std::nullopt) {
  if (r.site_id.empty()) throw WireError("report: empty site_id");
  if (r.round < 0) throw WireError("report: negative round");
  int prev = -1;
  for (int idx : r.selected.indices) {
    if (idx < 0) throw WireError("report: negative feature index");
    if (idx <= prev) throw WireError("report: indices must be strictly increasing");
    if (n_features && idx >= *n_features)
      throw WireError("report: feature index " + std::to_string(idx) + " outside [0," +
                      std::to_string(*n_features) + ")");
    prev = idx;
  }
  detail::require_finite_metric(r.metrics.accuracy, "accuracy");
  detail::require_finite_metric(r.metrics.specificity, "specificity");
  detail::require_finite_metric(r.metrics.sensitivity, "sensitivity");
}

inline std::string encode_message(const Message& msg) {
  std::string out;
  if (const auto* h = std::get_if<HelloMsg>(&msg)) {
    if (h->site_id.empty()) throw WireError("hello: empty site_id");
    if (h->n_subjects <= 0 || h->n_features <= 0)
      throw WireError("hello: n_subjects and n_features must be positive");
    out = "{\"type\":\"hello\",\"site_id\":" + detail::json_string(h->site_id) +
          ",\"n_subjects\":" + std::to_string(h->n_subjects) +
          ",\"n_features\":" + std::to_string(h->n_features) + "}";
  } else if (const auto* w = std::get_if<WeightsMsg>(&msg)) {
    if (w->round < 0) throw WireError("weights: negative round");
    out = "{\"type\":\"weights\",\"round\":" + std::to_string(w->round) + ",\"penalty\":[";
    for (std::size_t j = 0; j < w->penalty.size(); ++j) {
      if (!std::isfinite(w->penalty[j])) throw WireError("weights: non-finite penalty entry");
      if (j) out += ',';
      out += format_real(w->penalty[j]);
    }
    out += "]}";
  } else if (const auto* r = std::get_if<ReportMsg>(&msg)) {
    validate_report_schema(r->report);
    out = "{\"type\":\"report\",\"site_id\":" + detail::json_string(r->report.site_id) +
          ",\"round\":" + std::to_string(r->report.round) + ",\"selected\":[";
    for (std::size_t k = 0; k < r->report.selected.indices.size(); ++k) {
      if (k) out += ',';
      out += std::to_string(r->report.selected.indices[k]);
    }
    out += "],\"accuracy\":" + format_real(r->report.metrics.accuracy) +
           ",\"specificity\":" + format_real(r->report.metrics.specificity) +
           ",\"sensitivity\":" + format_real(r->report.metrics.sensitivity) + "}";
  } else {
    const auto& t = std::get<TerminateMsg>(msg);
    if (t.round < 0) throw WireError("terminate: negative round");
    out = "{\"type\":\"terminate\",\"round\":" + std::to_string(t.round) + "}";
  }
  out += '\n';
  return out;
}

namespace detail {

inline const nlohmann::json& field(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw WireError(std::string("missing field '") + key + "'");
  return *it;
}

inline int int_field(const nlohmann::json& obj, const char* key) {
  const auto& v = field(obj, key);
  if (!v.is_number_integer()) throw WireError(std::string("field '") + key + "' must be an integer");
  return v.get<int>();
}

inline std::string string_field(const nlohmann::json& obj, const char* key) {
  const auto& v = field(obj, key);
  if (!v.is_string()) throw WireError(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

inline void require_keys(const nlohmann::json& obj, std::initializer_list<const char*> keys) {
  if (obj.size() != keys.size()) throw WireError("unexpected extra fields in message");
}

}  // namespace detail

/// Parses and validates one framed line. When the feature count was
/// negotiated at Hello, penalty lengths and feature indices are checked
/// against it.
inline Message decode_message(std::string_view line,
                              std::optional<int> n_features = std::nullopt) {
  std::string_view body = line;
  if (!body.empty() && body.back() == '\n') body.remove_suffix(1);
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw WireError(std::string("malformed message: ") + e.what());
  }
  if (!obj.is_object()) throw WireError("message must be a JSON object");
  const std::string type = detail::string_field(obj, "type");

  if (type == "hello") {
    detail::require_keys(obj, {"type", "site_id", "n_subjects", "n_features"});
    HelloMsg h;
    h.site_id = detail::string_field(obj, "site_id");
    h.n_subjects = detail::int_field(obj, "n_subjects");
    h.n_features = detail::int_field(obj, "n_features");
    if (h.site_id.empty()) throw WireError("hello: empty site_id");
    if (h.n_subjects <= 0 || h.n_features <= 0)
      throw WireError("hello: n_subjects and n_features must be positive");
    return h;
  }
  if (type == "weights") {
    detail::require_keys(obj, {"type", "round", "penalty"});
    WeightsMsg w;
    w.round = detail::int_field(obj, "round");
    if (w.round < 0) throw WireError("weights: negative round");
    const auto& arr = detail::field(obj, "penalty");
    if (!arr.is_array()) throw WireError("weights: penalty must be an array");
    for (const auto& v : arr) {
      if (!v.is_number()) throw WireError("weights: penalty entries must be numbers");
      const double f = v.get<double>();
      if (!std::isfinite(f) || f < 0.0 || f > 1.0)
        throw WireError("weights: penalty entry outside [0,1]");
      w.penalty.push_back(f);
    }
    if (n_features && static_cast<int>(w.penalty.size()) != *n_features)
      throw WireError("weights: penalty length " + std::to_string(w.penalty.size()) +
                      " != negotiated n_features " + std::to_string(*n_features));
    return w;
  }
  if (type == "report") {
    detail::require_keys(obj, {"type", "site_id", "round", "selected", "accuracy",
                               "specificity", "sensitivity"});
    ReportMsg r;
    r.report.site_id = detail::string_field(obj, "site_id");
    r.report.round = detail::int_field(obj, "round");
    const auto& arr = detail::field(obj, "selected");
    if (!arr.is_array()) throw WireError("report: selected must be an array");
    for (const auto& v : arr) {
      if (!v.is_number_integer()) throw WireError("report: selected entries must be integers");
      r.report.selected.indices.push_back(v.get<int>());
    }
    auto metric = [&](const char* key) {
      const auto& v = detail::field(obj, key);
      if (!v.is_number()) throw WireError(std::string("report: '") + key + "' must be a number");
      return v.get<double>();
    };
    r.report.metrics.accuracy = metric("accuracy");
    r.report.metrics.specificity = metric("specificity");
    r.report.metrics.sensitivity = metric("sensitivity");
    validate_report_schema(r.report, n_features);
    return r;
  }
  if (type == "terminate") {
    detail::require_keys(obj, {"type", "round"});
    TerminateMsg t;
    t.round = detail::int_field(obj, "round");
    if (t.round < 0) throw WireError("terminate: negative round");
    return t;
  }
  throw WireError("unknown message type '" + type + "'");
}

}  // namespace mswl

#pragma once

#include <chrono>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mswl/cohort.hpp"
#include "mswl/common.hpp"
#include "mswl/consensus.hpp"
#include "mswl/transport.hpp"

namespace mswl {

struct TransportConfig {
  std::string host = "127.0.0.1";
  int port = 7711;
  int expected_sites = 5;
  double timeout_seconds = 600.0;
};

struct ExperimentConfig {
  std::string mode; // simulate | server | site
  std::vector<std::string> data_paths;
  std::optional<CohortConfig> cohort;
  double sparsity_fraction = 0.16;
  std::vector<double> sweep = {0.13, 0.20, 0.23, 0.26, 0.30,
                               0.33, 0.36, 0.40, 0.43, 0.46};
  HyperGrid grid = default_grid();
  int folds_k = 5;
  std::uint64_t fold_seed = 7;
  int max_rounds = 50;
  int path_len = 100;
  double lasso_tol = 1e-7;
  double smo_tol = kSmoTol;
  long smo_max_passes = kSmoMaxPasses;
  TransportConfig transport;
  std::string out_dir = "mswl_out";

  std::chrono::milliseconds timeout() const {
    return std::chrono::milliseconds(
        static_cast<long long>(transport.timeout_seconds * 1000.0));
  }

  SiteConfig site_config() const {
    SiteConfig s;
    s.sparsity_fraction = sparsity_fraction;
    s.path_len = path_len;
    s.lasso_tol = lasso_tol;
    s.grid = grid;
    s.folds_k = folds_k;
    s.fold_seed = fold_seed;
    s.smo_tol = smo_tol;
    s.smo_max_passes = smo_max_passes;
    return s;
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj,
                                std::initializer_list<const char*> known,
                                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) ok = true;
    if (!ok) throw ConfigError("unknown config key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void maybe_get(const nlohmann::json& obj, const char* key, T& out) {
  if (auto it = obj.find(key); it != obj.end()) {
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& obj) {
  if (!obj.is_object()) throw ConfigError("config must be a JSON object");
  detail::reject_unknown_keys(
      obj,
      {"mode", "data", "cohort", "sparsity_fraction", "sweep", "svm_grid", "folds_k",
       "fold_seed", "max_rounds", "path_len", "lasso_tol", "smo_tol", "smo_max_passes",
       "transport", "out_dir"},
      "top level");
  ExperimentConfig cfg;
  detail::maybe_get(obj, "mode", cfg.mode);
  detail::maybe_get(obj, "data", cfg.data_paths);
  if (auto it = obj.find("cohort"); it != obj.end()) {
    detail::reject_unknown_keys(*it,
                                {"site_sizes", "n_features", "planted_support", "effect_size",
                                 "site_noise", "covariate_loadings", "patient_fractions", "seed"},
                                "cohort");
    CohortConfig c;
    detail::maybe_get(*it, "site_sizes", c.site_sizes);
    detail::maybe_get(*it, "n_features", c.n_features);
    detail::maybe_get(*it, "planted_support", c.planted_support);
    detail::maybe_get(*it, "effect_size", c.effect_size);
    detail::maybe_get(*it, "site_noise", c.site_noise);
    detail::maybe_get(*it, "covariate_loadings", c.covariate_loadings);
    detail::maybe_get(*it, "patient_fractions", c.patient_fractions);
    detail::maybe_get(*it, "seed", c.seed);
    if (it->find("patient_fractions") == it->end() &&
        c.site_sizes.size() != c.patient_fractions.size())
      c.patient_fractions.assign(c.site_sizes.size(), 0.5);
    cfg.cohort = std::move(c);
  }
  detail::maybe_get(obj, "sparsity_fraction", cfg.sparsity_fraction);
  detail::maybe_get(obj, "sweep", cfg.sweep);
  if (auto it = obj.find("svm_grid"); it != obj.end()) {
    detail::reject_unknown_keys(*it, {"c_values", "gamma_values"}, "svm_grid");
    detail::maybe_get(*it, "c_values", cfg.grid.c_values);
    detail::maybe_get(*it, "gamma_values", cfg.grid.gamma_values);
    try {
      validate_grid(cfg.grid);
    } catch (const Error& e) {
      throw ConfigError(std::string("svm_grid: ") + e.what());
    }
  }
  detail::maybe_get(obj, "folds_k", cfg.folds_k);
  detail::maybe_get(obj, "fold_seed", cfg.fold_seed);
  detail::maybe_get(obj, "max_rounds", cfg.max_rounds);
  detail::maybe_get(obj, "path_len", cfg.path_len);
  detail::maybe_get(obj, "lasso_tol", cfg.lasso_tol);
  detail::maybe_get(obj, "smo_tol", cfg.smo_tol);
  detail::maybe_get(obj, "smo_max_passes", cfg.smo_max_passes);
  if (auto it = obj.find("transport"); it != obj.end()) {
    detail::reject_unknown_keys(*it, {"host", "port", "expected_sites", "timeout_seconds"},
                                "transport");
    detail::maybe_get(*it, "host", cfg.transport.host);
    detail::maybe_get(*it, "port", cfg.transport.port);
    detail::maybe_get(*it, "expected_sites", cfg.transport.expected_sites);
    detail::maybe_get(*it, "timeout_seconds", cfg.transport.timeout_seconds);
  }
  detail::maybe_get(obj, "out_dir", cfg.out_dir);

  if (!(cfg.sparsity_fraction > 0.0 && cfg.sparsity_fraction < 1.0))
    throw ConfigError("sparsity_fraction must be in (0,1)");
  for (double f : cfg.sweep)
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("sweep fractions must be in (0,1)");
  if (cfg.max_rounds < 1) throw ConfigError("max_rounds must be >= 1");
  if (cfg.folds_k < 2) throw ConfigError("folds_k must be >= 2");
  return cfg;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(obj);
}

// ---------------------------------------------------------------------------
// Transcript: the ordered record of every round, the unit of determinism
// testing.

struct RoundRecord {
  int round = 0;
  std::vector<double> penalty; // broadcast for this round; weights are 1 - penalty
  std::vector<SiteReport> reports; // ordered by site_id
};

struct SiteSummary {
  std::string site_id;
  double round0_accuracy = 0.0;
  double final_accuracy = 0.0;

  double improvement() const { return final_accuracy - round0_accuracy; }
};

struct ExperimentTranscript {
  std::vector<RoundRecord> rounds;
  int terminate_round = -1;
  bool hit_round_cap = false;
  int n_features = 0;
  std::vector<SiteSummary> per_site;
  std::vector<int> union_per_round;
};

namespace detail {

inline void finalize_transcript(ExperimentTranscript& t) {
  t.per_site.clear();
  t.union_per_round.clear();
  if (t.rounds.empty()) return;
  for (const auto& rec : t.rounds) {
    std::set<int> involved;
    for (const auto& rep : rec.reports)
      involved.insert(rep.selected.indices.begin(), rep.selected.indices.end());
    t.union_per_round.push_back(static_cast<int>(involved.size()));
  }
  const auto& first = t.rounds.front().reports;
  const auto& last = t.rounds.back().reports;
  for (std::size_t s = 0; s < first.size(); ++s) {
    SiteSummary sum;
    sum.site_id = first[s].site_id;
    sum.round0_accuracy = first[s].metrics.accuracy;
    sum.final_accuracy = last[s].metrics.accuracy;
    t.per_site.push_back(std::move(sum));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Output files. Every float is written with 17 significant digits so
// reruns are byte-identical.

inline void write_transcript_jsonl(const ExperimentTranscript& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (const auto& rec : t.rounds) {
    out << "{\"type\":\"round\",\"round\":" << rec.round << ",\"penalty\":[";
    for (std::size_t j = 0; j < rec.penalty.size(); ++j) {
      if (j) out << ',';
      out << format_real(rec.penalty[j]);
    }
    out << "],\"sites\":[";
    for (std::size_t s = 0; s < rec.reports.size(); ++s) {
      const auto& rep = rec.reports[s];
      if (s) out << ',';
      out << "{\"site_id\":" << nlohmann::json(rep.site_id).dump() << ",\"selected\":[";
      for (std::size_t k = 0; k < rep.selected.indices.size(); ++k) {
        if (k) out << ',';
        out << rep.selected.indices[k];
      }
      out << "],\"accuracy\":" << format_real(rep.metrics.accuracy)
          << ",\"specificity\":" << format_real(rep.metrics.specificity)
          << ",\"sensitivity\":" << format_real(rep.metrics.sensitivity) << '}';
    }
    out << "]}\n";
  }
  out << "{\"type\":\"terminate\",\"round\":" << t.terminate_round << "}\n";
}

inline void write_metrics_csv(const ExperimentTranscript& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "round,site,accuracy,specificity,sensitivity\n";
  for (const auto& rec : t.rounds) {
    for (const auto& rep : rec.reports) {
      out << rec.round << ',' << rep.site_id << ',' << format_real(rep.metrics.accuracy) << ','
          << format_real(rep.metrics.specificity) << ',' << format_real(rep.metrics.sensitivity)
          << '\n';
    }
  }
}

/// Per-feature selection counts across sites, one column per round
/// (the involved-features table).
inline void write_feature_persistence_csv(const ExperimentTranscript& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "feature";
  for (const auto& rec : t.rounds) out << ",round_" << rec.round;
  out << '\n';
  for (int f = 0; f < t.n_features; ++f) {
    out << f;
    for (const auto& rec : t.rounds) {
      int count = 0;
      for (const auto& rep : rec.reports)
        if (rep.selected.contains(f)) ++count;
      out << ',' << count;
    }
    out << '\n';
  }
}

inline void write_summary_json(const ExperimentTranscript& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "{\"rounds\":" << t.rounds.size() << ",\"terminate_round\":" << t.terminate_round
      << ",\"hit_round_cap\":" << (t.hit_round_cap ? "true" : "false") << ",\"per_site\":[";
  for (std::size_t s = 0; s < t.per_site.size(); ++s) {
    const auto& site = t.per_site[s];
    if (s) out << ',';
    out << "{\"site_id\":" << nlohmann::json(site.site_id).dump()
        << ",\"round0_accuracy\":" << format_real(site.round0_accuracy)
        << ",\"final_accuracy\":" << format_real(site.final_accuracy)
        << ",\"improvement\":" << format_real(site.improvement()) << '}';
  }
  out << "],\"union_per_round\":[";
  for (std::size_t r = 0; r < t.union_per_round.size(); ++r) {
    if (r) out << ',';
    out << t.union_per_round[r];
  }
  out << "]}\n";
}

inline void write_outputs(const ExperimentTranscript& t, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  write_transcript_jsonl(t, (fs::path(out_dir) / "transcript.jsonl").string());
  write_metrics_csv(t, (fs::path(out_dir) / "metrics_per_round.csv").string());
  write_feature_persistence_csv(t, (fs::path(out_dir) / "feature_persistence.csv").string());
  write_summary_json(t, (fs::path(out_dir) / "summary.json").string());
}

// ---------------------------------------------------------------------------
// Protocol loops shared by the in-process and socket backends.

/// Algorithm 1 over handshaken connections: broadcast penalties, wait at
/// the barrier, aggregate, repeat until no site improves (or the round
/// cap trips).
inline ExperimentTranscript run_server_rounds(std::vector<Connection>& conns,
                                              const ExperimentConfig& cfg) {
  std::vector<SiteRegistry::Entry> entries;
  for (const auto& c : conns) entries.push_back({c.site_id, c.n_subjects});
  const int n_features = conns.front().n_features;
  ServerState state = make_server_state(make_registry(std::move(entries)), n_features);

  ExperimentTranscript transcript;
  transcript.n_features = n_features;
  std::vector<double> penalty(static_cast<std::size_t>(n_features), 1.0);
  const auto timeout = cfg.timeout();

  for (int round = 0; round < cfg.max_rounds; ++round) {
    for (auto& conn : conns) send_message(*conn.channel, WeightsMsg{round, penalty});
    std::vector<SiteReport> reports = round_barrier(conns, round, timeout);
    transcript.rounds.push_back({round, penalty, reports});
    const ServerDecision decision = server_step(state, reports);
    if (decision.terminate) {
      transcript.terminate_round = state.round;
      break;
    }
    penalty.assign(decision.penalty.factors.data(),
                   decision.penalty.factors.data() + decision.penalty.factors.size());
    log_line(LogLevel::info, "round " + std::to_string(round) + " complete, continuing");
  }
  if (transcript.terminate_round < 0) {
    transcript.hit_round_cap = true;
    transcript.terminate_round = state.round;
    log_line(LogLevel::warn, "round cap " + std::to_string(cfg.max_rounds) +
                                 " reached before natural termination");
  }
  for (auto& conn : conns) send_message(*conn.channel, TerminateMsg{transcript.terminate_round});
  detail::finalize_transcript(transcript);
  return transcript;
}

/// Algorithm 2 driver: hello, then answer every weights broadcast with a
/// report until the terminate message.
inline void run_site_loop(Channel& channel, SiteState& site, std::chrono::milliseconds timeout) {
  const int n_features = static_cast<int>(site.n_features());
  send_message(channel, HelloMsg{site.site_id, static_cast<int>(site.n_subjects()), n_features});
  while (true) {
    auto msg = recv_message(channel, timeout, n_features);
    if (!msg)
      throw TimeoutError("site '" + site.site_id + "': no broadcast within timeout");
    if (std::holds_alternative<TerminateMsg>(*msg)) break;
    const auto* weights = std::get_if<WeightsMsg>(&*msg);
    if (!weights)
      throw ProtocolError("site '" + site.site_id + "': unexpected message from server");
    if (weights->round != site.round)
      throw ProtocolError("site '" + site.site_id + "': got weights for round " +
                          std::to_string(weights->round) + ", expected " +
                          std::to_string(site.round));
    PenaltyVector penalty;
    penalty.factors = Eigen::Map<const Vector>(weights->penalty.data(),
                                               static_cast<Eigen::Index>(weights->penalty.size()));
    const SiteStepResult result = site_step(site, penalty);
    send_message(channel, ReportMsg{result.report});
  }
}

namespace detail {

inline void check_aligned_tables(const std::vector<SubjectTable>& tables) {
  if (tables.empty()) throw DataError("no site tables");
  for (std::size_t s = 1; s < tables.size(); ++s) {
    if (tables[s].n_features() != tables[0].n_features())
      throw DataError("site '" + tables[s].site_id + "' has " +
                      std::to_string(tables[s].n_features()) + " features, site '" +
                      tables[0].site_id + "' has " + std::to_string(tables[0].n_features()));
    if (tables[s].feature_names != tables[0].feature_names)
      throw DataError("feature names of site '" + tables[s].site_id +
                      "' do not match site '" + tables[0].site_id + "'");
    if (tables[s].site_id == tables[0].site_id)
      throw DataError("duplicate site id '" + tables[s].site_id + "'");
  }
}

}  // namespace detail

/// One experiment over in-process queues: a thread per site, the server
/// on the calling thread. Site threads run concurrently between
/// barriers; outputs depend only on config and seeds.
inline ExperimentTranscript run_simulate(const ExperimentConfig& cfg,
                                         const std::vector<SubjectTable>& tables) {
  detail::check_aligned_tables(tables);
  std::vector<SiteState> sites;
  for (const auto& t : tables) sites.push_back(make_site_state(t, cfg.site_config()));

  std::vector<std::unique_ptr<Channel>> server_ends, site_ends;
  for (std::size_t s = 0; s < sites.size(); ++s) {
    auto [server_end, site_end] = make_inproc_pair();
    server_ends.push_back(std::move(server_end));
    site_ends.push_back(std::move(site_end));
  }

  std::vector<std::exception_ptr> site_errors(sites.size());
  std::vector<std::thread> threads;
  const auto timeout = cfg.timeout();
  for (std::size_t s = 0; s < sites.size(); ++s) {
    threads.emplace_back([&, s] {
      try {
        run_site_loop(*site_ends[s], sites[s], timeout);
      } catch (...) {
        site_errors[s] = std::current_exception();
        site_ends[s]->close();
      }
    });
  }

  ExperimentTranscript transcript;
  std::exception_ptr server_error;
  try {
    std::vector<Connection> conns = handshake_sites(std::move(server_ends), timeout);
    transcript = run_server_rounds(conns, cfg);
  } catch (...) {
    server_error = std::current_exception();
    for (auto& ch : site_ends) ch->close();
  }
  for (auto& th : threads) th.join();
  for (auto& err : site_errors)
    if (err && !server_error) server_error = err;
  if (server_error) std::rethrow_exception(server_error);
  return transcript;
}

inline std::vector<SubjectTable> acquire_tables(const ExperimentConfig& cfg) {
  if (cfg.cohort && !cfg.data_paths.empty())
    throw ConfigError("give either cohort or data paths, not both");
  if (cfg.cohort) return generate_cohort(*cfg.cohort).tables;
  if (cfg.data_paths.empty())
    throw ConfigError("simulate needs a cohort config or data paths");
  std::vector<SubjectTable> tables;
  for (const auto& path : cfg.data_paths) tables.push_back(load_csv(path));
  return tables;
}

/// simulate mode: run and emit transcript + reports under out_dir.
inline ExperimentTranscript run_simulate_experiment(const ExperimentConfig& cfg) {
  ExperimentTranscript t = run_simulate(cfg, acquire_tables(cfg));
  write_outputs(t, cfg.out_dir);
  return t;
}

/// sweep mode: one simulate run per sparsity level, filed under
/// out_dir/sweep/<pct>/.
inline std::vector<ExperimentTranscript> run_sweep_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  if (cfg.sweep.empty()) throw ConfigError("sweep list is empty");
  std::vector<ExperimentTranscript> transcripts;
  const std::vector<SubjectTable> tables = acquire_tables(cfg);
  for (double fraction : cfg.sweep) {
    ExperimentConfig level_cfg = cfg;
    level_cfg.sparsity_fraction = fraction;
    const int pct = static_cast<int>(std::lround(fraction * 100.0));
    const std::string dir = (fs::path(cfg.out_dir) / "sweep" / std::to_string(pct)).string();
    log_line(LogLevel::info, "sweep level " + std::to_string(pct) + "%");
    ExperimentTranscript t = run_simulate(level_cfg, tables);
    write_outputs(t, dir);
    transcripts.push_back(std::move(t));
  }
  return transcripts;
}

/// server mode: accept the expected number of sites over TCP and
/// coordinate; emits the same outputs as simulate.
inline ExperimentTranscript run_server_experiment(const ExperimentConfig& cfg) {
  if (cfg.transport.expected_sites < 1)
    throw ConfigError("transport.expected_sites must be >= 1 in server mode");
  TcpListener listener(cfg.transport.host, cfg.transport.port);
  log_line(LogLevel::info, "listening on " + cfg.transport.host + ":" +
                               std::to_string(listener.port()));
  std::vector<std::unique_ptr<Channel>> channels;
  const auto timeout = cfg.timeout();
  for (int s = 0; s < cfg.transport.expected_sites; ++s)
    channels.push_back(listener.accept(timeout));
  std::vector<Connection> conns = handshake_sites(std::move(channels), timeout);
  ExperimentTranscript t = run_server_rounds(conns, cfg);
  write_outputs(t, cfg.out_dir);
  return t;
}

/// site mode: load one CSV, connect, and follow the protocol.
inline void run_site_experiment(const ExperimentConfig& cfg, const std::string& data_path) {
  SubjectTable table = load_csv(data_path);
  SiteState site = make_site_state(table, cfg.site_config());
  auto channel = tcp_connect(cfg.transport.host, cfg.transport.port, cfg.timeout());
  run_site_loop(*channel, site, cfg.timeout());
  channel->close();
  log_line(LogLevel::info, "site '" + site.site_id + "' finished after " +
                               std::to_string(site.round) + " rounds");
}

}  // namespace mswl

#pragma once

// Shared helpers for the integration-level suites.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <unistd.h>
#include <vector>

#include "mswl/runner.hpp"

namespace test_support {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag = "mswl") {
    path = std::filesystem::temp_directory_path() /
           (tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Full socket-mode experiment inside one process: a TCP server on an
/// ephemeral port, one client thread per site. Same protocol loops the
/// CLI server/site modes run.
inline mswl::ExperimentTranscript run_socket_mode(const mswl::ExperimentConfig& cfg,
                                                  const std::vector<mswl::SubjectTable>& tables) {
  using namespace mswl;
  TcpListener listener("127.0.0.1", 0);
  const int port = listener.port();
  const auto timeout = cfg.timeout();

  std::vector<SiteState> sites;
  for (const auto& t : tables) sites.push_back(make_site_state(t, cfg.site_config()));

  std::vector<std::exception_ptr> errors(sites.size());
  std::vector<std::thread> threads;
  for (std::size_t s = 0; s < sites.size(); ++s) {
    threads.emplace_back([&, s] {
      try {
        auto channel = tcp_connect("127.0.0.1", port, timeout);
        run_site_loop(*channel, sites[s], timeout);
        channel->close();
      } catch (...) {
        errors[s] = std::current_exception();
      }
    });
  }

  ExperimentTranscript transcript;
  std::exception_ptr server_error;
  try {
    std::vector<std::unique_ptr<Channel>> channels;
    for (std::size_t s = 0; s < sites.size(); ++s) channels.push_back(listener.accept(timeout));
    std::vector<Connection> conns = handshake_sites(std::move(channels), timeout);
    transcript = run_server_rounds(conns, cfg);
  } catch (...) {
    server_error = std::current_exception();
  }
  for (auto& th : threads) th.join();
  if (server_error) std::rethrow_exception(server_error);
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
  return transcript;
}

/// Small, fast experiment config over a two-site synthetic cohort.
inline mswl::ExperimentConfig tiny_config(std::uint64_t seed = 3) {
  mswl::ExperimentConfig cfg;
  mswl::CohortConfig cohort;
  cohort.site_sizes = {28, 36};
  cohort.patient_fractions = {0.5, 0.5};
  cohort.n_features = 12;
  cohort.planted_support = 3;
  cohort.effect_size = 1.0;
  cohort.seed = seed;
  cfg.cohort = cohort;
  cfg.sparsity_fraction = 0.25;
  cfg.grid.c_values = {0.5, 4.0};
  cfg.grid.gamma_values = {0.125, 1.0};
  cfg.folds_k = 4;
  cfg.max_rounds = 20;
  return cfg;
}

}  // namespace test_support

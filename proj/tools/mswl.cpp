#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "mswl/mswl.hpp"

namespace {

mswl::ExperimentConfig load_or_default(const std::string& config_path, const char* mode) {
  mswl::ExperimentConfig cfg;
  if (!config_path.empty()) cfg = mswl::load_config_file(config_path);
  if (!cfg.mode.empty() && cfg.mode != mode)
    throw mswl::ConfigError("config says mode '" + cfg.mode + "' but the '" + mode +
                            "' subcommand was invoked");
  if (!cfg.cohort && cfg.data_paths.empty() && std::string(mode) != "site" &&
      std::string(mode) != "server")
    cfg.cohort = mswl::CohortConfig{}; // default synthetic five-site cohort
  return cfg;
}

void print_summary(const mswl::ExperimentTranscript& t) {
  std::cout << "rounds: " << t.rounds.size() << " (terminate at round " << t.terminate_round
            << (t.hit_round_cap ? ", round cap hit" : "") << ")\n";
  for (const auto& s : t.per_site) {
    std::cout << "  " << s.site_id << ": accuracy " << mswl::format_real(s.round0_accuracy)
              << " -> " << mswl::format_real(s.final_accuracy) << " (improvement "
              << mswl::format_real(s.improvement()) << ")\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-site weighted LASSO runner"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_path;

  auto* simulate = app.add_subcommand("simulate", "run the full protocol in-process");
  simulate->add_option("--config", config_path, "experiment config (JSON)");
  simulate->add_option("--out", out_dir, "output directory override");

  auto* server = app.add_subcommand("server", "run the integration server over TCP");
  server->add_option("--config", config_path, "experiment config (JSON)");
  server->add_option("--out", out_dir, "output directory override");

  auto* site = app.add_subcommand("site", "run one site over TCP");
  site->add_option("--config", config_path, "experiment config (JSON)");
  site->add_option("--data", data_path, "site CSV file")->required();

  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort as CSV files");
  synth->add_option("--config", config_path, "experiment config (JSON)");
  synth->add_option("--out", out_dir, "output directory")->required();

  auto* sweep = app.add_subcommand("sweep", "run simulate across all sparsity levels");
  sweep->add_option("--config", config_path, "experiment config (JSON)");
  sweep->add_option("--out", out_dir, "output directory override");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) {
      auto cfg = load_or_default(config_path, "simulate");
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      print_summary(mswl::run_simulate_experiment(cfg));
      std::cout << "outputs in " << cfg.out_dir << "\n";
    } else if (server->parsed()) {
      auto cfg = load_or_default(config_path, "server");
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      print_summary(mswl::run_server_experiment(cfg));
      std::cout << "outputs in " << cfg.out_dir << "\n";
    } else if (site->parsed()) {
      auto cfg = load_or_default(config_path, "site");
      mswl::run_site_experiment(cfg, data_path);
    } else if (synth->parsed()) {
      auto cfg = load_or_default(config_path, "synth");
      const auto cohort = mswl::generate_cohort(cfg.cohort.value_or(mswl::CohortConfig{}));
      mswl::write_cohort(cohort, out_dir);
      std::cout << "wrote " << cohort.tables.size() << " site files to " << out_dir << "\n";
    } else if (sweep->parsed()) {
      auto cfg = load_or_default(config_path, "sweep");
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      const auto transcripts = mswl::run_sweep_experiment(cfg);
      std::cout << "completed " << transcripts.size() << " sweep levels under " << cfg.out_dir
                << "/sweep\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "mswl: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

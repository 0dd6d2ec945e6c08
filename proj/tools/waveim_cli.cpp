// waveim command-line driver: one subcommand per experiment, each reading a
// flat key=value config and writing report.json + CSVs under --out.
//
// Exit codes: 0 all checks pass, 1 a threshold check failed, 2 configuration
// error, 3 numerical failure.
#include <waveim/experiments.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::string seeds;
  int threads = 0;
  bool verbose = false;
};

void attach(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "flat key=value config file")->required();
  cmd->add_option("--out", opts.out_dir, "output directory (overrides output_dir)");
  cmd->add_option("--seeds", opts.seeds, "comma-separated seed list (overrides seeds)");
  cmd->add_option("--threads", opts.threads, "worker thread count (overrides threads)");
  cmd->add_flag("--verbose", opts.verbose, "print per-check results");
}

int run(const std::string& experiment, const CommonOpts& opts) {
  waveim::ExperimentConfig cfg;
  try {
    cfg = waveim::parse_config_file(opts.config_path);
    if (cfg.experiment != experiment)
      throw waveim::ConfigError("config: experiment='" + cfg.experiment +
                                "' does not match subcommand '" + experiment + "'");
    if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
    if (!opts.seeds.empty()) cfg.seeds = waveim::detail::split_list<std::uint64_t>(opts.seeds);
    if (opts.threads > 0) cfg.threads = opts.threads;
    cfg.validate();
  } catch (const waveim::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    const auto report = waveim::run_experiment(cfg);
    if (opts.verbose) {
      for (const auto& c : report.checks)
        std::cout << (c.passed ? "pass " : "FAIL ") << c.name << " value=" << c.value
                  << " threshold=" << c.threshold << '\n';
      std::cout << "wall_clock_s=" << report.wall_clock_s << '\n';
    }
    std::cout << (report.passed() ? "PASS" : "FAIL") << ' ' << cfg.experiment << " -> "
              << cfg.output_dir << "/report.json\n";
    return report.passed() ? 0 : 1;
  } catch (const waveim::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic inertial manifold verification experiments"};
  app.require_subcommand(1);

  static const std::vector<std::string> experiments = {
      "gap", "invariance", "tracking", "delta-convergence", "noise-stats", "attractor"};
  std::vector<CommonOpts> opts(experiments.size());
  for (std::size_t i = 0; i < experiments.size(); ++i)
    attach(app.add_subcommand(experiments[i], experiments[i] + " experiment"), opts[i]);

  CLI11_PARSE(app, argc, argv);

  for (std::size_t i = 0; i < experiments.size(); ++i)
    if (app.get_subcommand(experiments[i])->parsed()) return run(experiments[i], opts[i]);
  return 2;
}

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ppi/harness.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  std::string seed;
  int trials = -1;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CliOptions& opts) {
  cmd->add_option("--config", opts.config_path, "JSON config file");
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--seed", opts.seed, "master seed");
  cmd->add_option("--trials", opts.trials, "trial count override");
  cmd->add_option("--set", opts.overrides,
                  "config override, key=value (repeatable)");
}

ppi::ExperimentConfig build_config(const CliOptions& opts,
                                   const std::string& experiment) {
  ppi::ExperimentConfig cfg;
  if (!opts.config_path.empty())
    cfg = ppi::ExperimentConfig::from_json_file(opts.config_path);
  if (!experiment.empty()) cfg.set("experiment", experiment);
  if (!opts.seed.empty()) cfg.set("seed", opts.seed);
  if (opts.trials >= 0) cfg.set("trials", std::to_string(opts.trials));
  if (!opts.out_dir.empty()) cfg.set("out", opts.out_dir);
  for (const std::string& kv : opts.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got: " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.check();
  return cfg;
}

int run_experiment_cmd(const CliOptions& opts, const std::string& experiment) {
  ppi::ExperimentConfig cfg = build_config(opts, experiment);
  ppi::ResultsTable table = ppi::run_experiment(cfg);
  std::filesystem::create_directories(cfg.out_dir);
  std::string csv = cfg.out_dir + "/results.csv";
  ppi::emit_csv(table, csv);
  ppi::emit_plotdata(table, cfg.out_dir + "/plotdata");
  std::cout << "wrote " << csv << " (" << table.rows.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semi-supervised estimation experiments"};
  app.require_subcommand(1);

  const std::vector<std::string> experiments = {
      "synth-mean", "synth-linreg", "beam-align",
      "beam-align-nn", "mcppi-beam", "localize"};

  CliOptions opts;
  std::string chosen;
  for (const std::string& name : experiments) {
    CLI::App* cmd = app.add_subcommand(name, "run the " + name + " experiment");
    add_common(cmd, opts);
    cmd->callback([&chosen, name] { chosen = name; });
  }
  CLI::App* validate = app.add_subcommand("validate", "run the invariant suite");
  CLI::App* probe =
      app.add_subcommand("lambda-probe", "print lambda diagnostics");
  add_common(probe, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // usage / parse problems are config errors
  }

  try {
    if (validate->parsed()) {
      std::vector<std::string> failures = ppi::run_validation();
      if (failures.empty()) {
        std::cout << "all checks passed\n";
        return 0;
      }
      for (const std::string& f : failures)
        std::cout << "FAIL: " << f << "\n";
      return 1;
    }
    if (probe->parsed()) {
      ppi::ExperimentConfig cfg = build_config(opts, "");
      std::cout << ppi::lambda_probe(cfg);
      return 0;
    }
    return run_experiment_cmd(opts, chosen);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

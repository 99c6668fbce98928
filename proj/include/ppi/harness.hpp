#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ppi {

// Flat dotted-key configuration for every experiment. Unknown keys are
// rejected so typos fail fast.
struct ExperimentConfig {
  std::string experiment = "synth-mean";  // synth-mean, synth-linreg,
                                          // beam-align, beam-align-nn,
                                          // mcppi-beam, localize
  std::vector<std::string> schemes = {"ERM"};
  std::string sweep_key = "n";
  std::vector<double> sweep = {100};
  int trials = 300;
  std::uint64_t seed = 1;
  std::string out_dir = ".";

  // estimator knobs
  int K = 5;
  int B = 30;
  double gamma = 1.0;          // SS pseudo-label weight
  double lambda_override = -1; // in [0,1] fixes lambda; negative = estimate
  int var_subsample = 2000;

  // labeler ("constant", "ridge", "knn", "forest", "mlp")
  std::string labeler = "forest";
  int knn_k = 5;
  int forest_trees = 5;
  int forest_depth = 12;
  int forest_min_leaf = 1;

  // synthetic model
  int d = 2;
  double mu = 4.0;
  double sigma = 2.0;
  double r2 = 0.5;
  int n = 100;
  int N = 10000;

  // beam alignment
  int ny = 4;
  int nz = 4;
  int positions = 1000;
  int scatterers = 12;
  int env_L = 3;
  double reflection = 0.05;
  int ckm_L = 1;
  int ckm_epochs = 300;
  int landmarks = 64;
  double rbf_bandwidth = 0.03;
  double softmax_gamma = 1e-3;
  double power = 1e6;
  double noise_var = 1.0;
  double test_frac = 0.2;

  // iteratively trained schemes
  int meta_steps = 300;
  double eta_s = 0.05;
  double eta_t = 0.05;
  int batch_labeled = 32;
  int batch_unlabeled = 128;
  int lambda_refresh = 50;
  std::vector<int> student_hidden = {32, 32};

  // localization
  int ap_count = 8;
  double shadow_std = 4.0;
  int elm_hidden = 100;
  double elm_gamma = 1e-2;
  std::string rssi_csv;  // when set, loads this file instead of synthesizing

  static ExperimentConfig from_json_file(const std::string& path);
  // value syntax: numbers, strings, comma-separated lists
  void set(const std::string& key, const std::string& value);
  void check() const;  // throws std::invalid_argument on a bad config
};

struct ResultRow {
  std::string experiment;
  std::string scheme;
  double sweep = 0;
  std::string metric;
  double mean = 0;
  double stderr_ = 0;
  int trials = 0;
};

struct ResultsTable {
  std::vector<ResultRow> rows;
};

// Runs every (sweep value, trial) with a derived seed, fits every scheme,
// aggregates metrics to mean and standard error (sample std / sqrt(trials)).
// Trial failures become per-scheme "failures" rows, never silent drops.
ResultsTable run_experiment(const ExperimentConfig& cfg);

// header: experiment,scheme,sweep,metric,mean,stderr,trials; rows ordered by
// (scheme, sweep, metric); numbers formatted %.12g
void emit_csv(const ResultsTable& table, const std::string& path);
ResultsTable parse_results_csv(const std::string& path);

// One whitespace-separated file per (scheme, metric) named
// <scheme>_<metric>.dat with columns sweep mean stderr.
void emit_plotdata(const ResultsTable& table, const std::string& dir);

// Deterministic per-trial seed: hash of master seed, experiment name, sweep
// value and trial index.
std::uint64_t trial_seed(std::uint64_t master, const std::string& experiment,
                         double sweep, int trial);

// Human-readable lambda diagnostics for the config (first few trials).
std::string lambda_probe(const ExperimentConfig& cfg);

// Quick self-checks used by the validate subcommand; returns failure lines,
// empty on success.
std::vector<std::string> run_validation();

}  // namespace ppi

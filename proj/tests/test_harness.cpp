#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "ppi/harness.hpp"

using namespace ppi;

namespace {

ExperimentConfig small_mean_config() {
  ExperimentConfig cfg;
  cfg.experiment = "synth-mean";
  cfg.schemes = {"ERM"};
  cfg.sweep = {60};
  cfg.trials = 3;
  cfg.seed = 5;
  cfg.n = 60;
  cfg.N = 400;
  cfg.B = 10;
  cfg.forest_trees = 3;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool rows_equal(const ResultRow& a, const ResultRow& b) {
  return a.experiment == b.experiment && a.scheme == b.scheme &&
         a.sweep == b.sweep && a.metric == b.metric && a.mean == b.mean &&
         a.stderr_ == b.stderr_ && a.trials == b.trials;
}

}  // namespace

TEST_CASE("per-trial seeds are stable and distinct") {
  std::uint64_t s = trial_seed(7, "synth-mean", 100, 3);
  CHECK(s == trial_seed(7, "synth-mean", 100, 3));
  std::set<std::uint64_t> seen;
  for (int t = 0; t < 50; ++t) seen.insert(trial_seed(7, "synth-mean", 100, t));
  seen.insert(trial_seed(7, "synth-mean", 200, 0));
  seen.insert(trial_seed(7, "synth-linreg", 100, 0));
  seen.insert(trial_seed(8, "synth-mean", 100, 0));
  CHECK(seen.size() == 53);
}

TEST_CASE("config key setting") {
  ExperimentConfig cfg;
  cfg.set("experiment", "synth-linreg");
  CHECK(cfg.experiment == "synth-linreg");
  CHECK(cfg.d == 3);  // regression defaults follow the experiment
  CHECK(cfg.mu == 0.0);
  cfg.set("schemes", "ERM,CPPI,TunedCPPI");
  CHECK(cfg.schemes == std::vector<std::string>{"ERM", "CPPI", "TunedCPPI"});
  cfg.set("sweep.values", "50,100,200");
  CHECK(cfg.sweep == std::vector<double>{50, 100, 200});
  cfg.set("trials", "7");
  CHECK(cfg.trials == 7);
  cfg.set("estimator.gamma", "0.5");
  CHECK(cfg.gamma == 0.5);
  cfg.set("estimator.lambda", "0.25");
  CHECK(cfg.lambda_override == 0.25);
  cfg.set("labeler.kind", "ridge");
  CHECK(cfg.labeler == "ridge");
  cfg.set("beam.ny", "2");
  CHECK(cfg.ny == 2);
  cfg.set("meta.student_hidden", "16,8");
  CHECK(cfg.student_hidden == std::vector<int>{16, 8});
  CHECK_THROWS_AS(cfg.set("no.such.key", "1"), std::invalid_argument);
}

TEST_CASE("config validation") {
  ExperimentConfig cfg = small_mean_config();
  CHECK_NOTHROW(cfg.check());
  SUBCASE("unknown experiment") {
    cfg.experiment = "bogus";
    CHECK_THROWS_AS(cfg.check(), std::invalid_argument);
  }
  SUBCASE("unknown scheme") {
    cfg.schemes = {"ERM", "Magic"};
    CHECK_THROWS_AS(cfg.check(), std::invalid_argument);
  }
  SUBCASE("empty scheme list") {
    cfg.schemes.clear();
    CHECK_THROWS_AS(cfg.check(), std::invalid_argument);
  }
  SUBCASE("empty sweep grid") {
    cfg.sweep.clear();
    CHECK_THROWS_AS(cfg.check(), std::invalid_argument);
  }
  SUBCASE("bad trial count") {
    cfg.trials = 0;
    CHECK_THROWS_AS(cfg.check(), std::invalid_argument);
  }
  SUBCASE("lambda override above one") {
    cfg.lambda_override = 1.5;
    CHECK_THROWS_AS(cfg.check(), std::invalid_argument);
  }
  SUBCASE("bad sweep key") {
    cfg.sweep_key = "bogus";
    CHECK_THROWS_AS(cfg.check(), std::invalid_argument);
  }
}

TEST_CASE("config files") {
  std::string path = "config_test.json";
  {
    std::ofstream out(path);
    out << R"({"experiment": "synth-linreg", "schemes": ["ERM", "CPPI"],
               "sweep.values": [50, 100], "trials": 4, "seed": 9,
               "synth.sigma": 1.5, "synth.mu": 2.0})";
  }
  ExperimentConfig cfg = ExperimentConfig::from_json_file(path);
  CHECK(cfg.experiment == "synth-linreg");
  CHECK(cfg.schemes == std::vector<std::string>{"ERM", "CPPI"});
  CHECK(cfg.sweep == std::vector<double>{50, 100});
  CHECK(cfg.trials == 4);
  CHECK(cfg.seed == 9);
  CHECK(cfg.sigma == 1.5);
  // experiment defaults apply first, explicit keys win regardless of order
  CHECK(cfg.mu == 2.0);
  CHECK(cfg.d == 3);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(ExperimentConfig::from_json_file(path),
                  std::invalid_argument);
  {
    std::ofstream out(path);
    out << "not json";
  }
  CHECK_THROWS_AS(ExperimentConfig::from_json_file(path),
                  std::invalid_argument);
  std::filesystem::remove(path);
}

TEST_CASE("experiment runs") {
  ExperimentConfig cfg = small_mean_config();

  SUBCASE("row bookkeeping and determinism") {
    cfg.schemes = {"ERM", "CPPI"};
    cfg.sweep = {40, 60};
    ResultsTable a = run_experiment(cfg);
    ResultsTable b = run_experiment(cfg);
    REQUIRE(a.rows.size() == 4);  // scheme x sweep, one mse metric each
    REQUIRE(b.rows.size() == 4);
    for (std::size_t i = 0; i < a.rows.size(); ++i)
      CHECK(rows_equal(a.rows[i], b.rows[i]));
    // ordering: scheme, then sweep
    CHECK(a.rows[0].scheme == "CPPI");
    CHECK(a.rows[0].sweep == 40);
    CHECK(a.rows[1].sweep == 60);
    CHECK(a.rows[2].scheme == "ERM");
    for (const ResultRow& r : a.rows) {
      CHECK(r.experiment == "synth-mean");
      CHECK(r.metric == "mse");
      CHECK(r.trials == 3);
      CHECK(r.mean > 0);
      CHECK(r.stderr_ >= 0);
    }
  }
  SUBCASE("a single trial has zero standard error") {
    cfg.trials = 1;
    ResultsTable t = run_experiment(cfg);
    REQUIRE(t.rows.size() == 1);
    CHECK(t.rows[0].stderr_ == 0.0);
    CHECK(t.rows[0].trials == 1);
  }
  SUBCASE("pinning the interpolation weight to zero reproduces the base fit") {
    cfg.schemes = {"ERM", "TunedCPPI"};
    cfg.lambda_override = 0.0;
    ResultsTable t = run_experiment(cfg);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0].scheme == "ERM");
    CHECK(t.rows[1].scheme == "TunedCPPI");
    CHECK(t.rows[0].mean == doctest::Approx(t.rows[1].mean).epsilon(1e-12));
  }
  SUBCASE("invalid configs are rejected before any work") {
    cfg.trials = 0;
    CHECK_THROWS_AS(run_experiment(cfg), std::invalid_argument);
  }
}

TEST_CASE("results file format") {
  ResultsTable t;
  t.rows.push_back({"synth-mean", "ERM", 100, "mse", 0.0383, 0.00125, 300});
  t.rows.push_back(
      {"synth-mean", "TunedCPPI", 100, "mse", 1.0 / 3.0, 1e-300, 300});
  std::string path = "results_test.csv";

  SUBCASE("exact bytes and parse-back") {
    emit_csv(t, path);
    CHECK(slurp(path) ==
          "experiment,scheme,sweep,metric,mean,stderr,trials\n"
          "synth-mean,ERM,100,mse,0.0383,0.00125,300\n"
          "synth-mean,TunedCPPI,100,mse,0.333333333333,1e-300,300\n");
    ResultsTable back = parse_results_csv(path);
    REQUIRE(back.rows.size() == 2);
    CHECK(back.rows[0].mean == 0.0383);
    CHECK(back.rows[1].stderr_ == 1e-300);
    CHECK(back.rows[1].scheme == "TunedCPPI");
    // emitting the parsed table reproduces the file byte for byte
    std::string again = path + ".2";
    emit_csv(back, again);
    CHECK(slurp(again) == slurp(path));
    std::filesystem::remove(again);
  }
  SUBCASE("empty table writes only the header") {
    emit_csv(ResultsTable{}, path);
    CHECK(slurp(path) == "experiment,scheme,sweep,metric,mean,stderr,trials\n");
    CHECK(parse_results_csv(path).rows.empty());
  }
  SUBCASE("corrupt files are rejected") {
    {
      std::ofstream out(path);
      out << "wrong,header\n";
    }
    CHECK_THROWS_AS(parse_results_csv(path), std::runtime_error);
    {
      std::ofstream out(path);
      out << "experiment,scheme,sweep,metric,mean,stderr,trials\n"
          << "too,few,fields\n";
    }
    CHECK_THROWS_AS(parse_results_csv(path), std::runtime_error);
  }
  std::filesystem::remove(path);
}

TEST_CASE("plot data files") {
  ResultsTable t;
  t.rows.push_back({"synth-mean", "ERM", 50, "mse", 0.08, 0.002, 10});
  t.rows.push_back({"synth-mean", "ERM", 100, "mse", 0.04, 0.001, 10});
  t.rows.push_back({"synth-mean", "CPPI", 50, "mse", 0.06, 0.003, 10});
  std::string dir = "plotdata_test";
  emit_plotdata(t, dir);
  CHECK(slurp(dir + "/ERM_mse.dat") == "50 0.08 0.002\n100 0.04 0.001\n");
  CHECK(slurp(dir + "/CPPI_mse.dat") == "50 0.06 0.003\n");
  std::filesystem::remove_all(dir);
}

TEST_CASE("lambda diagnostics") {
  ExperimentConfig cfg = small_mean_config();
  cfg.schemes = {"TunedCPPI"};
  cfg.trials = 2;
  std::string probe = lambda_probe(cfg);
  CHECK(probe.find("n=60") != std::string::npos);
  CHECK(probe.find("trial 0: lambda_hat=") != std::string::npos);
  CHECK(probe.find("trial 1: lambda_hat=") != std::string::npos);
  CHECK(lambda_probe(cfg) == probe);

  ExperimentConfig bad = cfg;
  bad.experiment = "mcppi-beam";
  bad.sweep_key = "n";
  CHECK_THROWS_AS(lambda_probe(bad), std::invalid_argument);
}

TEST_CASE("built-in validation passes") {
  std::vector<std::string> failures = run_validation();
  for (const std::string& f : failures) MESSAGE(f);
  CHECK(failures.empty());
}

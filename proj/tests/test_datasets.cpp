#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "ppi/datasets.hpp"

using namespace ppi;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void check_partition(const FoldAssignment& f, int n) {
  CHECK(f.n() == n);
  std::set<int> seen;
  int min_size = n, max_size = 0;
  for (int k = 0; k < f.K; ++k) {
    int sz = static_cast<int>(f.members[k].size());
    min_size = std::min(min_size, sz);
    max_size = std::max(max_size, sz);
    for (int i : f.members[k]) {
      CHECK(f.fold_of[i] == k);
      CHECK(seen.insert(i).second);  // disjoint
    }
  }
  CHECK(static_cast<int>(seen.size()) == n);  // union covers everything
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == n - 1);
  CHECK(max_size - min_size <= 1);
}

}  // namespace

TEST_CASE("make_folds partitions with near-equal sizes") {
  check_partition(make_folds(4, 2, 7), 4);

  FoldAssignment f = make_folds(5, 2, 7);
  check_partition(f, 5);
  std::multiset<std::size_t> sizes{f.members[0].size(), f.members[1].size()};
  CHECK(sizes == std::multiset<std::size_t>{2, 3});

  FoldAssignment g = make_folds(300, 5, 123);
  check_partition(g, 300);
  for (int k = 0; k < 5; ++k) CHECK(g.members[k].size() == 60);

  for (std::uint64_t s = 0; s < 20; ++s)
    check_partition(make_folds(17 + static_cast<int>(s), 3, s),
                    17 + static_cast<int>(s));
}

TEST_CASE("make_folds rejects bad K and is deterministic") {
  CHECK_THROWS_AS(make_folds(10, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(make_folds(10, 11, 0), std::invalid_argument);

  FoldAssignment a = make_folds(31, 4, 99), b = make_folds(31, 4, 99);
  CHECK(a.fold_of == b.fold_of);
  FoldAssignment c = make_folds(31, 4, 100);
  CHECK(a.fold_of != c.fold_of);
}

TEST_CASE("fold complement covers everything outside the fold") {
  FoldAssignment f = make_folds(23, 4, 5);
  for (int k = 0; k < 4; ++k) {
    std::vector<int> comp = f.complement(k);
    CHECK(comp.size() + f.members[k].size() == 23);
    for (int i : comp) CHECK(f.fold_of[i] != k);
  }
}

TEST_CASE("gen_synthetic with R=0 decouples labels from inputs") {
  SynthParams p;
  p.d = 2;
  p.R = 0.0;
  p.sigma = 2.0;
  p.mu = 4.0;
  p.seed = 11;
  int n = 200000;
  auto [lab, unl] = gen_synthetic(p, n, 10);
  CHECK(synth_beta(p).norm() == 0.0);

  Eigen::VectorXd y = lab.labels.col(0);
  double my = y.mean();
  for (int j = 0; j < 2; ++j) {
    Eigen::VectorXd x = lab.inputs.col(j);
    double corr = ((x.array() - x.mean()) * (y.array() - my)).mean() /
                  (std::sqrt((x.array() - x.mean()).square().mean()) *
                   std::sqrt((y.array() - my).square().mean()));
    CHECK(std::abs(corr) < 0.01);
  }
  double var_y = (y.array() - my).square().mean();
  CHECK(var_y == doctest::Approx(p.sigma * p.sigma).epsilon(0.02));
}

TEST_CASE("gen_synthetic moments match the generating model") {
  SynthParams p;
  p.d = 2;
  p.R = 0.5;  // R^2 = 0.25
  p.sigma = 2.0;
  p.mu = 4.0;
  p.seed = 3;
  int n = 1000000;
  auto [lab, unl] = gen_synthetic(p, n, 10);

  Eigen::VectorXd beta = synth_beta(p);
  CHECK(beta.size() == 2);
  CHECK(beta(0) == doctest::Approx(p.R * p.sigma / std::sqrt(2.0)));
  CHECK(beta(0) == beta(1));

  Eigen::VectorXd y = lab.labels.col(0);
  double my = y.mean();
  CHECK(std::abs(my - p.mu) < 5.0 * p.sigma / std::sqrt(double(n)));
  double var_y = (y.array() - my).square().mean();
  CHECK(var_y == doctest::Approx(p.sigma * p.sigma).epsilon(0.02));

  // explained-variance fraction Var(X^T beta)/Var(Y) = R^2 at d=2
  Eigen::VectorXd xb = lab.inputs * beta;
  double var_xb = (xb.array() - xb.mean()).square().mean();
  CHECK(var_xb / var_y == doctest::Approx(0.25).epsilon(0.04));
}

TEST_CASE("gen_synthetic is deterministic and shapes are right") {
  SynthParams p;
  p.seed = 42;
  auto [lab1, unl1] = gen_synthetic(p, 50, 70);
  auto [lab2, unl2] = gen_synthetic(p, 50, 70);
  CHECK(lab1.inputs == lab2.inputs);
  CHECK(lab1.labels == lab2.labels);
  CHECK(unl1.inputs == unl2.inputs);
  CHECK(lab1.n() == 50);
  CHECK(lab1.dim() == 2);
  CHECK(lab1.label_dim() == 1);
  CHECK(unl1.n() == 70);

  p.seed = 43;
  auto [lab3, unl3] = gen_synthetic(p, 50, 70);
  CHECK(lab1.inputs != lab3.inputs);
}

TEST_CASE("dataset subset keeps rows aligned") {
  LabeledDataset d;
  d.inputs.resize(4, 2);
  d.inputs << 1, 2, 3, 4, 5, 6, 7, 8;
  d.labels.resize(4, 1);
  d.labels << 10, 20, 30, 40;
  LabeledDataset s = d.subset({3, 1});
  CHECK(s.n() == 2);
  CHECK(s.inputs(0, 0) == 7);
  CHECK(s.labels(0, 0) == 40);
  CHECK(s.inputs(1, 1) == 4);
  CHECK(s.labels(1, 0) == 20);
}

TEST_CASE("load_rssi_csv filters and preserves sentinels") {
  std::string path = temp_path("ppi_rssi_fixture.csv");
  {
    std::ofstream out(path);
    out << "WAP001,WAP002,WAP003,WAP004,LONGITUDE,LATITUDE,FLOOR,BUILDINGID\n";
    out << "-50,-60,100,-70,1.5,2.5,1,0\n";
    out << "-51,-61,-71,-81,3.5,4.5,2,0\n";
    out << "-52,100,-72,-82,5.5,6.5,1,0\n";
  }
  std::vector<RssiRecord> all = load_rssi_csv(path);
  CHECK(all.size() == 3);
  CHECK(all[0].rssi.size() == 4);
  CHECK(all[0].rssi(2) == kRssiNotDetected);
  CHECK(all[2].rssi(1) == kRssiNotDetected);
  CHECK(all[1].position(0) == doctest::Approx(3.5));
  CHECK(all[1].position(1) == doctest::Approx(4.5));

  std::vector<RssiRecord> floor1 = load_rssi_csv(path, {}, 1);
  CHECK(floor1.size() == 2);
  CHECK(floor1[0].position(0) == doctest::Approx(1.5));
  CHECK(floor1[1].position(0) == doctest::Approx(5.5));

  std::remove(path.c_str());
}

TEST_CASE("load_rssi_csv reports schema and cell errors") {
  std::string path = temp_path("ppi_rssi_bad.csv");
  {
    std::ofstream out(path);
    out << "WAP001,WAP002,LATITUDE,FLOOR,BUILDINGID\n";  // no LONGITUDE
    out << "-50,-60,2.5,1,0\n";
  }
  CHECK_THROWS_AS(load_rssi_csv(path), std::runtime_error);

  {
    std::ofstream out(path);
    out << "WAP001,WAP002,LONGITUDE,LATITUDE,FLOOR,BUILDINGID\n";
    out << "-50,oops,1.5,2.5,1,0\n";
  }
  bool threw = false;
  try {
    load_rssi_csv(path);
  } catch (const std::runtime_error& e) {
    threw = true;
    CHECK(std::string(e.what()).find("2") != std::string::npos);  // line no.
  }
  CHECK(threw);
  std::remove(path.c_str());
}

TEST_CASE("rssi csv round-trip") {
  std::vector<RssiRecord> recs(2);
  recs[0].rssi = Eigen::Vector3d(-40, 100, -60);
  recs[0].position = {10.25, -3.5};
  recs[0].floor = 1;
  recs[1].rssi = Eigen::Vector3d(-41, -51, -61);
  recs[1].position = {11.0, -4.0};
  recs[1].floor = 2;

  std::string path = temp_path("ppi_rssi_rt.csv");
  write_rssi_csv(path, recs);
  std::vector<RssiRecord> back = load_rssi_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].rssi == recs[0].rssi);
  CHECK(back[1].position == recs[1].position);
  CHECK(back[1].floor == 2);
  std::remove(path.c_str());
}

TEST_CASE("gen_synthetic_rssi follows the path-loss formula") {
  RssiSynthConfig cfg;
  cfg.m = 3;
  cfg.shadow_std = 0.0;
  cfg.seed = 9;
  RssiSynthData data = gen_synthetic_rssi(cfg, 20, 5);
  CHECK(data.labeled.n() == 20);
  CHECK(data.labeled.dim() == 3);
  CHECK(data.labeled.label_dim() == 2);
  CHECK(data.unlabeled.n() == 5);
  CHECK(data.ap_positions.rows() == 3);

  // with zero shadowing every reading reproduces the deterministic formula
  for (int i = 0; i < data.labeled.n(); ++i) {
    Eigen::Vector2d pos = data.labeled.labels.row(i);
    for (int j = 0; j < cfg.m; ++j) {
      double d = (pos.transpose() - data.ap_positions.row(j)).norm();
      d = std::max(d, cfg.min_distance);
      double expect = -cfg.pl0 - 10.0 * cfg.alpha * std::log10(d);
      CHECK(data.labeled.inputs(i, j) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("noise-free rssi positions recoverable by trilateration") {
  RssiSynthConfig cfg;
  cfg.m = 4;
  cfg.shadow_std = 0.0;
  cfg.seed = 21;
  RssiSynthData data = gen_synthetic_rssi(cfg, 10, 1);

  for (int i = 0; i < data.labeled.n(); ++i) {
    // invert the path-loss law to distances, then solve the linearized
    // circle-difference system
    Eigen::VectorXd dist(cfg.m);
    for (int j = 0; j < cfg.m; ++j)
      dist(j) = std::pow(
          10.0, (-cfg.pl0 - data.labeled.inputs(i, j)) / (10.0 * cfg.alpha));
    Eigen::MatrixXd A(cfg.m - 1, 2);
    Eigen::VectorXd b(cfg.m - 1);
    Eigen::RowVector2d a0 = data.ap_positions.row(0);
    for (int j = 1; j < cfg.m; ++j) {
      Eigen::RowVector2d aj = data.ap_positions.row(j);
      A.row(j - 1) = 2.0 * (aj - a0);
      b(j - 1) = dist(0) * dist(0) - dist(j) * dist(j) +
                 aj.squaredNorm() - a0.squaredNorm();
    }
    Eigen::Vector2d sol = A.colPivHouseholderQr().solve(b);
    Eigen::Vector2d truth = data.labeled.labels.row(i);
    CHECK((sol - truth).norm() < 1e-6);
  }
}

TEST_CASE("gen_synthetic_rssi is deterministic") {
  RssiSynthConfig cfg;
  cfg.seed = 33;
  RssiSynthData a = gen_synthetic_rssi(cfg, 15, 25);
  RssiSynthData b = gen_synthetic_rssi(cfg, 15, 25);
  CHECK(a.labeled.inputs == b.labeled.inputs);
  CHECK(a.labeled.labels == b.labeled.labels);
  CHECK(a.unlabeled.inputs == b.unlabeled.inputs);
  CHECK(a.ap_positions == b.ap_positions);
}

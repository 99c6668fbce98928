#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "ppi/datasets.hpp"
#include "ppi/estimators.hpp"
#include "ppi/labelers.hpp"
#include "ppi/losses.hpp"
#include "ppi/tuning.hpp"

using namespace ppi;

namespace {

Eigen::VectorXd randn(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> g;
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

LabelerPtr constant_labeler(double c) {
  LabeledDataset d;
  d.inputs = Eigen::MatrixXd::Zero(1, 1);
  d.labels = Eigen::MatrixXd::Constant(1, 1, c);
  LabelerSpec spec;
  spec.kind = LabelerSpec::Kind::ConstantMean;
  return fit(spec, d);
}

// predicts the population regression function of the synthetic model
class OracleLabeler : public Labeler {
 public:
  explicit OracleLabeler(const SynthParams& p) : mu_(p.mu), beta_(synth_beta(p)) {}
  Eigen::VectorXd predict_raw(const Eigen::VectorXd& x) const override {
    Eigen::VectorXd out(1);
    out << mu_ + beta_.dot(x);
    return out;
  }
  int raw_dim() const override { return 1; }

 private:
  double mu_;
  Eigen::VectorXd beta_;
};

}  // namespace

TEST_CASE("hessian estimate") {
  SUBCASE("mean estimation is constant curvature 2") {
    LabeledDataset d;
    d.inputs = Eigen::MatrixXd::Random(7, 1);
    d.labels = Eigen::MatrixXd::Random(7, 1);
    Eigen::VectorXd theta(1);
    theta << 0.3;
    Eigen::MatrixXd H = estimate_hessian(mean_estimation_model(), theta, d);
    CHECK(H.rows() == 1);
    CHECK(H(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
  }
  SUBCASE("linear regression matches the second-moment oracle and FD") {
    std::mt19937_64 rng(3);
    LossModel m = linear_regression_model(3);
    LabeledDataset d;
    d.inputs.resize(12, 3);
    d.labels.resize(12, 1);
    for (int i = 0; i < 12; ++i) {
      d.inputs.row(i) = randn(rng, 3);
      d.labels(i, 0) = randn(rng, 1)(0);
    }
    Eigen::VectorXd theta = randn(rng, 3);
    Eigen::MatrixXd H = estimate_hessian(m, theta, d);
    Eigen::MatrixXd oracle =
        2.0 * d.inputs.transpose() * d.inputs / d.n();
    CHECK((H - oracle).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((H - H.transpose()).cwiseAbs().maxCoeff() < 1e-12);

    Objective erm = erm_objective(m, d);
    double h = 1e-5;
    for (int j = 0; j < 3; ++j) {
      Eigen::VectorXd tp = theta, tm = theta;
      tp(j) += h;
      tm(j) -= h;
      Eigen::VectorXd fd = (erm.grad(tp) - erm.grad(tm)) / (2 * h);
      CHECK((H.col(j) - fd).cwiseAbs().maxCoeff() < 1e-3);
    }
  }
}

TEST_CASE("variance estimate at the averaged prediction") {
  LossModel m = mean_estimation_model();
  UnlabeledDataset unl;
  unl.inputs = Eigen::MatrixXd::Random(10, 1);
  Eigen::VectorXd theta(1);
  theta << 0.5;

  SUBCASE("identical constant models have zero variance") {
    std::vector<BootstrapModel> boot;
    for (int b = 0; b < 4; ++b)
      boot.push_back({constant_labeler(1.2), {0, 1}});
    Eigen::MatrixXd V = estimate_var_fbar(boot, theta, unl, m);
    CHECK(V.cwiseAbs().maxCoeff() < 1e-14);
  }

  SUBCASE("two-point hand computation, symmetry, PSD") {
    // two runs with different constants: fbar = midpoint everywhere, but the
    // two unlabeled points see the same fbar, so variance is still zero for
    // mean estimation; use a ridge model fitted on distinct data instead
    std::mt19937_64 rng(4);
    LabelerSpec spec;
    spec.kind = LabelerSpec::Kind::Ridge;
    std::vector<BootstrapModel> boot;
    for (int b = 0; b < 3; ++b) {
      LabeledDataset train;
      train.inputs = Eigen::MatrixXd::Random(6, 1);
      train.labels = 1.5 * train.inputs +
                     0.3 * Eigen::MatrixXd::Random(6, 1);
      boot.push_back({fit(spec, train), {0, 1}});
    }
    UnlabeledDataset two;
    two.inputs.resize(2, 1);
    two.inputs << -1.0, 2.0;
    Eigen::MatrixXd V = estimate_var_fbar(boot, theta, two, m);

    // direct recomputation: average predictions, gradients, 2-point cov
    Eigen::Vector2d fbar = Eigen::Vector2d::Zero();
    for (const auto& b : boot)
      for (int i = 0; i < 2; ++i)
        fbar(i) += b.model->predict(two.inputs.row(i).transpose())(0) / 3.0;
    Eigen::Vector2d g;
    for (int i = 0; i < 2; ++i) g(i) = -2.0 * (fbar(i) - theta(0));
    double mean_g = g.mean();
    double expect = ((g(0) - mean_g) * (g(0) - mean_g) +
                     (g(1) - mean_g) * (g(1) - mean_g)) /
                    2.0;
    CHECK(V(0, 0) == doctest::Approx(expect).epsilon(1e-12));
    CHECK((V - V.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(V);
    CHECK(es.eigenvalues().minCoeff() > -1e-9);
  }
}

TEST_CASE("cross-covariance estimate") {
  LossModel m = mean_estimation_model();
  std::mt19937_64 rng(7);
  LabeledDataset lab;
  lab.inputs.resize(8, 1);
  lab.labels.resize(8, 1);
  for (int i = 0; i < 8; ++i) {
    lab.inputs(i, 0) = i;  // distinct inputs
    lab.labels(i, 0) = randn(rng, 1)(0);
  }
  Eigen::VectorXd theta(1);
  theta << 0.1;

  SUBCASE("perfect predictor gives the gradient auto-covariance") {
    LabelerSpec spec;
    spec.kind = LabelerSpec::Kind::Knn;
    spec.knn_k = 1;
    LabelerPtr exact = fit(spec, lab);  // reproduces every training label
    std::vector<BootstrapModel> boot;
    boot.push_back({exact, {0, 1, 2, 3}});
    boot.push_back({exact, {2, 3, 4, 5}});
    Eigen::MatrixXd C = estimate_crosscov(boot, theta, lab, m);

    // pooled held-out pairs have identical coordinates, so the cross-cov is
    // the centered second moment of the true-label gradients on that pool
    std::vector<int> pool{4, 5, 6, 7, 0, 1, 6, 7};
    double mean_g = 0;
    for (int i : pool) mean_g += -2.0 * (lab.labels(i, 0) - theta(0)) / 8.0;
    double expect = 0;
    for (int i : pool) {
      double g = -2.0 * (lab.labels(i, 0) - theta(0));
      expect += (g - mean_g) * (g - mean_g) / 8.0;
    }
    CHECK(C(0, 0) == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("constant predictor makes the second coordinate constant") {
    std::vector<BootstrapModel> boot;
    boot.push_back({constant_labeler(0.7), {0, 1, 2, 3}});
    boot.push_back({constant_labeler(0.7), {4, 5, 6, 7}});
    Eigen::MatrixXd C = estimate_crosscov(boot, theta, lab, m);
    CHECK(C.cwiseAbs().maxCoeff() < 1e-14);
  }

  SUBCASE("all indices trained leaves an empty pool") {
    std::vector<BootstrapModel> boot;
    boot.push_back({constant_labeler(0.7), {0, 1, 2, 3, 4, 5, 6, 7}});
    CHECK_THROWS_AS(estimate_crosscov(boot, theta, lab, m),
                    std::runtime_error);
  }
}

TEST_CASE("lambda plug-in formula") {
  Eigen::MatrixXd H(1, 1), V(1, 1), C(1, 1);
  H << 2;
  V << 1;

  SUBCASE("zero numerator") {
    C << 0;
    auto [lam, clipped] = lambda_hat(H, V, C, 10, 1e9);
    CHECK(lam == 0.0);
    CHECK(!clipped);
  }
  SUBCASE("scalar hand computation hits one unclipped") {
    C << 1;
    auto [lam, clipped] = lambda_hat(H, V, C, 10, 1e12);
    CHECK(lam == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(!clipped);
  }
  SUBCASE("raw above one is clipped") {
    C << 1.7;
    auto [lam, clipped] = lambda_hat(H, V, C, 10, 1e12);
    CHECK(lam == 1.0);
    CHECK(clipped);
  }
  SUBCASE("vanishing denominator") {
    V << 0;
    C << 1;
    auto [lam, clipped] = lambda_hat(H, V, C, 10, 100);
    CHECK(lam == 0.0);
    CHECK(!clipped);
  }
  SUBCASE("joint scaling of V and C cancels") {
    V << 0.8;
    C << 0.3;
    double base = lambda_hat(H, V, C, 20, 200).first;
    double scaled = lambda_hat(H, 3.7 * V, 3.7 * C, 20, 200).first;
    CHECK(base == doctest::Approx(scaled).epsilon(1e-12));
  }
}

TEST_CASE("mean-estimation shortcut") {
  std::mt19937_64 rng(9);
  int n = 40;
  LabeledDataset lab;
  lab.inputs = Eigen::MatrixXd::Zero(n, 1);
  lab.labels.resize(n, 1);
  Eigen::VectorXd fbar(n);
  for (int i = 0; i < n; ++i) {
    fbar(i) = randn(rng, 1)(0);
    lab.labels(i, 0) = 0.6 * fbar(i) + 0.4 * randn(rng, 1)(0);
  }
  double r = 0.05;

  SUBCASE("independent predictions give zero") {
    LabeledDataset ind = lab;
    for (int i = 0; i < n; ++i) ind.labels(i, 0) = (i % 2) ? 1.0 : -1.0;
    Eigen::VectorXd f2(n);
    for (int i = 0; i < n; ++i) f2(i) = (i < n / 2) ? 1.0 : -1.0;
    CHECK(lambda_hat_mean(ind, f2, r) == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("perfect predictions at r=0 give one") {
    CHECK(lambda_hat_mean(lab, lab.labels.col(0), 0.0) == 1.0);
  }
  SUBCASE("general formula agrees with the matrix plug-in") {
    double my = lab.labels.col(0).mean(), mf = fbar.mean();
    double cov = 0, var = 0;
    for (int i = 0; i < n; ++i) {
      cov += (lab.labels(i, 0) - my) * (fbar(i) - mf) / n;
      var += (fbar(i) - mf) * (fbar(i) - mf) / n;
    }
    Eigen::MatrixXd H(1, 1), V(1, 1), C(1, 1);
    H << 2;
    V << 4 * var;
    C << 4 * cov;
    double N = n / r;
    CHECK(lambda_hat(H, V, C, n, N).first ==
          doctest::Approx(lambda_hat_mean(lab, fbar, r)).epsilon(1e-12));
  }
}

TEST_CASE("tuned cppi fit: degenerate, strong, deterministic") {
  SynthParams p;
  p.d = 2;
  p.mu = 4.0;
  p.sigma = 2.0;
  TunedCppiOptions opts;
  opts.K = 5;
  opts.B = 30;
  opts.seed = 77;
  LossModel m = mean_estimation_model();

  SUBCASE("constant labelers on R=0 data stay at the ERM mean") {
    p.R = 0.0;
    p.seed = 5;
    auto [lab, unl] = gen_synthetic(p, 60, 600);
    LabelerSpec spec;
    spec.kind = LabelerSpec::Kind::ConstantMean;
    TunedCppiResult res = tuned_cppi_fit(m, lab, unl, spec, opts);
    CHECK(res.tuning.lambda_hat <= 0.1);
    double erm = lab.labels.col(0).mean();
    CHECK(res.theta(0) == doctest::Approx(erm).epsilon(1e-6));
  }

  SUBCASE("oracle labelers on strongly explained data want high lambda") {
    p.R = std::sqrt(0.75);
    p.seed = 6;
    auto [lab, unl] = gen_synthetic(p, 50, 5000);
    auto oracle = std::make_shared<OracleLabeler>(p);
    TunedCppiResult res = tuned_cppi_fit_fn(
        m, lab, unl,
        [&](const std::vector<int>&, std::uint64_t) { return oracle; }, opts);
    CHECK(res.tuning.lambda_hat > 0.8);
  }

  SUBCASE("same seed reproduces theta and lambda exactly") {
    p.R = 0.5;
    p.seed = 7;
    auto [lab, unl] = gen_synthetic(p, 40, 400);
    LabelerSpec spec;
    spec.kind = LabelerSpec::Kind::ForestLite;
    spec.forest_trees = 10;
    TunedCppiResult a = tuned_cppi_fit(m, lab, unl, spec, opts);
    TunedCppiResult b = tuned_cppi_fit(m, lab, unl, spec, opts);
    CHECK(a.theta == b.theta);
    CHECK(a.tuning.lambda_hat == b.tuning.lambda_hat);
    CHECK(a.tuning.lambda_hat >= 0.0);
    CHECK(a.tuning.lambda_hat <= 1.0);
    // small problems retain the dense diagnostics
    CHECK(a.tuning.hessian_hat.rows() == 1);
    CHECK(a.tuning.var_fbar_hat.rows() == 1);
    CHECK(a.tuning.crosscov_hat.rows() == 1);
    CHECK(a.tuning.r == doctest::Approx(0.1));
  }
}

TEST_CASE("lambda estimate tracks the grid-search optimum") {
  // mean estimation: theta_CP(lambda) = ybar + lambda (f_unl - f_held), so
  // the Monte Carlo MSE over fresh draws is evaluable on a lambda grid
  SynthParams p;
  p.d = 2;
  p.mu = 4.0;
  p.sigma = 2.0;
  p.R = std::sqrt(0.75);
  int n = 40, N = 800;
  LossModel m = mean_estimation_model();
  LabelerSpec spec;
  spec.kind = LabelerSpec::Kind::Ridge;

  auto theta_parts = [&](std::uint64_t seed, double& ybar, double& shift) {
    p.seed = seed;
    auto [lab, unl] = gen_synthetic(p, n, N);
    FoldAssignment folds = make_folds(n, 5, seed + 1);
    std::vector<LabelerPtr> models = train_fold_models(lab, folds, spec);
    ybar = lab.labels.col(0).mean();
    double f_unl = 0, f_held = 0;
    for (int k = 0; k < 5; ++k) {
      for (int i = 0; i < N; ++i)
        f_unl += models[k]->predict(unl.inputs.row(i).transpose())(0) /
                 (5.0 * N);
      for (int i : folds.members[k])
        f_held +=
            models[k]->predict(lab.inputs.row(i).transpose())(0) / n;
    }
    shift = f_unl - f_held;
  };

  int grid_trials = 400;
  Eigen::MatrixXd parts(grid_trials, 2);
  for (int t = 0; t < grid_trials; ++t)
    theta_parts(20000 + t, parts(t, 0), parts(t, 1));
  double best_lambda = 0, best_mse = 1e300;
  for (double lam = 0.0; lam <= 1.0001; lam += 0.05) {
    double mse = 0;
    for (int t = 0; t < grid_trials; ++t) {
      double th = parts(t, 0) + lam * parts(t, 1);
      mse += (th - p.mu) * (th - p.mu) / grid_trials;
    }
    if (mse < best_mse) {
      best_mse = mse;
      best_lambda = lam;
    }
  }

  TunedCppiOptions opts;
  opts.K = 5;
  opts.B = 30;
  double avg_lambda = 0;
  int seeds = 10;
  for (int s = 0; s < seeds; ++s) {
    p.seed = 31000 + s;
    auto [lab, unl] = gen_synthetic(p, n, N);
    opts.seed = 600 + s;
    TunedCppiResult res = tuned_cppi_fit(m, lab, unl, spec, opts);
    avg_lambda += res.tuning.lambda_hat / seeds;
  }
  CHECK(std::abs(avg_lambda - best_lambda) <= 0.15);
}

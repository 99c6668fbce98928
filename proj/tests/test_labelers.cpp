#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <random>
#include <set>

#include "ppi/labelers.hpp"
#include "ppi/mlp.hpp"

using namespace ppi;

namespace {

LabeledDataset two_points() {
  LabeledDataset d;
  d.inputs.resize(2, 1);
  d.inputs << 0, 1;
  d.labels.resize(2, 1);
  d.labels << 1, 3;
  return d;
}

LabeledDataset random_regression(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  LabeledDataset data;
  data.inputs.resize(n, d);
  data.labels.resize(n, 1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) data.inputs(i, j) = g(rng);
    data.labels(i, 0) = data.inputs(i, 0) + 0.1 * g(rng);
  }
  return data;
}

}  // namespace

TEST_CASE("constant-mean labeler predicts the label mean") {
  LabelerSpec spec;
  spec.kind = LabelerSpec::Kind::ConstantMean;
  LabelerPtr f = fit(spec, two_points());
  Eigen::VectorXd x(1);
  x << 42;
  CHECK(f->predict(x)(0) == 2.0);
  x << -7;
  CHECK(f->predict(x)(0) == 2.0);
}

TEST_CASE("unregularized ridge interpolates exactly linear data") {
  LabeledDataset d;
  d.inputs.resize(3, 1);
  d.inputs << 1, 2, 3;
  d.labels.resize(3, 1);
  d.labels << 2, 4, 6;
  LabelerSpec spec;
  spec.kind = LabelerSpec::Kind::Ridge;
  spec.ridge_strength = 0.0;
  LabelerPtr f = fit(spec, d);
  Eigen::VectorXd x(1);
  for (double v : {0.5, 1.5, 10.0}) {
    x << v;
    CHECK(f->predict(x)(0) == doctest::Approx(2 * v).epsilon(1e-8));
  }
}

TEST_CASE("1-nearest-neighbor reproduces training points") {
  LabeledDataset d = random_regression(40, 3, 5);
  LabelerSpec spec;
  spec.kind = LabelerSpec::Kind::Knn;
  spec.knn_k = 1;
  LabelerPtr f = fit(spec, d);
  for (int i = 0; i < d.n(); ++i)
    CHECK(f->predict(d.inputs.row(i).transpose())(0) == d.labels(i, 0));
}

TEST_CASE("degenerate inputs fall back to the mean predictor") {
  LabeledDataset d;
  d.inputs = Eigen::MatrixXd::Ones(6, 2);
  d.labels.resize(6, 1);
  d.labels << 1, 2, 3, 4, 5, 9;
  for (auto kind : {LabelerSpec::Kind::Knn, LabelerSpec::Kind::ForestLite}) {
    LabelerSpec spec;
    spec.kind = kind;
    LabelerPtr f = fit(spec, d);
    CHECK(f->degenerate_fallback());
    Eigen::VectorXd x(2);
    x << 0.3, -2;
    CHECK(f->predict(x)(0) == doctest::Approx(4.0));
  }
}

TEST_CASE("labeler fits are deterministic") {
  LabeledDataset d = random_regression(80, 2, 6);
  Eigen::MatrixXd probe = random_regression(20, 2, 7).inputs;
  for (auto kind : {LabelerSpec::Kind::Ridge, LabelerSpec::Kind::Knn,
                    LabelerSpec::Kind::ForestLite, LabelerSpec::Kind::Mlp}) {
    LabelerSpec spec;
    spec.kind = kind;
    spec.mlp_epochs = 20;
    spec.seed = 31;
    LabelerPtr a = fit(spec, d);
    LabelerPtr b = fit(spec, d);
    CHECK(a->predict_rows(probe) == b->predict_rows(probe));
  }
}

TEST_CASE("forest-lite learns a coordinate function") {
  LabeledDataset train = random_regression(500, 2, 8);
  LabeledDataset test = random_regression(300, 2, 9);
  LabelerSpec spec;
  spec.kind = LabelerSpec::Kind::ForestLite;
  spec.seed = 2;
  LabelerPtr f = fit(spec, train);
  Eigen::VectorXd pred = f->predict_rows(test.inputs).col(0);
  double mse = (pred - test.labels.col(0)).squaredNorm() / test.n();
  double var_y = (test.labels.col(0).array() - test.labels.col(0).mean())
                     .square()
                     .mean();
  CHECK(mse < 0.1 * var_y);
}

TEST_CASE("fold models exclude their own fold") {
  SUBCASE("two points swap labels") {
    LabeledDataset d = two_points();
    FoldAssignment folds = make_folds(2, 2, 17);
    LabelerSpec spec;
    spec.kind = LabelerSpec::Kind::ConstantMean;
    std::vector<LabelerPtr> models = train_fold_models(d, folds, spec);
    REQUIRE(models.size() == 2);
    Eigen::VectorXd x(1);
    x << 0;
    // each model sees only the other fold's point
    for (int k = 0; k < 2; ++k) {
      int other = folds.complement(k)[0];
      CHECK(models[k]->predict(x)(0) == d.labels(other, 0));
    }
  }
  SUBCASE("training indices are the fold complement") {
    int n = 300;
    FoldAssignment folds = make_folds(n, 5, 3);
    std::vector<std::vector<int>> seen;
    train_fold_models_fn(n, folds, 77,
                         [&](const std::vector<int>& idx, std::uint64_t) {
                           seen.push_back(idx);
                           LabelerSpec s;
                           s.kind = LabelerSpec::Kind::ConstantMean;
                           LabeledDataset d;
                           d.inputs = Eigen::MatrixXd::Zero(1, 1);
                           d.labels = Eigen::MatrixXd::Zero(1, 1);
                           return fit(s, d);
                         });
    REQUIRE(seen.size() == 5);
    for (int k = 0; k < 5; ++k) {
      CHECK(seen[k].size() == 240);
      std::set<int> train(seen[k].begin(), seen[k].end());
      for (int i : folds.members[k]) CHECK(train.count(i) == 0);
      CHECK(train.size() + folds.members[k].size() == n);
    }
  }
}

TEST_CASE("bootstrap runs sample n - n/K points and keep the index set") {
  LabeledDataset d = random_regression(10, 1, 12);
  LabelerSpec spec;
  spec.kind = LabelerSpec::Kind::ConstantMean;
  std::vector<BootstrapModel> boot = bootstrap_models(d, 5, 6, spec, 91);
  REQUIRE(boot.size() == 6);
  for (const BootstrapModel& b : boot) {
    CHECK(b.train_idx.size() == 8);  // 10 - 10/5
    CHECK(std::is_sorted(b.train_idx.begin(), b.train_idx.end()));
    std::set<int> uniq(b.train_idx.begin(), b.train_idx.end());
    CHECK(uniq.size() == 8);
    CHECK(*uniq.rbegin() < 10);
    // the fitted constant is the subsample label mean
    double mean = 0;
    for (int i : b.train_idx) mean += d.labels(i, 0) / 8.0;
    Eigen::VectorXd x(1);
    x << 0;
    CHECK(b.model->predict(x)(0) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("bootstrap constant predictions average toward the global mean") {
  LabeledDataset d = random_regression(50, 1, 13);
  double global = d.labels.col(0).mean();
  double sd = std::sqrt(
      (d.labels.col(0).array() - global).square().mean());
  LabelerSpec spec;
  spec.kind = LabelerSpec::Kind::ConstantMean;
  std::vector<BootstrapModel> boot = bootstrap_models(d, 5, 400, spec, 14);
  Eigen::VectorXd x(1);
  x << 0;
  double avg = 0;
  for (const BootstrapModel& b : boot) avg += b.model->predict(x)(0) / 400.0;
  // subsample means are unbiased for the sample mean; 400 runs tighten the
  // average to a few hundredths of a standard deviation
  CHECK(std::abs(avg - global) < 0.05 * sd);
}

TEST_CASE("mlp backpropagation matches finite differences") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (auto out : {Mlp::Output::Regression, Mlp::Output::SoftmaxClassifier}) {
    int out_dim = out == Mlp::Output::Regression ? 2 : 3;
    Mlp net({3, 5, out_dim}, Mlp::Activation::Sigmoid, out, 42);
    Eigen::MatrixXd X(6, 3);
    Eigen::MatrixXd Y(6, out == Mlp::Output::Regression ? 2 : 1);
    for (int i = 0; i < X.size(); ++i) X(i / 3, i % 3) = g(rng);
    for (int i = 0; i < 6; ++i) {
      if (out == Mlp::Output::Regression) {
        Y(i, 0) = g(rng);
        Y(i, 1) = g(rng);
      } else {
        Y(i, 0) = double(i % 3);
      }
    }
    auto [value, grad] = net.loss_and_grad(X, Y);
    Eigen::VectorXd theta = net.params();
    double h = 1e-6;
    for (int j = 0; j < theta.size(); j += 7) {  // sample of coordinates
      Eigen::VectorXd tp = theta, tm = theta;
      tp(j) += h;
      tm(j) -= h;
      net.set_params(tp);
      double fp = net.loss(X, Y);
      net.set_params(tm);
      double fm = net.loss(X, Y);
      net.set_params(theta);
      double fd = (fp - fm) / (2 * h);
      CHECK(grad(j) == doctest::Approx(fd).epsilon(1e-4));
    }
  }
}

TEST_CASE("mlp classifier labeler predicts class indices") {
  // two well-separated blobs
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  LabeledDataset d;
  d.inputs.resize(60, 2);
  d.labels.resize(60, 1);
  for (int i = 0; i < 60; ++i) {
    int c = i % 2;
    d.inputs(i, 0) = g(rng) * 0.3 + (c ? 4.0 : -4.0);
    d.inputs(i, 1) = g(rng) * 0.3;
    d.labels(i, 0) = c;
  }
  LabelerSpec spec;
  spec.kind = LabelerSpec::Kind::Mlp;
  spec.mlp_classifier = true;
  spec.mlp_classes = 2;
  spec.mlp_epochs = 200;
  spec.seed = 4;
  LabelerPtr f = fit(spec, d);
  CHECK(f->raw_dim() == 2);    // class probabilities
  CHECK(f->label_dim() == 1);  // class index
  int correct = 0;
  for (int i = 0; i < d.n(); ++i) {
    Eigen::VectorXd raw = f->predict_raw(d.inputs.row(i).transpose());
    CHECK(std::abs(raw.sum() - 1.0) < 1e-9);
    if (f->predict(d.inputs.row(i).transpose())(0) == d.labels(i, 0))
      ++correct;
  }
  CHECK(correct >= 57);
}

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "ppi/datasets.hpp"
#include "ppi/estimators.hpp"
#include "ppi/labelers.hpp"
#include "ppi/losses.hpp"

namespace ppi {

struct TuningEstimate {
  double lambda_hat = 0.0;
  Eigen::MatrixXd hessian_hat;
  Eigen::MatrixXd var_fbar_hat;
  Eigen::MatrixXd crosscov_hat;
  double r = 0.0;  // n / N
  bool clipped = false;
  bool degenerate = false;  // labeler gradients carry no variance
};

// (1/n) sum_i hess l_theta(X_i, Y_i)
Eigen::MatrixXd estimate_hessian(const LossModel& model,
                                 const Eigen::VectorXd& theta_hat,
                                 const LabeledDataset& labeled);

// Empirical covariance of the gradients at the bootstrap-averaged
// predictions on the unlabeled data.
Eigen::MatrixXd estimate_var_fbar(const std::vector<BootstrapModel>& boot,
                                  const Eigen::VectorXd& theta_hat,
                                  const UnlabeledDataset& unlabeled,
                                  const LossModel& model);

// Empirical cross-covariance of (grad at true label, grad at f^{(b)}
// prediction), pooled over b and the indices each run held out.
Eigen::MatrixXd estimate_crosscov(const std::vector<BootstrapModel>& boot,
                                  const Eigen::VectorXd& theta_hat,
                                  const LabeledDataset& labeled,
                                  const LossModel& model);

// raw = tr(H^-1 (C + C^T) H^-1) / (2 (1 + n/N) tr(H^-1 V H^-1)), clamped to
// [0,1]. Returns (lambda, clipped). A vanishing denominator yields lambda=0
// with the degenerate flag set in tuned_cppi_fit.
std::pair<double, bool> lambda_hat(const Eigen::MatrixXd& H,
                                   const Eigen::MatrixXd& V,
                                   const Eigen::MatrixXd& C, double n,
                                   double N);

// Mean-estimation shortcut: cov(Y, fbar(X)) / ((1+r) var(fbar(X))), clamped.
double lambda_hat_mean(const LabeledDataset& labeled,
                       const Eigen::VectorXd& fbar_on_labeled, double r);

struct TunedCppiOptions {
  int K = 5;
  int B = 30;
  double lambda_init = 0.5;
  std::uint64_t seed = 0;
  // Unlabeled rows used for the variance estimate are capped at this count
  // (first rows taken); <= 0 disables the cap.
  int var_subsample = 2000;
};

struct TunedCppiResult {
  Eigen::VectorXd theta;
  TuningEstimate tuning;
  std::vector<LabelerPtr> fold_models;
  FoldAssignment folds;
};

// Algorithm: train K fold models; solve tuned CPPI at lambda_init; estimate
// the Hessian and the bootstrap covariances; plug in lambda_hat; re-solve at
// the estimated lambda.
TunedCppiResult tuned_cppi_fit(const LossModel& model,
                               const LabeledDataset& labeled,
                               const UnlabeledDataset& unlabeled,
                               const LabelerSpec& spec,
                               const TunedCppiOptions& opts,
                               const SolveOptions& solve_opts = {});

// Variant for labelers fitted through a callback (composite models).
TunedCppiResult tuned_cppi_fit_fn(const LossModel& model,
                                  const LabeledDataset& labeled,
                                  const UnlabeledDataset& unlabeled,
                                  const FitFn& fit_fn,
                                  const TunedCppiOptions& opts,
                                  const SolveOptions& solve_opts = {});

// Variant reusing existing folds and fold models (so a tuned fit can share
// them with a plain cross-fold fit); bootstrap runs still come from fit_fn.
TunedCppiResult tuned_cppi_fit_prepared(const LossModel& model,
                                        const LabeledDataset& labeled,
                                        const UnlabeledDataset& unlabeled,
                                        const FoldAssignment& folds,
                                        std::vector<LabelerPtr> fold_models,
                                        const FitFn& fit_fn,
                                        const TunedCppiOptions& opts,
                                        const SolveOptions& solve_opts = {});

}  // namespace ppi

#pragma once

#include <Eigen/Core>
#include <vector>

#include "ppi/datasets.hpp"
#include "ppi/labelers.hpp"
#include "ppi/losses.hpp"

namespace ppi {

// One weighted term of an assembled objective: weight times the mean
// per-sample loss over (features, labels) rows. Features are already mapped.
struct ObjectiveTerm {
  double weight = 1.0;
  Eigen::MatrixXd features;
  Eigen::MatrixXd labels;
};

class Objective {
 public:
  Objective(LossModel model, std::vector<ObjectiveTerm> terms);

  double value(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd grad(const Eigen::VectorXd& theta) const;
  Eigen::MatrixXd hessian(const Eigen::VectorXd& theta) const;

  // MeanEstimation, LinearRegression and ElmRidge objectives are quadratic
  // in theta; RidgeSoftmax is not.
  bool quadratic() const;

  const LossModel& model() const { return model_; }
  const std::vector<ObjectiveTerm>& terms() const { return terms_; }
  int dim() const { return model_.dim_theta(); }

 private:
  LossModel model_;
  std::vector<ObjectiveTerm> terms_;
};

Objective erm_objective(const LossModel& model, const LabeledDataset& labeled);

Objective ss_objective(const LossModel& model, const LabeledDataset& labeled,
                       const UnlabeledDataset& unlabeled, const Labeler& f,
                       double gamma);

Objective ppi_objective(const LossModel& model,
                        const LabeledDataset& labeled_rectifier,
                        const UnlabeledDataset& unlabeled, const Labeler& f);

Objective tuned_ppi_objective(const LossModel& model,
                              const LabeledDataset& labeled_rectifier,
                              const UnlabeledDataset& unlabeled,
                              const Labeler& f, double lambda);

Objective cppi_objective(const LossModel& model, const LabeledDataset& labeled,
                         const FoldAssignment& folds,
                         const std::vector<LabelerPtr>& fold_models,
                         const UnlabeledDataset& unlabeled);

Objective tuned_cppi_objective(const LossModel& model,
                               const LabeledDataset& labeled,
                               const FoldAssignment& folds,
                               const std::vector<LabelerPtr>& fold_models,
                               const UnlabeledDataset& unlabeled,
                               double lambda);

struct SolveOptions {
  double tol = 1e-8;  // infinity norm of the gradient
  int max_iters = 10000;
};

struct SolveResult {
  Eigen::VectorXd theta;
  bool ridge_fallback = false;  // singular stationarity system hit
  int iters = 0;
};

// Quadratic kinds: exact solution of the linear stationarity system, with a
// 1e-8 ridge fallback on singular systems. RidgeSoftmax: full-batch gradient
// descent with backtracking line search.
SolveResult solve(const Objective& obj, const SolveOptions& opts = {});

}  // namespace ppi

#include "ppi/estimators.hpp"

#include <Eigen/Dense>
#include <stdexcept>

namespace ppi {

namespace {

void check_label_dim(const LossModel& model, const Labeler& f) {
  if (f.label_dim() != model.label_dim())
    throw std::invalid_argument("objective: labeler/loss label dim mismatch");
}

ObjectiveTerm term(double w, const LossModel& model, const Eigen::MatrixXd& X,
                   Eigen::MatrixXd labels) {
  return ObjectiveTerm{w, model.map_rows(X), std::move(labels)};
}

}  // namespace

Objective::Objective(LossModel model, std::vector<ObjectiveTerm> terms)
    : model_(std::move(model)), terms_(std::move(terms)) {
  for (const auto& t : terms_) {
    if (t.features.cols() != model_.feat_dim() ||
        t.labels.cols() != model_.label_dim() ||
        t.features.rows() != t.labels.rows())
      throw std::invalid_argument("Objective: inconsistent term shapes");
  }
}

double Objective::value(const Eigen::VectorXd& theta) const {
  double v = 0.0;
  for (const auto& t : terms_)
    v += t.weight * batch_loss_value(model_, theta, t.features, t.labels);
  return v;
}

Eigen::VectorXd Objective::grad(const Eigen::VectorXd& theta) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(dim());
  for (const auto& t : terms_)
    g += t.weight * batch_loss_grad(model_, theta, t.features, t.labels);
  return g;
}

Eigen::MatrixXd Objective::hessian(const Eigen::VectorXd& theta) const {
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim(), dim());
  for (const auto& t : terms_)
    H += t.weight * batch_loss_hessian(model_, theta, t.features, t.labels);
  return H;
}

bool Objective::quadratic() const {
  return model_.kind != LossModel::Kind::RidgeSoftmax;
}

Objective erm_objective(const LossModel& model, const LabeledDataset& labeled) {
  std::vector<ObjectiveTerm> terms;
  terms.push_back(term(1.0, model, labeled.inputs, labeled.labels));
  return Objective(model, std::move(terms));
}

Objective ss_objective(const LossModel& model, const LabeledDataset& labeled,
                       const UnlabeledDataset& unlabeled, const Labeler& f,
                       double gamma) {
  check_label_dim(model, f);
  double n = labeled.n(), N = unlabeled.n();
  std::vector<ObjectiveTerm> terms;
  terms.push_back(term(n / (n + N), model, labeled.inputs, labeled.labels));
  terms.push_back(term(gamma * N / (n + N), model, unlabeled.inputs,
                       f.predict_rows(unlabeled.inputs)));
  return Objective(model, std::move(terms));
}

Objective ppi_objective(const LossModel& model,
                        const LabeledDataset& labeled_rectifier,
                        const UnlabeledDataset& unlabeled, const Labeler& f) {
  check_label_dim(model, f);
  std::vector<ObjectiveTerm> terms;
  terms.push_back(term(1.0, model, unlabeled.inputs,
                       f.predict_rows(unlabeled.inputs)));
  terms.push_back(term(-1.0, model, labeled_rectifier.inputs,
                       f.predict_rows(labeled_rectifier.inputs)));
  terms.push_back(term(1.0, model, labeled_rectifier.inputs,
                       labeled_rectifier.labels));
  return Objective(model, std::move(terms));
}

Objective tuned_ppi_objective(const LossModel& model,
                              const LabeledDataset& labeled_rectifier,
                              const UnlabeledDataset& unlabeled,
                              const Labeler& f, double lambda) {
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("tuned_ppi_objective: lambda outside [0,1]");
  check_label_dim(model, f);
  std::vector<ObjectiveTerm> terms;
  terms.push_back(term(1.0, model, labeled_rectifier.inputs,
                       labeled_rectifier.labels));
  terms.push_back(term(lambda, model, unlabeled.inputs,
                       f.predict_rows(unlabeled.inputs)));
  terms.push_back(term(-lambda, model, labeled_rectifier.inputs,
                       f.predict_rows(labeled_rectifier.inputs)));
  return Objective(model, std::move(terms));
}

namespace {

// Shared assembly of the cross-fold terms: the pseudo-labeled unlabeled
// average (weight w_unl/K per fold) and the held-out rectifier average
// (weight -w_rect * |D_k| / n per fold, so the inner sums add up to 1/n).
void append_fold_terms(std::vector<ObjectiveTerm>& terms,
                       const LossModel& model, const LabeledDataset& labeled,
                       const FoldAssignment& folds,
                       const std::vector<LabelerPtr>& fold_models,
                       const UnlabeledDataset& unlabeled, double w_unl,
                       double w_rect) {
  if (static_cast<int>(fold_models.size()) != folds.K)
    throw std::invalid_argument("objective: fold model count != K");
  double n = labeled.n();
  for (int k = 0; k < folds.K; ++k) {
    const Labeler& fk = *fold_models[k];
    check_label_dim(model, fk);
    terms.push_back(term(w_unl / folds.K, model, unlabeled.inputs,
                         fk.predict_rows(unlabeled.inputs)));
    LabeledDataset held = labeled.subset(folds.members[k]);
    terms.push_back(term(-w_rect * held.n() / n, model, held.inputs,
                         fk.predict_rows(held.inputs)));
  }
}

}  // namespace

Objective cppi_objective(const LossModel& model, const LabeledDataset& labeled,
                         const FoldAssignment& folds,
                         const std::vector<LabelerPtr>& fold_models,
                         const UnlabeledDataset& unlabeled) {
  std::vector<ObjectiveTerm> terms;
  append_fold_terms(terms, model, labeled, folds, fold_models, unlabeled, 1.0,
                    1.0);
  terms.push_back(term(1.0, model, labeled.inputs, labeled.labels));
  return Objective(model, std::move(terms));
}

Objective tuned_cppi_objective(const LossModel& model,
                               const LabeledDataset& labeled,
                               const FoldAssignment& folds,
                               const std::vector<LabelerPtr>& fold_models,
                               const UnlabeledDataset& unlabeled,
                               double lambda) {
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("tuned_cppi_objective: lambda outside [0,1]");
  std::vector<ObjectiveTerm> terms;
  terms.push_back(term(1.0, model, labeled.inputs, labeled.labels));
  append_fold_terms(terms, model, labeled, folds, fold_models, unlabeled,
                    lambda, lambda);
  return Objective(model, std::move(terms));
}

SolveResult solve(const Objective& obj, const SolveOptions& opts) {
  int d = obj.dim();
  SolveResult res;
  if (obj.quadratic()) {
    // grad(theta) = H theta + b with constant H for the quadratic kinds
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd H = obj.hessian(zero);
    Eigen::VectorXd b = obj.grad(zero);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    Eigen::VectorXd theta;
    bool ok = ldlt.info() == Eigen::Success;
    if (ok) {
      theta = ldlt.solve(-b);
      ok = (H * theta + b).lpNorm<Eigen::Infinity>() <=
           1e-6 * (1.0 + b.lpNorm<Eigen::Infinity>());
    }
    if (!ok) {
      Eigen::MatrixXd Hr = H;
      Hr.diagonal().array() += 1e-8;
      theta = Hr.ldlt().solve(-b);
      res.ridge_fallback = true;
    }
    res.theta = std::move(theta);
    return res;
  }

  // full-batch gradient descent with backtracking line search
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d);
  double f = obj.value(theta);
  double step = 1.0;
  for (res.iters = 0; res.iters < opts.max_iters; ++res.iters) {
    Eigen::VectorXd g = obj.grad(theta);
    if (g.lpNorm<Eigen::Infinity>() <= opts.tol) break;
    double g2 = g.squaredNorm();
    double t = step;
    Eigen::VectorXd cand;
    double fc;
    while (true) {
      cand = theta - t * g;
      fc = obj.value(cand);
      if (fc <= f - 0.5 * t * g2 || t < 1e-16) break;
      t *= 0.5;
    }
    theta = std::move(cand);
    f = fc;
    step = t * 2.0;
  }
  res.theta = std::move(theta);
  return res;
}

}  // namespace ppi

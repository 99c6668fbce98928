#include "ppi/tuning.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <stdexcept>

#include "ppi/rng.hpp"

namespace ppi {

namespace {

// Symmetric inverse with eigenvalue floor 1e-8 * max eigenvalue.
Eigen::MatrixXd sym_inverse(const Eigen::MatrixXd& H) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      0.5 * (H + H.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  double floor = 1e-8 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  ev = ev.cwiseMax(floor);
  return es.eigenvectors() * ev.cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

Eigen::MatrixXd centered_cov(const Eigen::MatrixXd& U,
                             const Eigen::MatrixXd& V) {
  int rows = static_cast<int>(U.rows());
  Eigen::RowVectorXd mu = U.colwise().mean();
  Eigen::RowVectorXd mv = V.colwise().mean();
  return ((U.rowwise() - mu).transpose() * (V.rowwise() - mv)) / rows;
}

}  // namespace

Eigen::MatrixXd estimate_hessian(const LossModel& model,
                                 const Eigen::VectorXd& theta_hat,
                                 const LabeledDataset& labeled) {
  return batch_loss_hessian(model, theta_hat, model.map_rows(labeled.inputs),
                            labeled.labels);
}

// Per-sample gradients at the bootstrap-averaged predictions, one row per
// unlabeled point.
static Eigen::MatrixXd fbar_grad_rows(const std::vector<BootstrapModel>& boot,
                                      const Eigen::VectorXd& theta_hat,
                                      const UnlabeledDataset& unlabeled,
                                      const LossModel& model) {
  if (boot.empty()) throw std::invalid_argument("estimate_var_fbar: no runs");
  Eigen::MatrixXd raw = boot[0].model->predict_raw_rows(unlabeled.inputs);
  for (std::size_t b = 1; b < boot.size(); ++b)
    raw += boot[b].model->predict_raw_rows(unlabeled.inputs);
  raw /= static_cast<double>(boot.size());

  Eigen::MatrixXd labels(unlabeled.n(), model.label_dim());
  for (int i = 0; i < unlabeled.n(); ++i)
    labels.row(i) =
        boot[0].model->label_from_raw(raw.row(i).transpose()).transpose();

  return per_sample_loss_grads(model, theta_hat,
                               model.map_rows(unlabeled.inputs), labels);
}

Eigen::MatrixXd estimate_var_fbar(const std::vector<BootstrapModel>& boot,
                                  const Eigen::VectorXd& theta_hat,
                                  const UnlabeledDataset& unlabeled,
                                  const LossModel& model) {
  Eigen::MatrixXd G = fbar_grad_rows(boot, theta_hat, unlabeled, model);
  return centered_cov(G, G);
}

// Paired rows (grad at true label, grad at held-out prediction) pooled over
// bootstrap runs.
static void crosscov_rows(const std::vector<BootstrapModel>& boot,
                          const Eigen::VectorXd& theta_hat,
                          const LabeledDataset& labeled,
                          const LossModel& model, Eigen::MatrixXd& U,
                          Eigen::MatrixXd& V) {
  if (boot.empty()) throw std::invalid_argument("estimate_crosscov: no runs");
  Eigen::MatrixXd F = model.map_rows(labeled.inputs);
  Eigen::MatrixXd Gtrue =
      per_sample_loss_grads(model, theta_hat, F, labeled.labels);

  int n = labeled.n();
  std::vector<char> in_train(n);
  std::vector<Eigen::RowVectorXd> us, vs;
  for (const BootstrapModel& bm : boot) {
    std::fill(in_train.begin(), in_train.end(), 0);
    for (int i : bm.train_idx) in_train[i] = 1;
    std::vector<int> held;
    for (int i = 0; i < n; ++i)
      if (!in_train[i]) held.push_back(i);
    if (held.empty()) continue;
    LabeledDataset sub = labeled.subset(held);
    Eigen::MatrixXd G = per_sample_loss_grads(
        model, theta_hat, model.map_rows(sub.inputs),
        bm.model->predict_rows(sub.inputs));
    for (std::size_t j = 0; j < held.size(); ++j) {
      us.push_back(Gtrue.row(held[j]));
      vs.push_back(G.row(static_cast<int>(j)));
    }
  }
  if (us.empty())
    throw std::runtime_error("estimate_crosscov: empty held-out pool");

  U.resize(us.size(), Gtrue.cols());
  V.resize(vs.size(), Gtrue.cols());
  for (std::size_t i = 0; i < us.size(); ++i) {
    U.row(static_cast<int>(i)) = us[i];
    V.row(static_cast<int>(i)) = vs[i];
  }
}

Eigen::MatrixXd estimate_crosscov(const std::vector<BootstrapModel>& boot,
                                  const Eigen::VectorXd& theta_hat,
                                  const LabeledDataset& labeled,
                                  const LossModel& model) {
  Eigen::MatrixXd U, V;
  crosscov_rows(boot, theta_hat, labeled, model, U, V);
  return centered_cov(U, V);
}

std::pair<double, bool> lambda_hat(const Eigen::MatrixXd& H,
                                   const Eigen::MatrixXd& V,
                                   const Eigen::MatrixXd& C, double n,
                                   double N) {
  Eigen::MatrixXd Hi = sym_inverse(H);
  double den = (Hi * V * Hi).trace();
  if (den <= 1e-12) return {0.0, false};
  double num = (Hi * (C + C.transpose()) * Hi).trace();
  double raw = num / (2.0 * (1.0 + n / N) * den);
  double clamped = std::clamp(raw, 0.0, 1.0);
  return {clamped, clamped != raw};
}

double lambda_hat_mean(const LabeledDataset& labeled,
                       const Eigen::VectorXd& fbar_on_labeled, double r) {
  int n = labeled.n();
  if (fbar_on_labeled.size() != n)
    throw std::invalid_argument("lambda_hat_mean: size mismatch");
  double my = labeled.labels.col(0).mean();
  double mf = fbar_on_labeled.mean();
  double cov = 0.0, var = 0.0;
  for (int i = 0; i < n; ++i) {
    double df = fbar_on_labeled(i) - mf;
    cov += (labeled.labels(i, 0) - my) * df;
    var += df * df;
  }
  cov /= n;
  var /= n;
  if (var <= 1e-12) return 0.0;
  return std::clamp(cov / ((1.0 + r) * var), 0.0, 1.0);
}

TunedCppiResult tuned_cppi_fit_prepared(const LossModel& model,
                                        const LabeledDataset& labeled,
                                        const UnlabeledDataset& unlabeled,
                                        const FoldAssignment& folds,
                                        std::vector<LabelerPtr> fold_models,
                                        const FitFn& fit_fn,
                                        const TunedCppiOptions& opts,
                                        const SolveOptions& solve_opts) {
  if (opts.lambda_init < 0.0 || opts.lambda_init > 1.0)
    throw std::invalid_argument("tuned_cppi_fit: lambda_init outside [0,1]");
  int n = labeled.n();
  double N = unlabeled.n();

  TunedCppiResult res;
  res.folds = folds;
  res.fold_models = std::move(fold_models);

  Objective pilot = tuned_cppi_objective(model, labeled, res.folds,
                                         res.fold_models, unlabeled,
                                         opts.lambda_init);
  Eigen::VectorXd theta_tilde = solve(pilot, solve_opts).theta;

  TuningEstimate& est = res.tuning;
  est.r = n / N;
  Eigen::MatrixXd H = estimate_hessian(model, theta_tilde, labeled);

  std::vector<BootstrapModel> boot = bootstrap_models_fn(
      n, opts.K, opts.B, derive_seed(opts.seed, 12), fit_fn);

  UnlabeledDataset var_data = unlabeled;
  if (opts.var_subsample > 0 && unlabeled.n() > opts.var_subsample)
    var_data.inputs = unlabeled.inputs.topRows(opts.var_subsample);
  Eigen::MatrixXd G = fbar_grad_rows(boot, theta_tilde, var_data, model);
  Eigen::MatrixXd U, V;
  crosscov_rows(boot, theta_tilde, labeled, model, U, V);

  // The estimate only needs the traces tr(H^-1 V H^-1) and
  // tr(H^-1 (C + C^T) H^-1); with gradient rows in hand they reduce to row
  // sums against H^-1, so the p x p covariance products are skipped. This is
  // what keeps the wide softmax models (p in the thousands) tractable.
  Eigen::MatrixXd Hi;
  if (H.rows() > 512) {
    // Large losses carry an explicit ridge, so a Cholesky solve is safe and
    // much cheaper than the eigendecomposition.
    Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (H + H.transpose()));
    if (llt.info() == Eigen::Success)
      Hi = llt.solve(Eigen::MatrixXd::Identity(H.rows(), H.cols()));
    else
      Hi = sym_inverse(H);
  } else {
    Hi = sym_inverse(H);
  }
  G.rowwise() -= G.colwise().mean().eval();
  U.rowwise() -= U.colwise().mean().eval();
  V.rowwise() -= V.colwise().mean().eval();
  double den = (G * Hi).rowwise().squaredNorm().sum() / G.rows();
  // tr(H^-1 C^T H^-1) = tr(H^-1 C H^-1), so the symmetrized trace is twice
  // the paired row sum.
  double num =
      2.0 * ((U * Hi).cwiseProduct(V * Hi)).sum() / U.rows();
  if (den <= 1e-12) {
    est.lambda_hat = 0.0;
    est.clipped = false;
  } else {
    double raw = num / (2.0 * (1.0 + est.r) * den);
    est.lambda_hat = std::clamp(raw, 0.0, 1.0);
    est.clipped = est.lambda_hat != raw;
  }
  est.degenerate = den <= 1e-12;

  // Dense diagnostics are worth keeping only when the parameter vector is
  // small; at softmax scale they would dominate memory for no benefit.
  if (model.dim_theta() <= 512) {
    est.hessian_hat = std::move(H);
    est.var_fbar_hat = (G.transpose() * G) / G.rows();
    est.crosscov_hat = (U.transpose() * V) / U.rows();
  }

  Objective final_obj = tuned_cppi_objective(model, labeled, res.folds,
                                             res.fold_models, unlabeled,
                                             est.lambda_hat);
  res.theta = solve(final_obj, solve_opts).theta;
  return res;
}

TunedCppiResult tuned_cppi_fit_fn(const LossModel& model,
                                  const LabeledDataset& labeled,
                                  const UnlabeledDataset& unlabeled,
                                  const FitFn& fit_fn,
                                  const TunedCppiOptions& opts,
                                  const SolveOptions& solve_opts) {
  FoldAssignment folds =
      make_folds(labeled.n(), opts.K, derive_seed(opts.seed, 10));
  std::vector<LabelerPtr> fold_models = train_fold_models_fn(
      labeled.n(), folds, derive_seed(opts.seed, 11), fit_fn);
  return tuned_cppi_fit_prepared(model, labeled, unlabeled, folds,
                                 std::move(fold_models), fit_fn, opts,
                                 solve_opts);
}

TunedCppiResult tuned_cppi_fit(const LossModel& model,
                               const LabeledDataset& labeled,
                               const UnlabeledDataset& unlabeled,
                               const LabelerSpec& spec,
                               const TunedCppiOptions& opts,
                               const SolveOptions& solve_opts) {
  return tuned_cppi_fit_fn(
      model, labeled, unlabeled,
      [&](const std::vector<int>& idx, std::uint64_t seed) {
        LabelerSpec s = spec;
        s.seed = seed;
        return fit(s, labeled.subset(idx));
      },
      opts, solve_opts);
}

}  // namespace ppi

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ppi/datasets.hpp"
#include "ppi/labelers.hpp"
#include "ppi/mlp.hpp"
#include "ppi/rng.hpp"

namespace ppi {

// Batch losses for iteratively-trained models. A ParamLoss evaluates the mean
// per-sample loss and its parameter gradient at a parameter vector; networks
// are adapted through mlp_param_loss.
using ParamLoss = std::function<std::pair<double, Eigen::VectorXd>(
    const Eigen::VectorXd& theta, const Eigen::MatrixXd& X,
    const Eigen::MatrixXd& Y)>;

ParamLoss mlp_param_loss(const Mlp& net);

enum class KappaKind { Linear, Quadratic };

// t/T or (t/T)^2; 0 at t=0, 1 at t=T.
double kappa(int t, int T, KappaKind kind);

// E_u[l(Xu, f(Xu))] - kappa_t * (E_l[l(Xl, f(Xl))] - E_l[l(Xl, Yl)])
std::pair<double, Eigen::VectorXd> ppi_batch_loss(
    const ParamLoss& loss, const Eigen::VectorXd& theta,
    const Eigen::MatrixXd& Xl, const Eigen::MatrixXd& Yl,
    const Eigen::MatrixXd& Xu, const Labeler& f, double kappa_t);

// One labeled batch per fold, with its true labels.
struct FoldBatch {
  Eigen::MatrixXd X;
  Eigen::MatrixXd Y;
};

// lambda * sum_k E_u[l(Xu, yu_k)]
//   - kappa_t * sum_k E_{fold k}[lambda * l(X, yl_k) - l(X, Y)]
// Pseudo-labels are passed explicitly so sampled labels stay frozen across
// evaluations.
std::pair<double, Eigen::VectorXd> tuned_cppi_batch_loss(
    const ParamLoss& loss, const Eigen::VectorXd& theta, double lambda,
    double kappa_t, const Eigen::MatrixXd& Xu,
    const std::vector<Eigen::MatrixXd>& yu,
    const std::vector<FoldBatch>& fold_batches,
    const std::vector<Eigen::MatrixXd>& yl);

struct MetaConfig {
  KappaKind kappa_kind = KappaKind::Linear;
  int T = 1000;           // total gradient steps
  double lambda = 1.0;    // fixed unless lambda_refresh > 0
  int batch_labeled = 32;
  int batch_unlabeled = 256;
  double eta_S = 0.05;
  double eta_T = 0.05;
  int lambda_refresh = 50;  // MCPPI plug-in refresh interval; 0 = never
  std::uint64_t seed = 0;
};

// Student plus one teacher (MPL) or K fold teachers (MCPPI).
struct StudentTeacherState {
  Mlp student;
  std::vector<Mlp> teachers;
  int t = 0;
};

// Sample a class index from one probability row.
int sample_class(const Eigen::RowVectorXd& probs, Rng& rng);

// One MPL iteration: sample hard pseudo-labels from the teacher, take a
// student step on them, then update the teacher with supervised CE plus the
// one-step meta-feedback term eta_S * (g_l . g_u) * grad CE(f(Xu), yu).
void mpl_step(StudentTeacherState& state, const Eigen::MatrixXd& Xl,
              const Eigen::MatrixXd& Yl, const Eigen::MatrixXd& Xu,
              const MetaConfig& cfg, Rng& rng);

// One student step on the tuned CPPI batch loss with the given frozen
// sampled labels. Returns the loss value before the step.
double mcppi_student_step(StudentTeacherState& state, double lambda,
                          double kappa_t, const Eigen::MatrixXd& Xu,
                          const std::vector<Eigen::MatrixXd>& yu,
                          const std::vector<FoldBatch>& fold_batches,
                          const std::vector<Eigen::MatrixXd>& yl,
                          double eta_S);

// Teacher-k gradient: supervised CE on the fold batch plus the two meta
// terms lambda*eta_S*(g_l.g_u_k)*grad CE(f_k(Xu), yu_k)
//   - lambda*eta_S*(g_l.g_l_k)*grad CE(f_k(Xl_k), yl_k),
// where g_l is the post-step student gradient on true labels and g_u_k /
// g_l_k are pre-step student gradients on the sampled labels.
Eigen::VectorXd mcppi_teacher_grad(const Mlp& teacher_k,
                                   const Mlp& student_pre,
                                   const Eigen::VectorXd& g_l,
                                   const Eigen::MatrixXd& Xu,
                                   const Eigen::MatrixXd& yu_k,
                                   const Eigen::MatrixXd& Xl_k,
                                   const Eigen::MatrixXd& Yl_k,
                                   const Eigen::MatrixXd& yl_k, double lambda,
                                   double eta_S);

// Plug-in lambda for a classification student: one-hot labels against the
// averaged-teacher class probabilities on the labeled set,
// sum_j cov(1{Y=j}, pbar_j) / ((1+r) sum_j var(pbar_j)), clamped to [0,1].
double mcppi_lambda_plugin(const std::vector<Mlp>& teachers,
                           const Eigen::MatrixXd& Xl,
                           const Eigen::MatrixXd& Yl, int classes, double r);

struct McppiTrace {
  std::vector<double> student_loss;  // tuned CPPI batch loss per step
  std::vector<double> lambda;        // lambda in effect per step
};

// Full training loop: per step draw per-fold labeled batches and an
// unlabeled batch, sample teacher labels, student step on the tuned CPPI
// batch loss, then one gradient step per teacher. lambda is refreshed from
// the plug-in every cfg.lambda_refresh steps when the interval is positive.
McppiTrace mcppi_train(StudentTeacherState& state,
                       const LabeledDataset& labeled,
                       const UnlabeledDataset& unlabeled,
                       const FoldAssignment& folds, const MetaConfig& cfg);

// Checkpoints: JSON container of named parameter tensors with layer shapes.
void save_checkpoint(const StudentTeacherState& state,
                     const std::string& path);
StudentTeacherState load_checkpoint(const std::string& path);

// Appends one row (step, student_loss, teacher_1_loss, ..., lambda); writes
// the header when the file does not exist yet.
void append_loss_curve(const std::string& path, int step, double student_loss,
                       const std::vector<double>& teacher_losses,
                       double lambda);

}  // namespace ppi

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>

namespace ppi {

// Feature maps applied to raw inputs before a loss is evaluated.
struct FeatureMap {
  enum class Kind {
    Identity, LeadingColumns, RbfNystrom, DirectionRbf, ElmHidden
  };
  Kind kind = Kind::Identity;

  // LeadingColumns: keep the first `leading` input coordinates
  int leading = 0;

  // RbfNystrom
  Eigen::MatrixXd landmarks;  // m x d
  double bandwidth = 1.0;
  Eigen::MatrixXd whitening;  // m x m, (K_mm + jitter I)^{-1/2}

  // DirectionRbf: positions are first mapped to the direction pair
  // (sin theta sin phi, cos theta) seen from this origin, then passed
  // through the RBF features above (landmarks live in direction space)
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();

  // ElmHidden: h(x) = sigmoid(W x + b)
  Eigen::MatrixXd W;  // p x d
  Eigen::VectorXd b;  // p

  int out_dim(int in_dim) const;
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& X) const;
};

// Landmarks sampled without replacement; whitening via symmetric
// eigendecomposition with an eigenvalue floor. bandwidth <= 0 selects the
// median pairwise distance of the fitting points.
FeatureMap fit_rbf_nystrom(const Eigen::MatrixXd& points, int m,
                           double bandwidth = -1.0, double jitter = 1e-8,
                           std::uint64_t seed = 0);

// W entries ~ N(0,1), b ~ Uniform(-1,1), frozen after construction.
FeatureMap make_elm_hidden(int in_dim, int p, std::uint64_t seed);

FeatureMap leading_columns(int p);

// Rows of 3-d positions to direction pairs seen from origin.
Eigen::MatrixXd direction_pairs(const Eigen::MatrixXd& positions,
                                const Eigen::Vector3d& origin);

// RBF features over direction pairs; points are 3-d positions.
FeatureMap fit_direction_rbf(const Eigen::MatrixXd& points,
                             const Eigen::Vector3d& origin, int m,
                             double bandwidth = -1.0, double jitter = 1e-8,
                             std::uint64_t seed = 0);

Eigen::VectorXd elm_features(const Eigen::VectorXd& x, const FeatureMap& map);

double median_pairwise_distance(const Eigen::MatrixXd& points);

// Convex per-sample loss families with analytic value/gradient/Hessian.
struct LossModel {
  enum class Kind { MeanEstimation, LinearRegression, RidgeSoftmax, ElmRidge };
  Kind kind = Kind::MeanEstimation;
  int dim_x = 1;     // raw input dimension (before the feature map)
  double gamma = 0;  // RidgeSoftmax / ElmRidge regularizer
  int J = 0;         // RidgeSoftmax class count
  std::optional<FeatureMap> feature_map;

  int feat_dim() const;
  int dim_theta() const;
  int label_dim() const;  // label columns expected per sample

  Eigen::MatrixXd map_rows(const Eigen::MatrixXd& X) const;
};

LossModel mean_estimation_model();
LossModel linear_regression_model(int d,
                                  std::optional<FeatureMap> map = {});
LossModel ridge_softmax_model(int dim_x, int J, double gamma,
                              std::optional<FeatureMap> map = {});
LossModel elm_ridge_model(int dim_x, double gamma, FeatureMap elm_map);

// Per-sample interface; x is a raw input, y a label row (class index stored
// as a double in y(0) for RidgeSoftmax).
double loss_value(const LossModel& m, const Eigen::VectorXd& theta,
                  const Eigen::VectorXd& x, const Eigen::VectorXd& y);
Eigen::VectorXd loss_grad(const LossModel& m, const Eigen::VectorXd& theta,
                          const Eigen::VectorXd& x, const Eigen::VectorXd& y);
Eigen::MatrixXd loss_hessian(const LossModel& m, const Eigen::VectorXd& theta,
                             const Eigen::VectorXd& x,
                             const Eigen::VectorXd& y);

// Batch interface over already-mapped features F (rows x feat_dim) and label
// rows Y. Values/gradients are means over rows; the regularizer (where the
// loss family has one) is included once.
double batch_loss_value(const LossModel& m, const Eigen::VectorXd& theta,
                        const Eigen::MatrixXd& F, const Eigen::MatrixXd& Y);
Eigen::VectorXd batch_loss_grad(const LossModel& m,
                                const Eigen::VectorXd& theta,
                                const Eigen::MatrixXd& F,
                                const Eigen::MatrixXd& Y);
Eigen::MatrixXd batch_loss_hessian(const LossModel& m,
                                   const Eigen::VectorXd& theta,
                                   const Eigen::MatrixXd& F,
                                   const Eigen::MatrixXd& Y);

// Per-sample gradients, one row per input row (regularizer included).
Eigen::MatrixXd per_sample_loss_grads(const LossModel& m,
                                      const Eigen::VectorXd& theta,
                                      const Eigen::MatrixXd& F,
                                      const Eigen::MatrixXd& Y);

// Row-wise softmax with max subtraction.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

}  // namespace ppi

#include "ppi/losses.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "ppi/rng.hpp"

namespace ppi {

namespace {

Eigen::VectorXd sigmoid(const Eigen::VectorXd& v) {
  return 1.0 / (1.0 + (-v.array()).exp());
}

void check_dim(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

int FeatureMap::out_dim(int in_dim) const {
  switch (kind) {
    case Kind::Identity: return in_dim;
    case Kind::LeadingColumns: return leading;
    case Kind::RbfNystrom: return static_cast<int>(landmarks.rows());
    case Kind::DirectionRbf: return static_cast<int>(landmarks.rows());
    case Kind::ElmHidden: return static_cast<int>(W.rows());
  }
  return in_dim;
}

Eigen::VectorXd FeatureMap::apply(const Eigen::VectorXd& x) const {
  switch (kind) {
    case Kind::Identity: return x;
    case Kind::LeadingColumns: return x.head(leading);
    case Kind::DirectionRbf:
      return apply_rows(Eigen::MatrixXd(x.transpose())).row(0).transpose();
    case Kind::RbfNystrom: {
      int m = static_cast<int>(landmarks.rows());
      Eigen::VectorXd k(m);
      double inv2b2 = 1.0 / (2.0 * bandwidth * bandwidth);
      for (int j = 0; j < m; ++j)
        k(j) = std::exp(-(x - landmarks.row(j).transpose()).squaredNorm() *
                        inv2b2);
      return whitening * k;
    }
    case Kind::ElmHidden: return sigmoid(W * x + b);
  }
  return x;
}

Eigen::MatrixXd FeatureMap::apply_rows(const Eigen::MatrixXd& X) const {
  switch (kind) {
    case Kind::Identity: return X;
    case Kind::LeadingColumns: return X.leftCols(leading);
    case Kind::DirectionRbf:
    case Kind::RbfNystrom: {
      Eigen::MatrixXd U =
          kind == Kind::DirectionRbf ? direction_pairs(X, origin) : X;
      const Eigen::MatrixXd& X2 = U.rows() ? U : X;
      int m = static_cast<int>(landmarks.rows());
      // squared distances via the Gram expansion
      Eigen::VectorXd xn = X2.rowwise().squaredNorm();
      Eigen::VectorXd ln = landmarks.rowwise().squaredNorm();
      Eigen::MatrixXd d2 = (-2.0 * X2 * landmarks.transpose()).eval();
      d2.colwise() += xn;
      d2.rowwise() += ln.transpose();
      double inv2b2 = 1.0 / (2.0 * bandwidth * bandwidth);
      Eigen::MatrixXd k =
          (-d2.array().max(0.0) * inv2b2).exp().matrix();
      return k * whitening.transpose();
    }
    case Kind::ElmHidden: {
      Eigen::MatrixXd z = X * W.transpose();
      z.rowwise() += b.transpose();
      return (1.0 / (1.0 + (-z.array()).exp())).matrix();
    }
  }
  return X;
}

double median_pairwise_distance(const Eigen::MatrixXd& points) {
  int n = static_cast<int>(points.rows());
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      d.push_back((points.row(i) - points.row(j)).norm());
  if (d.empty()) return 1.0;
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  return d[d.size() / 2];
}

FeatureMap fit_rbf_nystrom(const Eigen::MatrixXd& points, int m,
                           double bandwidth, double jitter,
                           std::uint64_t seed) {
  int n = static_cast<int>(points.rows());
  if (m < 1 || m > n)
    throw std::invalid_argument("fit_rbf_nystrom: need 1 <= m <= #points");
  if (bandwidth <= 0.0) bandwidth = median_pairwise_distance(points);
  if (bandwidth <= 0.0) bandwidth = 1.0;

  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);

  FeatureMap map;
  map.kind = FeatureMap::Kind::RbfNystrom;
  map.bandwidth = bandwidth;
  map.landmarks.resize(m, points.cols());
  for (int j = 0; j < m; ++j) map.landmarks.row(j) = points.row(idx[j]);

  Eigen::MatrixXd K(m, m);
  double inv2b2 = 1.0 / (2.0 * bandwidth * bandwidth);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      K(i, j) = std::exp(
          -(map.landmarks.row(i) - map.landmarks.row(j)).squaredNorm() *
          inv2b2);
  K.diagonal().array() += jitter;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-12);
  map.whitening = es.eigenvectors() *
                  ev.cwiseSqrt().cwiseInverse().asDiagonal() *
                  es.eigenvectors().transpose();
  return map;
}

FeatureMap make_elm_hidden(int in_dim, int p, std::uint64_t seed) {
  FeatureMap map;
  map.kind = FeatureMap::Kind::ElmHidden;
  map.W.resize(p, in_dim);
  map.b.resize(p);
  Rng rng(seed);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < in_dim; ++j) map.W(i, j) = rng.normal();
  for (int i = 0; i < p; ++i) map.b(i) = rng.uniform(-1.0, 1.0);
  return map;
}

Eigen::MatrixXd direction_pairs(const Eigen::MatrixXd& positions,
                                const Eigen::Vector3d& origin) {
  Eigen::MatrixXd U(positions.rows(), 2);
  for (int i = 0; i < positions.rows(); ++i) {
    Eigen::Vector3d d = positions.row(i).transpose() - origin;
    double r = std::max(d.norm(), 1e-12);
    double theta = std::acos(std::clamp(d(2) / r, -1.0, 1.0));
    double phi = std::atan2(d(1), d(0));
    U(i, 0) = std::sin(theta) * std::sin(phi);
    U(i, 1) = std::cos(theta);
  }
  return U;
}

FeatureMap fit_direction_rbf(const Eigen::MatrixXd& points,
                             const Eigen::Vector3d& origin, int m,
                             double bandwidth, double jitter,
                             std::uint64_t seed) {
  FeatureMap map =
      fit_rbf_nystrom(direction_pairs(points, origin), m, bandwidth, jitter,
                      seed);
  map.kind = FeatureMap::Kind::DirectionRbf;
  map.origin = origin;
  return map;
}

FeatureMap leading_columns(int p) {
  if (p < 1) throw std::invalid_argument("leading_columns: p >= 1 required");
  FeatureMap map;
  map.kind = FeatureMap::Kind::LeadingColumns;
  map.leading = p;
  return map;
}

Eigen::VectorXd elm_features(const Eigen::VectorXd& x, const FeatureMap& map) {
  if (map.kind != FeatureMap::Kind::ElmHidden)
    throw std::invalid_argument("elm_features: map is not ElmHidden");
  return map.apply(x);
}

int LossModel::feat_dim() const {
  return feature_map ? feature_map->out_dim(dim_x) : dim_x;
}

int LossModel::dim_theta() const {
  switch (kind) {
    case Kind::MeanEstimation: return 1;
    case Kind::LinearRegression: return feat_dim();
    case Kind::RidgeSoftmax: return J * feat_dim();
    case Kind::ElmRidge: return 2 * feat_dim();
  }
  return 0;
}

int LossModel::label_dim() const {
  return kind == Kind::ElmRidge ? 2 : 1;
}

Eigen::MatrixXd LossModel::map_rows(const Eigen::MatrixXd& X) const {
  if (kind == Kind::MeanEstimation)  // the loss ignores the inputs
    return Eigen::MatrixXd::Zero(X.rows(), 1);
  return feature_map ? feature_map->apply_rows(X) : X;
}

LossModel mean_estimation_model() {
  LossModel m;
  m.kind = LossModel::Kind::MeanEstimation;
  m.dim_x = 1;
  return m;
}

LossModel linear_regression_model(int d, std::optional<FeatureMap> map) {
  LossModel m;
  m.kind = LossModel::Kind::LinearRegression;
  m.dim_x = d;
  m.feature_map = std::move(map);
  return m;
}

LossModel ridge_softmax_model(int dim_x, int J, double gamma,
                              std::optional<FeatureMap> map) {
  LossModel m;
  m.kind = LossModel::Kind::RidgeSoftmax;
  m.dim_x = dim_x;
  m.J = J;
  m.gamma = gamma;
  m.feature_map = std::move(map);
  return m;
}

LossModel elm_ridge_model(int dim_x, double gamma, FeatureMap elm_map) {
  LossModel m;
  m.kind = LossModel::Kind::ElmRidge;
  m.dim_x = dim_x;
  m.gamma = gamma;
  m.feature_map = std::move(elm_map);
  return m;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits;
  for (int i = 0; i < p.rows(); ++i) {
    double mx = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double batch_loss_value(const LossModel& m, const Eigen::VectorXd& theta,
                        const Eigen::MatrixXd& F, const Eigen::MatrixXd& Y) {
  check_dim(theta.size() == m.dim_theta(), "batch_loss_value: theta dim");
  check_dim(F.rows() == Y.rows(), "batch_loss_value: row mismatch");
  int rows = static_cast<int>(F.rows());
  if (rows == 0) return 0.0;
  switch (m.kind) {
    case LossModel::Kind::MeanEstimation:
      return (Y.col(0).array() - theta(0)).square().mean();
    case LossModel::Kind::LinearRegression:
      return (Y.col(0) - F * theta).squaredNorm() / rows;
    case LossModel::Kind::RidgeSoftmax: {
      int mm = m.feat_dim();
      Eigen::Map<const Eigen::MatrixXd> Theta(theta.data(), mm, m.J);
      Eigen::MatrixXd logits = F * Theta;
      double total = 0.0;
      for (int i = 0; i < rows; ++i) {
        double mx = logits.row(i).maxCoeff();
        double lse = std::log((logits.row(i).array() - mx).exp().sum()) + mx;
        int y = static_cast<int>(Y(i, 0));
        check_dim(y >= 0 && y < m.J, "batch_loss_value: class out of range");
        total += lse - logits(i, y);
      }
      return total / rows + m.gamma * theta.squaredNorm();
    }
    case LossModel::Kind::ElmRidge: {
      int p = m.feat_dim();
      double total = 0.0;
      for (int j = 0; j < 2; ++j)
        total += (Y.col(j) - F * theta.segment(j * p, p)).squaredNorm();
      return total / rows + m.gamma * theta.squaredNorm();
    }
  }
  return 0.0;
}

Eigen::VectorXd batch_loss_grad(const LossModel& m,
                                const Eigen::VectorXd& theta,
                                const Eigen::MatrixXd& F,
                                const Eigen::MatrixXd& Y) {
  check_dim(theta.size() == m.dim_theta(), "batch_loss_grad: theta dim");
  int rows = static_cast<int>(F.rows());
  Eigen::VectorXd g = Eigen::VectorXd::Zero(theta.size());
  if (rows == 0) return g;
  switch (m.kind) {
    case LossModel::Kind::MeanEstimation:
      g(0) = -2.0 * (Y.col(0).array() - theta(0)).mean();
      return g;
    case LossModel::Kind::LinearRegression:
      g = (-2.0 / rows) * (F.transpose() * (Y.col(0) - F * theta));
      return g;
    case LossModel::Kind::RidgeSoftmax: {
      int mm = m.feat_dim();
      Eigen::Map<const Eigen::MatrixXd> Theta(theta.data(), mm, m.J);
      Eigen::MatrixXd P = softmax_rows(F * Theta);
      for (int i = 0; i < rows; ++i) P(i, static_cast<int>(Y(i, 0))) -= 1.0;
      Eigen::MatrixXd G = F.transpose() * P / rows;
      Eigen::Map<Eigen::MatrixXd>(g.data(), mm, m.J) = G;
      g += 2.0 * m.gamma * theta;
      return g;
    }
    case LossModel::Kind::ElmRidge: {
      int p = m.feat_dim();
      for (int j = 0; j < 2; ++j)
        g.segment(j * p, p) =
            (-2.0 / rows) *
            (F.transpose() * (Y.col(j) - F * theta.segment(j * p, p)));
      g += 2.0 * m.gamma * theta;
      return g;
    }
  }
  return g;
}

Eigen::MatrixXd batch_loss_hessian(const LossModel& m,
                                   const Eigen::VectorXd& theta,
                                   const Eigen::MatrixXd& F,
                                   const Eigen::MatrixXd& Y) {
  check_dim(theta.size() == m.dim_theta(), "batch_loss_hessian: theta dim");
  int rows = static_cast<int>(F.rows());
  int d = m.dim_theta();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(d, d);
  if (rows == 0) return H;
  switch (m.kind) {
    case LossModel::Kind::MeanEstimation:
      H(0, 0) = 2.0;
      return H;
    case LossModel::Kind::LinearRegression:
      H = (2.0 / rows) * (F.transpose() * F);
      return H;
    case LossModel::Kind::RidgeSoftmax: {
      int mm = m.feat_dim();
      Eigen::Map<const Eigen::MatrixXd> Theta(theta.data(), mm, m.J);
      Eigen::MatrixXd P = softmax_rows(F * Theta);
      Eigen::MatrixXd outer(mm, mm);
      for (int i = 0; i < rows; ++i) {
        outer.noalias() = F.row(i).transpose() * F.row(i);
        Eigen::VectorXd p = P.row(i);
        for (int j1 = 0; j1 < m.J; ++j1)
          for (int j2 = 0; j2 < m.J; ++j2) {
            double w = (j1 == j2 ? p(j1) : 0.0) - p(j1) * p(j2);
            if (w != 0.0)
              H.block(j1 * mm, j2 * mm, mm, mm).noalias() += w * outer;
          }
      }
      H /= rows;
      H.diagonal().array() += 2.0 * m.gamma;
      return H;
    }
    case LossModel::Kind::ElmRidge: {
      int p = m.feat_dim();
      Eigen::MatrixXd blk = (2.0 / rows) * (F.transpose() * F);
      H.block(0, 0, p, p) = blk;
      H.block(p, p, p, p) = blk;
      H.diagonal().array() += 2.0 * m.gamma;
      return H;
    }
  }
  return H;
}

Eigen::MatrixXd per_sample_loss_grads(const LossModel& m,
                                      const Eigen::VectorXd& theta,
                                      const Eigen::MatrixXd& F,
                                      const Eigen::MatrixXd& Y) {
  check_dim(theta.size() == m.dim_theta(), "per_sample_loss_grads: theta dim");
  int rows = static_cast<int>(F.rows());
  Eigen::MatrixXd G(rows, theta.size());
  switch (m.kind) {
    case LossModel::Kind::MeanEstimation:
      G.col(0) = -2.0 * (Y.col(0).array() - theta(0));
      return G;
    case LossModel::Kind::LinearRegression: {
      Eigen::VectorXd r = Y.col(0) - F * theta;
      G = F.array().colwise() * (-2.0 * r.array());
      return G;
    }
    case LossModel::Kind::RidgeSoftmax: {
      int mm = m.feat_dim();
      Eigen::Map<const Eigen::MatrixXd> Theta(theta.data(), mm, m.J);
      Eigen::MatrixXd P = softmax_rows(F * Theta);
      for (int i = 0; i < rows; ++i) P(i, static_cast<int>(Y(i, 0))) -= 1.0;
      for (int j = 0; j < m.J; ++j)
        G.middleCols(j * mm, mm) = F.array().colwise() * P.col(j).array();
      G.rowwise() += 2.0 * m.gamma * theta.transpose();
      return G;
    }
    case LossModel::Kind::ElmRidge: {
      int p = m.feat_dim();
      for (int j = 0; j < 2; ++j) {
        Eigen::VectorXd r = Y.col(j) - F * theta.segment(j * p, p);
        G.middleCols(j * p, p) = F.array().colwise() * (-2.0 * r.array());
      }
      G.rowwise() += 2.0 * m.gamma * theta.transpose();
      return G;
    }
  }
  return G;
}

double loss_value(const LossModel& m, const Eigen::VectorXd& theta,
                  const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  Eigen::MatrixXd F =
      m.map_rows(Eigen::MatrixXd(x.transpose()));
  return batch_loss_value(m, theta, F, Eigen::MatrixXd(y.transpose()));
}

Eigen::VectorXd loss_grad(const LossModel& m, const Eigen::VectorXd& theta,
                          const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  Eigen::MatrixXd F = m.map_rows(Eigen::MatrixXd(x.transpose()));
  return batch_loss_grad(m, theta, F, Eigen::MatrixXd(y.transpose()));
}

Eigen::MatrixXd loss_hessian(const LossModel& m, const Eigen::VectorXd& theta,
                             const Eigen::VectorXd& x,
                             const Eigen::VectorXd& y) {
  Eigen::MatrixXd F = m.map_rows(Eigen::MatrixXd(x.transpose()));
  return batch_loss_hessian(m, theta, F, Eigen::MatrixXd(y.transpose()));
}

}  // namespace ppi

#include "ppi/mlp.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ppi/losses.hpp"
#include "ppi/rng.hpp"

namespace ppi {

namespace {
constexpr double kLeakySlope = 0.01;
constexpr double kProbFloor = 1e-12;
}  // namespace

Mlp::Mlp(std::vector<int> layer_sizes, Activation act, Output out,
         std::uint64_t seed)
    : sizes_(std::move(layer_sizes)), act_(act), out_(out) {
  if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need >= 2 layers");
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    double scale = std::sqrt(2.0 / sizes_[l]);
    Eigen::MatrixXd W(sizes_[l + 1], sizes_[l]);
    for (int i = 0; i < W.rows(); ++i)
      for (int j = 0; j < W.cols(); ++j) W(i, j) = scale * rng.normal();
    W_.push_back(std::move(W));
    b_.push_back(Eigen::VectorXd::Zero(sizes_[l + 1]));
    param_count_ += sizes_[l + 1] * (sizes_[l] + 1);
  }
}

Eigen::VectorXd Mlp::params() const {
  Eigen::VectorXd theta(param_count_);
  int pos = 0;
  for (std::size_t l = 0; l < W_.size(); ++l) {
    int wn = static_cast<int>(W_[l].size());
    theta.segment(pos, wn) =
        Eigen::Map<const Eigen::VectorXd>(W_[l].data(), wn);
    pos += wn;
    theta.segment(pos, b_[l].size()) = b_[l];
    pos += static_cast<int>(b_[l].size());
  }
  return theta;
}

void Mlp::set_params(const Eigen::VectorXd& theta) {
  if (theta.size() != param_count_)
    throw std::invalid_argument("Mlp::set_params: size mismatch");
  int pos = 0;
  for (std::size_t l = 0; l < W_.size(); ++l) {
    int wn = static_cast<int>(W_[l].size());
    Eigen::Map<Eigen::VectorXd>(W_[l].data(), wn) = theta.segment(pos, wn);
    pos += wn;
    b_[l] = theta.segment(pos, b_[l].size());
    pos += static_cast<int>(b_[l].size());
  }
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& X) const {
  Eigen::MatrixXd a = X;
  for (std::size_t l = 0; l < W_.size(); ++l) {
    Eigen::MatrixXd z = a * W_[l].transpose();
    z.rowwise() += b_[l].transpose();
    if (l + 1 < W_.size()) {
      switch (act_) {
        case Activation::ReLU: a = z.cwiseMax(0.0); break;
        case Activation::LeakyReLU:
          a = z.cwiseMax(kLeakySlope * z);
          break;
        case Activation::Sigmoid:
          a = (1.0 / (1.0 + (-z.array()).exp())).matrix();
          break;
      }
    } else {
      a = std::move(z);
    }
  }
  if (out_ == Output::SoftmaxClassifier) a = softmax_rows(a);
  return a;
}

std::pair<double, Eigen::VectorXd> Mlp::loss_and_grad(
    const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  int rows = static_cast<int>(X.rows());
  if (rows == 0) return {0.0, Eigen::VectorXd::Zero(param_count_)};

  // forward with cached activations
  std::vector<Eigen::MatrixXd> acts;  // inputs of each layer
  acts.reserve(W_.size() + 1);
  acts.push_back(X);
  std::vector<Eigen::MatrixXd> zs;
  for (std::size_t l = 0; l < W_.size(); ++l) {
    Eigen::MatrixXd z = acts.back() * W_[l].transpose();
    z.rowwise() += b_[l].transpose();
    zs.push_back(z);
    if (l + 1 < W_.size()) {
      Eigen::MatrixXd a;
      switch (act_) {
        case Activation::ReLU: a = z.cwiseMax(0.0); break;
        case Activation::LeakyReLU: a = z.cwiseMax(kLeakySlope * z); break;
        case Activation::Sigmoid:
          a = (1.0 / (1.0 + (-z.array()).exp())).matrix();
          break;
      }
      acts.push_back(std::move(a));
    }
  }

  double loss = 0.0;
  Eigen::MatrixXd delta;  // d(mean loss)/d(z_last), rows x out
  const Eigen::MatrixXd& zout = zs.back();
  if (out_ == Output::Regression) {
    delta = zout - Y;
    loss = delta.squaredNorm() / rows;
    delta *= 2.0 / rows;
  } else {
    Eigen::MatrixXd P = softmax_rows(zout);
    for (int i = 0; i < rows; ++i) {
      int y = static_cast<int>(Y(i, 0));
      if (y < 0 || y >= out_dim())
        throw std::invalid_argument("Mlp: class label out of range");
      loss -= std::log(std::max(P(i, y), kProbFloor));
    }
    loss /= rows;
    delta = P;
    for (int i = 0; i < rows; ++i) delta(i, static_cast<int>(Y(i, 0))) -= 1.0;
    delta /= rows;
  }

  Eigen::VectorXd grad(param_count_);
  // positions of each layer's block in the flat vector
  std::vector<int> offs(W_.size());
  {
    int pos = 0;
    for (std::size_t l = 0; l < W_.size(); ++l) {
      offs[l] = pos;
      pos += static_cast<int>(W_[l].size() + b_[l].size());
    }
  }
  for (int l = static_cast<int>(W_.size()) - 1; l >= 0; --l) {
    Eigen::MatrixXd gW = delta.transpose() * acts[l];
    Eigen::VectorXd gb = delta.colwise().sum();
    int wn = static_cast<int>(W_[l].size());
    grad.segment(offs[l], wn) = Eigen::Map<Eigen::VectorXd>(gW.data(), wn);
    grad.segment(offs[l] + wn, gb.size()) = gb;
    if (l > 0) {
      Eigen::MatrixXd da = delta * W_[l];
      const Eigen::MatrixXd& z = zs[l - 1];
      switch (act_) {
        case Activation::ReLU:
          delta = (z.array() > 0.0).select(da, 0.0);
          break;
        case Activation::LeakyReLU:
          delta = (z.array() > 0.0).select(da, kLeakySlope * da);
          break;
        case Activation::Sigmoid: {
          Eigen::ArrayXXd s = 1.0 / (1.0 + (-z.array()).exp());
          delta = (da.array() * s * (1.0 - s)).matrix();
          break;
        }
      }
    }
  }
  return {loss, std::move(grad)};
}

double Mlp::loss(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  int rows = static_cast<int>(X.rows());
  if (rows == 0) return 0.0;
  Eigen::MatrixXd out = forward(X);
  if (out_ == Output::Regression) return (out - Y).squaredNorm() / rows;
  double loss = 0.0;
  for (int i = 0; i < rows; ++i)
    loss -= std::log(std::max(out(i, static_cast<int>(Y(i, 0))), kProbFloor));
  return loss / rows;
}

void Mlp::gradient_step(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                        double lr) {
  auto [loss, grad] = loss_and_grad(X, Y);
  (void)loss;
  set_params(params() - lr * grad);
}

void Mlp::train(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, int epochs,
                double lr, int batch_size, std::uint64_t seed) {
  int rows = static_cast<int>(X.rows());
  if (rows == 0) return;
  batch_size = std::min(batch_size, rows);
  Rng rng(seed);
  std::vector<int> order(rows);
  std::iota(order.begin(), order.end(), 0);
  Eigen::MatrixXd bx(batch_size, X.cols()), by(batch_size, Y.cols());
  for (int e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    for (int start = 0; start + batch_size <= rows; start += batch_size) {
      for (int i = 0; i < batch_size; ++i) {
        bx.row(i) = X.row(order[start + i]);
        by.row(i) = Y.row(order[start + i]);
      }
      gradient_step(bx, by, lr);
    }
  }
}

}  // namespace ppi

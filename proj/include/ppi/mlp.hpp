#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <utility>
#include <vector>

namespace ppi {

// Dense feed-forward network with explicit forward/backward passes. Manual
// gradients keep per-example gradient dot products accessible for the
// meta-training losses.
class Mlp {
 public:
  enum class Activation { ReLU, LeakyReLU, Sigmoid };
  enum class Output { Regression, SoftmaxClassifier };

  // layer_sizes = {in, hidden..., out}
  Mlp(std::vector<int> layer_sizes, Activation act, Output out,
      std::uint64_t seed);

  int in_dim() const { return sizes_.front(); }
  int out_dim() const { return sizes_.back(); }
  int param_count() const { return param_count_; }

  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& theta);

  // Regression: raw outputs. Classifier: class probabilities (rows sum to 1).
  Eigen::MatrixXd forward(const Eigen::MatrixXd& X) const;

  // Mean batch loss and flat gradient at the current parameters.
  // Regression: mean over rows of ||y - out||^2 (summed over outputs).
  // Classifier: mean cross-entropy against class indices in Y.col(0).
  std::pair<double, Eigen::VectorXd> loss_and_grad(
      const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const;

  double loss(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const;

  // Plain mini-batch SGD.
  void train(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, int epochs,
             double lr, int batch_size, std::uint64_t seed);

  void gradient_step(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                     double lr);

  Output output_kind() const { return out_; }
  Activation activation_kind() const { return act_; }
  const std::vector<int>& layer_sizes() const { return sizes_; }

 private:
  std::vector<int> sizes_;
  Activation act_;
  Output out_;
  std::vector<Eigen::MatrixXd> W_;
  std::vector<Eigen::VectorXd> b_;
  int param_count_ = 0;
};

}  // namespace ppi

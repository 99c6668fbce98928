#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "ppi/datasets.hpp"

namespace ppi {

// A fitted predictor. predict_raw() returns the representation that is
// meaningful to average across models (regression outputs, class
// probabilities, ...); label_from_raw() maps that representation to the
// label the losses consume. For plain regressors the two coincide.
class Labeler {
 public:
  virtual ~Labeler() = default;
  virtual Eigen::VectorXd predict_raw(const Eigen::VectorXd& x) const = 0;
  virtual Eigen::VectorXd label_from_raw(const Eigen::VectorXd& raw) const {
    return raw;
  }
  virtual int raw_dim() const = 0;
  virtual int label_dim() const { return raw_dim(); }
  virtual bool degenerate_fallback() const { return false; }

  Eigen::VectorXd predict(const Eigen::VectorXd& x) const {
    return label_from_raw(predict_raw(x));
  }
  virtual Eigen::MatrixXd predict_raw_rows(const Eigen::MatrixXd& X) const;
  Eigen::MatrixXd predict_rows(const Eigen::MatrixXd& X) const;
};

using LabelerPtr = std::shared_ptr<const Labeler>;

struct LabelerSpec {
  enum class Kind { ConstantMean, Ridge, Knn, ForestLite, Mlp };
  Kind kind = Kind::ConstantMean;

  double ridge_strength = 1e-6;

  int knn_k = 5;

  int forest_trees = 50;
  int forest_max_depth = 8;
  int forest_min_leaf = 5;

  std::vector<int> mlp_hidden = {32, 16};
  int mlp_epochs = 100;
  double mlp_lr = 1e-2;
  int mlp_batch = 32;
  bool mlp_classifier = false;
  int mlp_classes = 0;  // required when mlp_classifier

  std::uint64_t seed = 0;
};

LabelerPtr fit(const LabelerSpec& spec, const LabeledDataset& data);

// Model k is fitted on all folds except fold k; derived seeds per fold.
std::vector<LabelerPtr> train_fold_models(const LabeledDataset& data,
                                          const FoldAssignment& folds,
                                          const LabelerSpec& spec);

struct BootstrapModel {
  LabelerPtr model;
  std::vector<int> train_idx;  // I_b, sorted
};

// Each run samples n - floor(n/K) indices without replacement and fits on
// them, retaining the index set for held-out bookkeeping.
std::vector<BootstrapModel> bootstrap_models(const LabeledDataset& data, int K,
                                             int B, const LabelerSpec& spec,
                                             std::uint64_t seed);

// Generic variants for labelers that are not described by a LabelerSpec
// (e.g. composite models fitted on side information). The callback fits on
// the given index subset with a derived seed.
using FitFn =
    std::function<LabelerPtr(const std::vector<int>& idx, std::uint64_t seed)>;

std::vector<LabelerPtr> train_fold_models_fn(int n, const FoldAssignment& folds,
                                             std::uint64_t seed,
                                             const FitFn& fit_fn);

std::vector<BootstrapModel> bootstrap_models_fn(int n, int K, int B,
                                                std::uint64_t seed,
                                                const FitFn& fit_fn);

}  // namespace ppi

#include "ppi/labelers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ppi/mlp.hpp"
#include "ppi/rng.hpp"

namespace ppi {

Eigen::MatrixXd Labeler::predict_raw_rows(const Eigen::MatrixXd& X) const {
  Eigen::MatrixXd out(X.rows(), raw_dim());
  for (int i = 0; i < X.rows(); ++i)
    out.row(i) = predict_raw(X.row(i).transpose()).transpose();
  return out;
}

Eigen::MatrixXd Labeler::predict_rows(const Eigen::MatrixXd& X) const {
  Eigen::MatrixXd raw = predict_raw_rows(X);
  Eigen::MatrixXd out(X.rows(), label_dim());
  for (int i = 0; i < X.rows(); ++i)
    out.row(i) = label_from_raw(raw.row(i).transpose()).transpose();
  return out;
}

namespace {

class ConstantMeanLabeler : public Labeler {
 public:
  explicit ConstantMeanLabeler(Eigen::VectorXd mean, bool fallback = false)
      : mean_(std::move(mean)), fallback_(fallback) {}
  Eigen::VectorXd predict_raw(const Eigen::VectorXd&) const override {
    return mean_;
  }
  int raw_dim() const override { return static_cast<int>(mean_.size()); }
  bool degenerate_fallback() const override { return fallback_; }

 private:
  Eigen::VectorXd mean_;
  bool fallback_;
};

class RidgeLabeler : public Labeler {
 public:
  RidgeLabeler(const LabeledDataset& data, double strength) {
    int n = data.n(), d = data.dim();
    Eigen::MatrixXd A(n, d + 1);
    A.leftCols(d) = data.inputs;
    A.col(d).setOnes();
    if (strength > 0.0) {
      Eigen::MatrixXd G = A.transpose() * A;
      G.diagonal().array() += strength;
      coef_ = G.ldlt().solve(A.transpose() * data.labels);
    } else {
      coef_ = A.colPivHouseholderQr().solve(data.labels);
    }
  }
  Eigen::VectorXd predict_raw(const Eigen::VectorXd& x) const override {
    return coef_.topRows(x.size()).transpose() * x +
           coef_.row(coef_.rows() - 1).transpose();
  }
  int raw_dim() const override { return static_cast<int>(coef_.cols()); }

 private:
  Eigen::MatrixXd coef_;  // (d+1) x q
};

class KnnLabeler : public Labeler {
 public:
  KnnLabeler(const LabeledDataset& data, int k, bool fallback)
      : data_(data), k_(std::min(k, data.n())), fallback_(fallback) {}
  Eigen::VectorXd predict_raw(const Eigen::VectorXd& x) const override {
    int n = data_.n();
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Eigen::VectorXd d2(n);
    for (int i = 0; i < n; ++i)
      d2(i) = (data_.inputs.row(i).transpose() - x).squaredNorm();
    // ties broken by lower index
    std::partial_sort(idx.begin(), idx.begin() + k_, idx.end(),
                      [&](int a, int b) {
                        return d2(a) != d2(b) ? d2(a) < d2(b) : a < b;
                      });
    Eigen::VectorXd out = Eigen::VectorXd::Zero(data_.label_dim());
    for (int j = 0; j < k_; ++j) out += data_.labels.row(idx[j]).transpose();
    return out / k_;
  }
  int raw_dim() const override { return data_.label_dim(); }
  bool degenerate_fallback() const override { return fallback_; }

 private:
  LabeledDataset data_;
  int k_;
  bool fallback_;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1, right = -1;
  Eigen::VectorXd value;
};

class ForestLiteLabeler : public Labeler {
 public:
  ForestLiteLabeler(const LabeledDataset& data, const LabelerSpec& spec,
                    bool fallback)
      : q_(data.label_dim()), fallback_(fallback) {
    Rng rng(spec.seed);
    int n = data.n();
    int mtry = std::max(
        1, static_cast<int>(std::lround(std::sqrt(double(data.dim())))));
    trees_.resize(spec.forest_trees);
    std::vector<int> rows(n);
    for (auto& tree : trees_) {
      for (int i = 0; i < n; ++i)
        rows[i] = static_cast<int>(rng.uniform_int(n));
      build(tree, data, rows, 0, spec, mtry, rng);
    }
  }

  Eigen::VectorXd predict_raw(const Eigen::VectorXd& x) const override {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(q_);
    for (const auto& tree : trees_) {
      int node = 0;
      while (tree[node].feature >= 0)
        node = x(tree[node].feature) <= tree[node].threshold
                   ? tree[node].left
                   : tree[node].right;
      out += tree[node].value;
    }
    return out / static_cast<double>(trees_.size());
  }
  int raw_dim() const override { return q_; }
  bool degenerate_fallback() const override { return fallback_; }

 private:
  using Tree = std::vector<TreeNode>;

  void build(Tree& tree, const LabeledDataset& data, std::vector<int> rows,
             int depth, const LabelerSpec& spec, int mtry, Rng& rng) {
    tree.clear();
    build_node(tree, data, std::move(rows), depth, spec, mtry, rng);
  }

  int build_node(Tree& tree, const LabeledDataset& data, std::vector<int> rows,
                 int depth, const LabelerSpec& spec, int mtry, Rng& rng) {
    int node_id = static_cast<int>(tree.size());
    tree.emplace_back();
    int n = static_cast<int>(rows.size());

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(q_);
    for (int r : rows) mean += data.labels.row(r).transpose();
    mean /= n;

    bool can_split = depth < spec.forest_max_depth &&
                     n >= 2 * spec.forest_min_leaf;
    int best_feat = -1, best_pos = -1;
    double best_score = 0.0;
    std::vector<int> best_order;
    if (can_split) {
      double total_sse = 0.0;
      for (int r : rows)
        total_sse += (data.labels.row(r).transpose() - mean).squaredNorm();
      std::vector<int> feats(data.dim());
      std::iota(feats.begin(), feats.end(), 0);
      rng.shuffle(feats);
      int tried = std::min(mtry, data.dim());
      std::vector<int> order = rows;
      for (int fi = 0; fi < tried; ++fi) {
        int f = feats[fi];
        std::sort(order.begin(), order.end(), [&](int a, int b) {
          return data.inputs(a, f) < data.inputs(b, f);
        });
        // prefix sums of labels and squared norms
        Eigen::VectorXd lsum = Eigen::VectorXd::Zero(q_);
        double lsq = 0.0;
        Eigen::VectorXd tot = mean * n;
        double totsq = total_sse + tot.squaredNorm() / n;
        for (int i = 0; i + 1 < n; ++i) {
          lsum += data.labels.row(order[i]).transpose();
          lsq += data.labels.row(order[i]).squaredNorm();
          int nl = i + 1, nr = n - nl;
          if (nl < spec.forest_min_leaf || nr < spec.forest_min_leaf) continue;
          if (data.inputs(order[i], f) == data.inputs(order[i + 1], f))
            continue;
          Eigen::VectorXd rsum = tot - lsum;
          double rsq = totsq - lsq;
          double sse =
              (lsq - lsum.squaredNorm() / nl) + (rsq - rsum.squaredNorm() / nr);
          double score = total_sse - sse;
          if (score > best_score) {
            best_score = score;
            best_feat = f;
            best_pos = i;
            best_order = order;
          }
        }
      }
    }

    if (best_feat < 0) {
      tree[node_id].value = mean;
      return node_id;
    }
    double thr = 0.5 * (data.inputs(best_order[best_pos], best_feat) +
                        data.inputs(best_order[best_pos + 1], best_feat));
    std::vector<int> left(best_order.begin(),
                          best_order.begin() + best_pos + 1);
    std::vector<int> right(best_order.begin() + best_pos + 1,
                           best_order.end());
    int l = build_node(tree, data, std::move(left), depth + 1, spec, mtry, rng);
    int r =
        build_node(tree, data, std::move(right), depth + 1, spec, mtry, rng);
    tree[node_id].feature = best_feat;
    tree[node_id].threshold = thr;
    tree[node_id].left = l;
    tree[node_id].right = r;
    return node_id;
  }

  std::vector<Tree> trees_;
  int q_;
  bool fallback_;
};

class MlpLabeler : public Labeler {
 public:
  MlpLabeler(const LabeledDataset& data, const LabelerSpec& spec) {
    std::vector<int> sizes;
    sizes.push_back(data.dim());
    for (int h : spec.mlp_hidden) sizes.push_back(h);
    classifier_ = spec.mlp_classifier;
    sizes.push_back(classifier_ ? spec.mlp_classes : data.label_dim());
    net_ = std::make_unique<Mlp>(
        sizes, Mlp::Activation::LeakyReLU,
        classifier_ ? Mlp::Output::SoftmaxClassifier : Mlp::Output::Regression,
        spec.seed);
    net_->train(data.inputs, data.labels, spec.mlp_epochs, spec.mlp_lr,
                spec.mlp_batch, derive_seed(spec.seed, 0x6d6c70u));
  }
  Eigen::VectorXd predict_raw(const Eigen::VectorXd& x) const override {
    return net_->forward(x.transpose()).row(0).transpose();
  }
  Eigen::MatrixXd predict_raw_rows(const Eigen::MatrixXd& X) const override {
    return net_->forward(X);
  }
  Eigen::VectorXd label_from_raw(const Eigen::VectorXd& raw) const override {
    if (!classifier_) return raw;
    int best = 0;
    raw.maxCoeff(&best);
    return Eigen::VectorXd::Constant(1, static_cast<double>(best));
  }
  int raw_dim() const override { return net_->out_dim(); }
  int label_dim() const override { return classifier_ ? 1 : net_->out_dim(); }

 private:
  std::unique_ptr<Mlp> net_;
  bool classifier_ = false;
};

bool all_inputs_identical(const LabeledDataset& data) {
  for (int i = 1; i < data.n(); ++i)
    if (data.inputs.row(i) != data.inputs.row(0)) return false;
  return true;
}

}  // namespace

LabelerPtr fit(const LabelerSpec& spec, const LabeledDataset& data) {
  if (data.n() == 0) throw std::invalid_argument("fit: empty dataset");
  switch (spec.kind) {
    case LabelerSpec::Kind::ConstantMean:
      return std::make_shared<ConstantMeanLabeler>(
          data.labels.colwise().mean().transpose());
    case LabelerSpec::Kind::Ridge:
      return std::make_shared<RidgeLabeler>(data, spec.ridge_strength);
    case LabelerSpec::Kind::Knn:
      if (all_inputs_identical(data))
        return std::make_shared<ConstantMeanLabeler>(
            data.labels.colwise().mean().transpose(), true);
      return std::make_shared<KnnLabeler>(data, spec.knn_k, false);
    case LabelerSpec::Kind::ForestLite:
      if (all_inputs_identical(data))
        return std::make_shared<ConstantMeanLabeler>(
            data.labels.colwise().mean().transpose(), true);
      return std::make_shared<ForestLiteLabeler>(data, spec, false);
    case LabelerSpec::Kind::Mlp:
      return std::make_shared<MlpLabeler>(data, spec);
  }
  throw std::invalid_argument("fit: unknown labeler kind");
}

std::vector<LabelerPtr> train_fold_models(const LabeledDataset& data,
                                          const FoldAssignment& folds,
                                          const LabelerSpec& spec) {
  return train_fold_models_fn(
      data.n(), folds, spec.seed,
      [&](const std::vector<int>& idx, std::uint64_t seed) {
        LabelerSpec s = spec;
        s.seed = seed;
        return fit(s, data.subset(idx));
      });
}

std::vector<LabelerPtr> train_fold_models_fn(int n, const FoldAssignment& folds,
                                             std::uint64_t seed,
                                             const FitFn& fit_fn) {
  if (folds.K < 2)
    throw std::invalid_argument("train_fold_models: K >= 2 required");
  if (folds.n() != n)
    throw std::invalid_argument("train_fold_models: fold/data size mismatch");
  std::vector<LabelerPtr> models;
  models.reserve(folds.K);
  for (int k = 0; k < folds.K; ++k)
    models.push_back(fit_fn(folds.complement(k), derive_seed(seed, 1, k)));
  return models;
}

std::vector<BootstrapModel> bootstrap_models(const LabeledDataset& data, int K,
                                             int B, const LabelerSpec& spec,
                                             std::uint64_t seed) {
  return bootstrap_models_fn(
      data.n(), K, B, seed,
      [&](const std::vector<int>& idx, std::uint64_t s) {
        LabelerSpec sp = spec;
        sp.seed = s;
        return fit(sp, data.subset(idx));
      });
}

std::vector<BootstrapModel> bootstrap_models_fn(int n, int K, int B,
                                                std::uint64_t seed,
                                                const FitFn& fit_fn) {
  if (B < 2) throw std::invalid_argument("bootstrap_models: B >= 2 required");
  int take = n - n / K;
  if (take < 1 || take > n)
    throw std::invalid_argument("bootstrap_models: bad subsample size");
  Rng rng(derive_seed(seed, 2));
  std::vector<int> idx(n);
  std::vector<BootstrapModel> out;
  out.reserve(B);
  for (int b = 0; b < B; ++b) {
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    BootstrapModel bm;
    bm.train_idx.assign(idx.begin(), idx.begin() + take);
    std::sort(bm.train_idx.begin(), bm.train_idx.end());
    bm.model = fit_fn(bm.train_idx, derive_seed(seed, 3, b));
    out.push_back(std::move(bm));
  }
  return out;
}

}  // namespace ppi

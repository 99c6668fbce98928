#include "ppi/meta.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace ppi {

ParamLoss mlp_param_loss(const Mlp& net) {
  return [m = net](const Eigen::VectorXd& theta, const Eigen::MatrixXd& X,
                   const Eigen::MatrixXd& Y) mutable {
    m.set_params(theta);
    return m.loss_and_grad(X, Y);
  };
}

double kappa(int t, int T, KappaKind kind) {
  if (T < 1) throw std::invalid_argument("kappa: T < 1");
  double r = static_cast<double>(t) / T;
  return kind == KappaKind::Linear ? r : r * r;
}

std::pair<double, Eigen::VectorXd> ppi_batch_loss(
    const ParamLoss& loss, const Eigen::VectorXd& theta,
    const Eigen::MatrixXd& Xl, const Eigen::MatrixXd& Yl,
    const Eigen::MatrixXd& Xu, const Labeler& f, double kappa_t) {
  Eigen::MatrixXd yu = f.predict_rows(Xu);
  Eigen::MatrixXd yl = f.predict_rows(Xl);
  auto [vu, gu] = loss(theta, Xu, yu);
  auto [vf, gf] = loss(theta, Xl, yl);
  auto [vt, gt] = loss(theta, Xl, Yl);
  return {vu - kappa_t * (vf - vt),
          (gu - kappa_t * (gf - gt)).eval()};
}

std::pair<double, Eigen::VectorXd> tuned_cppi_batch_loss(
    const ParamLoss& loss, const Eigen::VectorXd& theta, double lambda,
    double kappa_t, const Eigen::MatrixXd& Xu,
    const std::vector<Eigen::MatrixXd>& yu,
    const std::vector<FoldBatch>& fold_batches,
    const std::vector<Eigen::MatrixXd>& yl) {
  std::size_t K = fold_batches.size();
  if (yu.size() != K || yl.size() != K)
    throw std::invalid_argument("tuned_cppi_batch_loss: fold count mismatch");
  double val = 0.0;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(theta.size());
  for (std::size_t k = 0; k < K; ++k) {
    auto [vu, gu] = loss(theta, Xu, yu[k]);
    val += lambda * vu;
    g += lambda * gu;
    auto [vf, gf] = loss(theta, fold_batches[k].X, yl[k]);
    auto [vt, gt] = loss(theta, fold_batches[k].X, fold_batches[k].Y);
    val -= kappa_t * (lambda * vf - vt);
    g -= kappa_t * (lambda * gf - gt);
  }
  return {val, std::move(g)};
}

int sample_class(const Eigen::RowVectorXd& probs, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  for (int j = 0; j < probs.size(); ++j) {
    acc += probs(j);
    if (u < acc) return j;
  }
  return static_cast<int>(probs.size()) - 1;
}

namespace {

Eigen::MatrixXd sample_labels(const Mlp& teacher, const Eigen::MatrixXd& X,
                              Rng& rng) {
  Eigen::MatrixXd probs = teacher.forward(X);
  Eigen::MatrixXd y(X.rows(), 1);
  for (int i = 0; i < X.rows(); ++i)
    y(i, 0) = sample_class(probs.row(i), rng);
  return y;
}

}  // namespace

void mpl_step(StudentTeacherState& state, const Eigen::MatrixXd& Xl,
              const Eigen::MatrixXd& Yl, const Eigen::MatrixXd& Xu,
              const MetaConfig& cfg, Rng& rng) {
  Mlp& teacher = state.teachers.at(0);
  Eigen::MatrixXd yu = sample_labels(teacher, Xu, rng);

  Eigen::VectorXd g_u = state.student.loss_and_grad(Xu, yu).second;
  state.student.gradient_step(Xu, yu, cfg.eta_S);
  Eigen::VectorXd g_l = state.student.loss_and_grad(Xl, Yl).second;

  double feedback = cfg.eta_S * g_l.dot(g_u);
  Eigen::VectorXd grad = teacher.loss_and_grad(Xl, Yl).second +
                         feedback * teacher.loss_and_grad(Xu, yu).second;
  teacher.set_params(teacher.params() - cfg.eta_T * grad);
  ++state.t;
}

double mcppi_student_step(StudentTeacherState& state, double lambda,
                          double kappa_t, const Eigen::MatrixXd& Xu,
                          const std::vector<Eigen::MatrixXd>& yu,
                          const std::vector<FoldBatch>& fold_batches,
                          const std::vector<Eigen::MatrixXd>& yl,
                          double eta_S) {
  ParamLoss loss = mlp_param_loss(state.student);
  Eigen::VectorXd theta = state.student.params();
  auto [val, g] =
      tuned_cppi_batch_loss(loss, theta, lambda, kappa_t, Xu, yu,
                            fold_batches, yl);
  state.student.set_params(theta - eta_S * g);
  return val;
}

Eigen::VectorXd mcppi_teacher_grad(const Mlp& teacher_k,
                                   const Mlp& student_pre,
                                   const Eigen::VectorXd& g_l,
                                   const Eigen::MatrixXd& Xu,
                                   const Eigen::MatrixXd& yu_k,
                                   const Eigen::MatrixXd& Xl_k,
                                   const Eigen::MatrixXd& Yl_k,
                                   const Eigen::MatrixXd& yl_k, double lambda,
                                   double eta_S) {
  Eigen::VectorXd grad = teacher_k.loss_and_grad(Xl_k, Yl_k).second;
  if (lambda != 0.0) {
    double wu = lambda * eta_S * g_l.dot(
        student_pre.loss_and_grad(Xu, yu_k).second);
    double wl = lambda * eta_S * g_l.dot(
        student_pre.loss_and_grad(Xl_k, yl_k).second);
    grad += wu * teacher_k.loss_and_grad(Xu, yu_k).second;
    grad -= wl * teacher_k.loss_and_grad(Xl_k, yl_k).second;
  }
  return grad;
}

double mcppi_lambda_plugin(const std::vector<Mlp>& teachers,
                           const Eigen::MatrixXd& Xl,
                           const Eigen::MatrixXd& Yl, int classes, double r) {
  Eigen::MatrixXd pbar = Eigen::MatrixXd::Zero(Xl.rows(), classes);
  for (const Mlp& t : teachers) pbar += t.forward(Xl);
  pbar /= static_cast<double>(teachers.size());

  int n = static_cast<int>(Xl.rows());
  double cov_sum = 0.0, var_sum = 0.0;
  for (int j = 0; j < classes; ++j) {
    Eigen::VectorXd onehot(n);
    for (int i = 0; i < n; ++i)
      onehot(i) = static_cast<int>(Yl(i, 0)) == j ? 1.0 : 0.0;
    double mo = onehot.mean(), mp = pbar.col(j).mean();
    Eigen::VectorXd dp = pbar.col(j).array() - mp;
    cov_sum += (onehot.array() - mo).matrix().dot(dp) / n;
    var_sum += dp.squaredNorm() / n;
  }
  if (var_sum <= 1e-12) return 0.0;
  return std::clamp(cov_sum / ((1.0 + r) * var_sum), 0.0, 1.0);
}

namespace {

std::vector<int> draw_with_replacement(const std::vector<int>& pool, int count,
                                       Rng& rng) {
  std::vector<int> idx(count);
  for (int i = 0; i < count; ++i)
    idx[i] = pool[rng.uniform_int(static_cast<int>(pool.size()))];
  return idx;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& M,
                          const std::vector<int>& idx) {
  Eigen::MatrixXd out(idx.size(), M.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(i) = M.row(idx[i]);
  return out;
}

}  // namespace

McppiTrace mcppi_train(StudentTeacherState& state,
                       const LabeledDataset& labeled,
                       const UnlabeledDataset& unlabeled,
                       const FoldAssignment& folds, const MetaConfig& cfg) {
  int K = folds.K;
  if (static_cast<int>(state.teachers.size()) != K)
    throw std::invalid_argument("mcppi_train: teacher count != K");
  int classes = state.student.out_dim();
  double r = static_cast<double>(labeled.n()) / unlabeled.n();

  std::vector<int> all_unlabeled(unlabeled.n());
  for (int i = 0; i < unlabeled.n(); ++i) all_unlabeled[i] = i;

  Rng rng(derive_seed(cfg.seed, 20));
  McppiTrace trace;
  double lambda = cfg.lambda;

  for (int step = 0; step < cfg.T; ++step) {
    if (cfg.lambda_refresh > 0 && step % cfg.lambda_refresh == 0)
      lambda = mcppi_lambda_plugin(state.teachers, labeled.inputs,
                                   labeled.labels, classes, r);

    std::vector<FoldBatch> fold_batches(K);
    for (int k = 0; k < K; ++k) {
      std::vector<int> idx =
          draw_with_replacement(folds.members[k], cfg.batch_labeled, rng);
      fold_batches[k].X = take_rows(labeled.inputs, idx);
      fold_batches[k].Y = take_rows(labeled.labels, idx);
    }
    Eigen::MatrixXd Xu = take_rows(
        unlabeled.inputs,
        draw_with_replacement(all_unlabeled, cfg.batch_unlabeled, rng));

    std::vector<Eigen::MatrixXd> yu(K), yl(K);
    for (int k = 0; k < K; ++k) {
      yu[k] = sample_labels(state.teachers[k], Xu, rng);
      yl[k] = sample_labels(state.teachers[k], fold_batches[k].X, rng);
    }

    double kap = kappa(state.t, cfg.T, cfg.kappa_kind);
    Mlp student_pre = state.student;
    double val = mcppi_student_step(state, lambda, kap, Xu, yu, fold_batches,
                                    yl, cfg.eta_S);

    Eigen::MatrixXd Xl_all(cfg.batch_labeled * K, labeled.dim());
    Eigen::MatrixXd Yl_all(cfg.batch_labeled * K, labeled.labels.cols());
    for (int k = 0; k < K; ++k) {
      Xl_all.middleRows(k * cfg.batch_labeled, cfg.batch_labeled) =
          fold_batches[k].X;
      Yl_all.middleRows(k * cfg.batch_labeled, cfg.batch_labeled) =
          fold_batches[k].Y;
    }
    Eigen::VectorXd g_l = state.student.loss_and_grad(Xl_all, Yl_all).second;

    for (int k = 0; k < K; ++k) {
      Eigen::VectorXd grad = mcppi_teacher_grad(
          state.teachers[k], student_pre, g_l, Xu, yu[k], fold_batches[k].X,
          fold_batches[k].Y, yl[k], lambda, cfg.eta_S);
      state.teachers[k].set_params(state.teachers[k].params() -
                                   cfg.eta_T * grad);
    }

    trace.student_loss.push_back(val);
    trace.lambda.push_back(lambda);
    ++state.t;
  }
  return trace;
}

namespace {

nlohmann::json net_to_json(const Mlp& net) {
  Eigen::VectorXd p = net.params();
  return nlohmann::json{
      {"layer_sizes", net.layer_sizes()},
      {"activation", static_cast<int>(net.activation_kind())},
      {"output", static_cast<int>(net.output_kind())},
      {"params", std::vector<double>(p.data(), p.data() + p.size())}};
}

Mlp net_from_json(const nlohmann::json& j) {
  Mlp net(j.at("layer_sizes").get<std::vector<int>>(),
          static_cast<Mlp::Activation>(j.at("activation").get<int>()),
          static_cast<Mlp::Output>(j.at("output").get<int>()), 0);
  std::vector<double> p = j.at("params").get<std::vector<double>>();
  if (static_cast<int>(p.size()) != net.param_count())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  net.set_params(Eigen::Map<Eigen::VectorXd>(p.data(), p.size()));
  return net;
}

}  // namespace

void save_checkpoint(const StudentTeacherState& state,
                     const std::string& path) {
  nlohmann::json j;
  j["student"] = net_to_json(state.student);
  j["teachers"] = nlohmann::json::array();
  for (const Mlp& t : state.teachers) j["teachers"].push_back(net_to_json(t));
  j["t"] = state.t;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
  out << j.dump(2) << "\n";
}

StudentTeacherState load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  nlohmann::json j;
  in >> j;
  StudentTeacherState state{net_from_json(j.at("student")),
                            {},
                            j.at("t").get<int>()};
  for (const auto& tj : j.at("teachers"))
    state.teachers.push_back(net_from_json(tj));
  return state;
}

void append_loss_curve(const std::string& path, int step, double student_loss,
                       const std::vector<double>& teacher_losses,
                       double lambda) {
  bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("loss curve: cannot open " + path);
  if (fresh) {
    out << "step,student_loss";
    for (std::size_t k = 0; k < teacher_losses.size(); ++k)
      out << ",teacher_" << k + 1 << "_loss";
    out << ",lambda\n";
  }
  char buf[64];
  out << step;
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    out << ',' << buf;
  };
  put(student_loss);
  for (double v : teacher_losses) put(v);
  put(lambda);
  out << "\n";
}

}  // namespace ppi

#include "ppi/harness.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "ppi/datasets.hpp"
#include "ppi/estimators.hpp"
#include "ppi/losses.hpp"
#include "ppi/meta.hpp"
#include "ppi/mlp.hpp"
#include "ppi/rng.hpp"
#include "ppi/tuning.hpp"
#include "ppi/wireless.hpp"

namespace ppi {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

const std::vector<std::string> kExperiments = {
    "synth-mean", "synth-linreg", "beam-align",
    "beam-align-nn", "mcppi-beam", "localize"};

const std::vector<std::string> kSchemes = {
    "ERM", "SS", "PPI", "TunedPPI", "CPPI", "TunedCPPI",
    "PerfectCSI", "MPL", "MCPPI", "TunedCPPIBatch"};

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

std::uint64_t trial_seed(std::uint64_t master, const std::string& experiment,
                         double sweep, int trial) {
  std::uint64_t bits;
  std::memcpy(&bits, &sweep, sizeof(bits));
  return derive_seed(master, fnv1a(experiment), bits,
                     static_cast<std::uint64_t>(trial));
}

// ---------------------------------------------------------------- config

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  auto as_int = [&] { return std::stoi(value); };
  auto as_u64 = [&] { return std::stoull(value); };
  auto as_double = [&] { return std::stod(value); };
  auto as_list = [&] {
    std::vector<double> out;
    for (const std::string& p : split(value, ','))
      out.push_back(std::stod(p));
    return out;
  };
  auto as_ilist = [&] {
    std::vector<int> out;
    for (const std::string& p : split(value, ',')) out.push_back(std::stoi(p));
    return out;
  };

  if (key == "experiment") {
    experiment = value;
    // regression drops the mean shift, carries a third covariate that only
    // the labelers see, and wants a smoother forest
    if (experiment == "synth-linreg") {
      d = 3;
      mu = 0.0;
      forest_trees = 20;
    }
  }
  else if (key == "schemes") schemes = split(value, ',');
  else if (key == "sweep.key") sweep_key = value;
  else if (key == "sweep.values") sweep = as_list();
  else if (key == "trials") trials = as_int();
  else if (key == "seed") seed = as_u64();
  else if (key == "out") out_dir = value;
  else if (key == "estimator.K") K = as_int();
  else if (key == "estimator.B") B = as_int();
  else if (key == "estimator.gamma") gamma = as_double();
  else if (key == "estimator.lambda") lambda_override = as_double();
  else if (key == "estimator.var_subsample") var_subsample = as_int();
  else if (key == "labeler.kind") labeler = value;
  else if (key == "labeler.knn_k") knn_k = as_int();
  else if (key == "labeler.trees") forest_trees = as_int();
  else if (key == "labeler.depth") forest_depth = as_int();
  else if (key == "labeler.min_leaf") forest_min_leaf = as_int();
  else if (key == "synth.d") d = as_int();
  else if (key == "synth.mu") mu = as_double();
  else if (key == "synth.sigma") sigma = as_double();
  else if (key == "synth.r2") r2 = as_double();
  else if (key == "synth.n") n = as_int();
  else if (key == "synth.N") N = as_int();
  else if (key == "beam.ny") ny = as_int();
  else if (key == "beam.nz") nz = as_int();
  else if (key == "beam.positions") positions = as_int();
  else if (key == "beam.scatterers") scatterers = as_int();
  else if (key == "beam.env_L") env_L = as_int();
  else if (key == "beam.reflection") reflection = as_double();
  else if (key == "beam.bandwidth") rbf_bandwidth = as_double();
  else if (key == "beam.ckm_L") ckm_L = as_int();
  else if (key == "beam.ckm_epochs") ckm_epochs = as_int();
  else if (key == "beam.landmarks") landmarks = as_int();
  else if (key == "beam.softmax_gamma") softmax_gamma = as_double();
  else if (key == "beam.power") power = as_double();
  else if (key == "beam.noise_var") noise_var = as_double();
  else if (key == "beam.test_frac") test_frac = as_double();
  else if (key == "meta.steps") meta_steps = as_int();
  else if (key == "meta.eta_s") eta_s = as_double();
  else if (key == "meta.eta_t") eta_t = as_double();
  else if (key == "meta.batch_labeled") batch_labeled = as_int();
  else if (key == "meta.batch_unlabeled") batch_unlabeled = as_int();
  else if (key == "meta.lambda_refresh") lambda_refresh = as_int();
  else if (key == "meta.student_hidden") student_hidden = as_ilist();
  else if (key == "localize.aps") ap_count = as_int();
  else if (key == "localize.shadow_std") shadow_std = as_double();
  else if (key == "localize.elm_hidden") elm_hidden = as_int();
  else if (key == "localize.elm_gamma") elm_gamma = as_double();
  else if (key == "localize.csv") rssi_csv = value;
  else throw std::invalid_argument("unknown config key: " + key);
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config: parse error: ") +
                                e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: not an object");
  ExperimentConfig cfg;
  // the experiment key carries defaults, so apply it before everything else
  if (j.contains("experiment") && j["experiment"].is_string())
    cfg.set("experiment", j["experiment"].get<std::string>());
  for (const auto& [key, val] : j.items()) {
    std::string s;
    if (val.is_string()) {
      s = val.get<std::string>();
    } else if (val.is_array()) {
      for (std::size_t i = 0; i < val.size(); ++i) {
        if (i) s += ',';
        s += val[i].is_string() ? val[i].get<std::string>()
                                : val[i].dump();
      }
    } else {
      s = val.dump();
    }
    cfg.set(key, s);
  }
  return cfg;
}

void ExperimentConfig::check() const {
  if (!contains(kExperiments, experiment))
    throw std::invalid_argument("config: unknown experiment " + experiment);
  if (schemes.empty()) throw std::invalid_argument("config: no schemes");
  for (const std::string& s : schemes)
    if (!contains(kSchemes, s))
      throw std::invalid_argument("config: unknown scheme " + s);
  if (sweep.empty()) throw std::invalid_argument("config: empty sweep grid");
  if (trials < 1) throw std::invalid_argument("config: trials < 1");
  if (lambda_override > 1.0)
    throw std::invalid_argument("config: lambda override > 1");
  if (sweep_key != "n" && sweep_key != "N" && sweep_key != "R2" &&
      sweep_key != "ny" && sweep_key != "nz")
    throw std::invalid_argument("config: unknown sweep key " + sweep_key);
}

namespace {

ExperimentConfig at_sweep(const ExperimentConfig& cfg, double v) {
  ExperimentConfig c = cfg;
  if (cfg.sweep_key == "n") c.n = static_cast<int>(std::lround(v));
  else if (cfg.sweep_key == "N") c.N = static_cast<int>(std::lround(v));
  else if (cfg.sweep_key == "R2") c.r2 = v;
  else if (cfg.sweep_key == "ny") c.ny = static_cast<int>(std::lround(v));
  else if (cfg.sweep_key == "nz") c.nz = static_cast<int>(std::lround(v));
  return c;
}

LabelerSpec labeler_spec(const ExperimentConfig& cfg, std::uint64_t seed) {
  LabelerSpec s;
  if (cfg.labeler == "constant") s.kind = LabelerSpec::Kind::ConstantMean;
  else if (cfg.labeler == "ridge") s.kind = LabelerSpec::Kind::Ridge;
  else if (cfg.labeler == "knn") s.kind = LabelerSpec::Kind::Knn;
  else if (cfg.labeler == "forest") s.kind = LabelerSpec::Kind::ForestLite;
  else if (cfg.labeler == "mlp") s.kind = LabelerSpec::Kind::Mlp;
  else throw std::invalid_argument("config: unknown labeler " + cfg.labeler);
  s.knn_k = cfg.knn_k;
  s.forest_trees = cfg.forest_trees;
  s.forest_max_depth = cfg.forest_depth;
  s.forest_min_leaf = cfg.forest_min_leaf;
  s.seed = seed;
  return s;
}

// Shared fitting of the convex schemes; folds, fold models and the
// half-split predictor are cached so schemes that must coincide at the
// lambda endpoints see identical inputs.
struct SchemeContext {
  LossModel model;
  LabeledDataset lab;
  UnlabeledDataset unl;
  const ExperimentConfig* cfg = nullptr;
  std::uint64_t tseed = 0;
  FitFn fitfn;

  std::optional<FoldAssignment> folds;
  std::vector<LabelerPtr> fold_models;
  LabelerPtr f_all;
  LabelerPtr f_half;
  TuningEstimate last_tuning;

  SolveOptions solve_opts() const {
    if (model.kind == LossModel::Kind::RidgeSoftmax)
      return SolveOptions{1e-6, 2000};
    return SolveOptions{};
  }

  void ensure_folds() {
    if (folds) return;
    folds = make_folds(lab.n(), cfg->K, derive_seed(tseed, 130));
    fold_models = train_fold_models_fn(lab.n(), *folds,
                                       derive_seed(tseed, 131), fitfn);
  }

  const Labeler& all_model() {
    if (!f_all) {
      std::vector<int> idx(lab.n());
      for (int i = 0; i < lab.n(); ++i) idx[i] = i;
      f_all = fitfn(idx, derive_seed(tseed, 110));
    }
    return *f_all;
  }

  const Labeler& half_model() {
    if (!f_half) {
      std::vector<int> idx(lab.n());
      for (int i = 0; i < lab.n(); ++i) idx[i] = i;
      Rng rng(derive_seed(tseed, 120));
      rng.shuffle(idx);
      idx.resize(std::max(1, lab.n() / 2));
      std::sort(idx.begin(), idx.end());
      f_half = fitfn(idx, derive_seed(tseed, 121));
    }
    return *f_half;
  }

  double tuned_ppi_lambda() {
    if (cfg->lambda_override >= 0.0) return cfg->lambda_override;
    const Labeler& f = half_model();
    (void)f;
    std::vector<int> half(lab.n());
    for (int i = 0; i < lab.n(); ++i) half[i] = i;
    Rng rng(derive_seed(tseed, 120));
    rng.shuffle(half);
    half.resize(std::max(1, lab.n() / 2));
    std::sort(half.begin(), half.end());
    LabeledDataset half_data = lab.subset(half);
    // bootstrap runs resample the predictor half; their global index sets
    // mark which labeled points count as held out for the cross-covariance
    std::vector<BootstrapModel> boot;
    for (auto& bm : bootstrap_models_fn(
             half_data.n(), cfg->K, cfg->B, derive_seed(tseed, 122),
             [&](const std::vector<int>& idx, std::uint64_t s) {
               std::vector<int> global;
               global.reserve(idx.size());
               for (int i : idx) global.push_back(half[i]);
               return fitfn(global, s);
             })) {
      std::vector<int> global;
      for (int i : bm.train_idx) global.push_back(half[i]);
      std::sort(global.begin(), global.end());
      boot.push_back({bm.model, std::move(global)});
    }
    Objective pilot =
        tuned_ppi_objective(model, lab, unl, half_model(), 0.5);
    Eigen::VectorXd theta = solve(pilot, solve_opts()).theta;
    Eigen::MatrixXd H = estimate_hessian(model, theta, lab);
    UnlabeledDataset capped = unl;
    if (cfg->var_subsample > 0 && unl.n() > cfg->var_subsample)
      capped.inputs = unl.inputs.topRows(cfg->var_subsample);
    Eigen::MatrixXd V = estimate_var_fbar(boot, theta, capped, model);
    Eigen::MatrixXd C = estimate_crosscov(boot, theta, lab, model);
    return lambda_hat(H, V, C, lab.n(), unl.n()).first;
  }

  Eigen::VectorXd theta_for(const std::string& scheme) {
    if (scheme == "ERM")
      return solve(erm_objective(model, lab), solve_opts()).theta;
    if (scheme == "SS")
      return solve(ss_objective(model, lab, unl, all_model(), cfg->gamma),
                   solve_opts())
          .theta;
    if (scheme == "PPI")
      return solve(ppi_objective(model, lab, unl, half_model()),
                   solve_opts())
          .theta;
    if (scheme == "TunedPPI")
      return solve(
                 tuned_ppi_objective(model, lab, unl, half_model(),
                                     tuned_ppi_lambda()),
                 solve_opts())
          .theta;
    if (scheme == "CPPI") {
      ensure_folds();
      return solve(cppi_objective(model, lab, *folds, fold_models, unl),
                   solve_opts())
          .theta;
    }
    if (scheme == "TunedCPPI") {
      ensure_folds();
      if (cfg->lambda_override >= 0.0)
        return solve(tuned_cppi_objective(model, lab, *folds, fold_models,
                                          unl, cfg->lambda_override),
                     solve_opts())
            .theta;
      TunedCppiOptions opts;
      opts.K = cfg->K;
      opts.B = cfg->B;
      opts.seed = derive_seed(tseed, 132);
      opts.var_subsample = cfg->var_subsample;
      TunedCppiResult res = tuned_cppi_fit_prepared(
          model, lab, unl, *folds, fold_models, fitfn, opts, solve_opts());
      last_tuning = res.tuning;
      return res.theta;
    }
    throw std::invalid_argument("scheme " + scheme +
                                " not available for this experiment");
  }
};

FitFn spec_fitfn(LabeledDataset lab, LabelerSpec base) {
  return [lab = std::move(lab), base](const std::vector<int>& idx,
                                      std::uint64_t s) {
    LabelerSpec sp = base;
    sp.seed = s;
    return fit(sp, lab.subset(idx));
  };
}

// ------------------------------------------------------- synthetic trials

struct SynthSetup {
  SchemeContext ctx;
  Eigen::VectorXd theta_star;
};

SynthSetup make_synth_setup(const ExperimentConfig& c, std::uint64_t tseed) {
  SynthParams p;
  p.d = c.d;
  p.mu = c.mu;
  p.sigma = c.sigma;
  p.R = std::sqrt(std::clamp(c.r2, 0.0, 1.0));
  p.seed = derive_seed(tseed, 100);
  auto [lab, unl] = gen_synthetic(p, c.n, c.N);

  SynthSetup s;
  if (c.experiment == "synth-mean") {
    s.ctx.model = mean_estimation_model();
    s.theta_star = Eigen::VectorXd::Constant(1, c.mu);
    s.ctx.lab = std::move(lab);
    s.ctx.unl = std::move(unl);
  } else {
    // the loss regresses on the first two covariates; the labelers still
    // see the full feature vector
    if (c.d < 2)
      throw std::invalid_argument("synth-linreg: d >= 2 required");
    s.ctx.model = linear_regression_model(c.d, leading_columns(2));
    s.theta_star = synth_beta(p).head(2);
    s.ctx.lab = std::move(lab);
    s.ctx.unl = std::move(unl);
  }
  s.ctx.cfg = &c;
  s.ctx.tseed = tseed;
  s.ctx.fitfn = spec_fitfn(s.ctx.lab, labeler_spec(c, 0));
  return s;
}

struct Metric {
  std::string scheme;
  std::string name;
  double value;
};

std::vector<Metric> synth_trial(const ExperimentConfig& c,
                                std::uint64_t tseed) {
  SynthSetup s = make_synth_setup(c, tseed);
  std::vector<Metric> out;
  for (const std::string& scheme : c.schemes) {
    Eigen::VectorXd theta = s.ctx.theta_for(scheme);
    out.push_back({scheme, "mse", (theta - s.theta_star).squaredNorm()});
  }
  return out;
}

// ------------------------------------------------------ localization trial

struct LocalizeSetup {
  SchemeContext ctx;
  LabeledDataset test;
};

LocalizeSetup make_localize_setup(const ExperimentConfig& c,
                                  std::uint64_t tseed) {
  LocalizeSetup s;
  int test_n = std::max(
      50, static_cast<int>(std::lround(c.test_frac * (c.n + c.N))));
  LabeledDataset lab_all;
  UnlabeledDataset unl;
  if (!c.rssi_csv.empty()) {
    std::vector<RssiRecord> recs = load_rssi_csv(c.rssi_csv);
    int total = static_cast<int>(recs.size());
    if (total < c.n + 10)
      throw std::runtime_error("localize: csv too small for n");
    std::vector<int> idx(total);
    for (int i = 0; i < total; ++i) idx[i] = i;
    Rng rng(derive_seed(tseed, 300));
    rng.shuffle(idx);
    int m = static_cast<int>(recs[0].rssi.size());
    test_n = std::max(10, static_cast<int>(std::lround(c.test_frac * total)));
    int n_lab = std::min(c.n, total - test_n);
    int n_unl = total - test_n - n_lab;
    auto fill = [&](int offset, int count, LabeledDataset& out) {
      out.inputs.resize(count, m);
      out.labels.resize(count, 2);
      for (int i = 0; i < count; ++i) {
        out.inputs.row(i) = recs[idx[offset + i]].rssi.transpose();
        out.labels.row(i) = recs[idx[offset + i]].position.transpose();
      }
    };
    fill(0, n_lab, lab_all);
    fill(n_lab, test_n, s.test);
    LabeledDataset tmp;
    fill(n_lab + test_n, n_unl, tmp);
    unl.inputs = tmp.inputs;
  } else {
    RssiSynthConfig rc;
    rc.m = c.ap_count;
    rc.shadow_std = c.shadow_std;
    rc.seed = derive_seed(tseed, 300);
    RssiSynthData data = gen_synthetic_rssi(rc, c.n + test_n, c.N);
    std::vector<int> head(c.n), tail(test_n);
    for (int i = 0; i < c.n; ++i) head[i] = i;
    for (int i = 0; i < test_n; ++i) tail[i] = c.n + i;
    lab_all = data.labeled.subset(head);
    s.test = data.labeled.subset(tail);
    unl = data.unlabeled;
  }

  // standardize the RSSI features so the ELM sigmoids stay responsive
  Eigen::RowVectorXd mean =
      (lab_all.inputs.colwise().sum() + unl.inputs.colwise().sum()) /
      (lab_all.n() + unl.n());
  Eigen::MatrixXd stacked(lab_all.n() + unl.n(), lab_all.dim());
  stacked << lab_all.inputs, unl.inputs;
  Eigen::RowVectorXd sd =
      ((stacked.rowwise() - mean).colwise().squaredNorm() / stacked.rows())
          .cwiseSqrt()
          .cwiseMax(1e-9);
  auto standardize = [&](Eigen::MatrixXd& X) {
    X = (X.rowwise() - mean).array().rowwise() / sd.array();
  };
  standardize(lab_all.inputs);
  standardize(unl.inputs);
  standardize(s.test.inputs);

  FeatureMap map =
      make_elm_hidden(lab_all.dim(), c.elm_hidden, derive_seed(tseed, 301));
  s.ctx.model = elm_ridge_model(lab_all.dim(), c.elm_gamma, map);
  s.ctx.lab = std::move(lab_all);
  s.ctx.unl = std::move(unl);
  s.ctx.cfg = &c;
  s.ctx.tseed = tseed;
  s.ctx.fitfn = spec_fitfn(s.ctx.lab, labeler_spec(c, 0));
  return s;
}

std::vector<Metric> localize_trial(const ExperimentConfig& c,
                                   std::uint64_t tseed) {
  LocalizeSetup s = make_localize_setup(c, tseed);
  Eigen::MatrixXd F = s.ctx.model.map_rows(s.test.inputs);
  int p = s.ctx.model.feat_dim();
  std::vector<Metric> out;
  for (const std::string& scheme : c.schemes) {
    Eigen::VectorXd theta = s.ctx.theta_for(scheme);
    Eigen::MatrixXd pred(s.test.n(), 2);
    pred.col(0) = F * theta.head(p);
    pred.col(1) = F * theta.tail(p);
    Eigen::MatrixXd err = (pred - s.test.labels).cwiseAbs();
    out.push_back({scheme, "mae_lon", err.col(0).mean()});
    out.push_back({scheme, "mae_lat", err.col(1).mean()});
  }
  return out;
}

// ------------------------------------------------------------ beam trials

struct BeamSetup {
  Environment env;
  ArrayGeometry geom;
  Codebook tx;
  Codebook rx;
  int classes = 0;
  SchemeContext ctx;
  Eigen::MatrixXd test_pos;
  Eigen::VectorXd test_labels;
};

BeamSetup make_beam_setup(const ExperimentConfig& c, std::uint64_t tseed) {
  BeamSetup s;
  Region region;
  region.lo = Eigen::Vector3d(20.0, -20.0, 0.0);
  region.hi = Eigen::Vector3d(60.0, 20.0, 30.0);
  s.env = gen_environment(region, c.scatterers, c.env_L,
                          derive_seed(tseed, 200));
  s.env.reflection_loss = c.reflection;
  s.geom.tx_ny = c.ny;
  s.geom.tx_nz = c.nz;
  s.tx = make_upa_codebook(c.ny, c.nz, s.geom.spacing);
  s.rx = trivial_rx_codebook(s.geom.rx_antennas);
  s.classes = s.tx.size() * s.rx.size();

  Eigen::MatrixXd pos =
      sample_positions(region, c.positions, derive_seed(tseed, 201));
  LabeledDataset data = beam_dataset(s.env, s.geom, s.tx, s.rx, pos);

  std::vector<int> idx(c.positions);
  for (int i = 0; i < c.positions; ++i) idx[i] = i;
  Rng rng(derive_seed(tseed, 202));
  rng.shuffle(idx);
  int test_n = std::max(1, static_cast<int>(
                               std::lround(c.test_frac * c.positions)));
  int n_lab = std::min(c.n, c.positions - test_n - 1);
  std::vector<int> test_idx(idx.begin(), idx.begin() + test_n);
  std::vector<int> lab_idx(idx.begin() + test_n, idx.begin() + test_n + n_lab);
  std::vector<int> unl_idx(idx.begin() + test_n + n_lab, idx.end());

  LabeledDataset test = data.subset(test_idx);
  s.test_pos = test.inputs;
  s.test_labels = test.labels.col(0);
  s.ctx.lab = data.subset(lab_idx);
  s.ctx.unl.inputs = data.subset(unl_idx).inputs;

  Eigen::MatrixXd pool(s.ctx.lab.n() + s.ctx.unl.n(), 3);
  pool << s.ctx.lab.inputs, s.ctx.unl.inputs;
  FeatureMap map = fit_direction_rbf(
      pool, s.env.bs_position, std::min(c.landmarks, (int)pool.rows()),
      c.rbf_bandwidth, 1e-8, derive_seed(tseed, 203));
  s.ctx.model =
      ridge_softmax_model(3, s.classes, c.softmax_gamma, std::move(map));
  s.ctx.cfg = &c;
  s.ctx.tseed = tseed;

  // predictor c(X) regresses path parameters; the labeler synthesizes the
  // channel and picks the beam
  const Environment& env = s.env;
  const ArrayGeometry geom = s.geom;
  const Codebook tx = s.tx;
  const Codebook rx = s.rx;
  Eigen::MatrixXd lab_pos = s.ctx.lab.inputs;
  int L = c.ckm_L;
  int epochs = c.ckm_epochs;
  s.ctx.fitfn = [env, geom, tx, rx, lab_pos, L, epochs](
                    const std::vector<int>& idx2, std::uint64_t seed) {
    Eigen::MatrixXd sub(idx2.size(), 3);
    std::vector<PathSet> paths(idx2.size());
    for (std::size_t i = 0; i < idx2.size(); ++i) {
      sub.row(i) = lab_pos.row(idx2[i]);
      paths[i] = path_set(env, sub.row(i).transpose());
    }
    LabelerSpec ms;
    ms.mlp_hidden = {64, 128};
    ms.mlp_epochs = epochs;
    ms.mlp_lr = 5e-3;
    ms.mlp_batch = 16;
    ms.seed = seed;
    return ckm_labeler_fit(sub, paths, geom, tx, rx, L, ms);
  };
  return s;
}

double mean_capacity(const BeamSetup& s, const ExperimentConfig& c,
                     const Eigen::VectorXi& pred) {
  double total = 0.0;
  int rx_count = s.rx.size();
  for (int i = 0; i < s.test_pos.rows(); ++i) {
    Eigen::MatrixXcd H = channel_from_paths(
        path_set(s.env, s.test_pos.row(i).transpose()), s.geom);
    int cls = pred(i);
    total += capacity(H, s.tx.beams[cls / rx_count],
                      s.rx.beams[cls % rx_count], c.power, c.noise_var);
  }
  return total / s.test_pos.rows();
}

Eigen::VectorXi softmax_predictions(const LossModel& model,
                                    const Eigen::VectorXd& theta,
                                    const Eigen::MatrixXd& X, int classes) {
  Eigen::MatrixXd F = model.map_rows(X);
  int m = model.feat_dim();
  Eigen::Map<const Eigen::MatrixXd> Theta(theta.data(), m, classes);
  Eigen::MatrixXd logits = F * Theta;
  Eigen::VectorXi pred(X.rows());
  for (int i = 0; i < X.rows(); ++i) {
    int best = 0;
    logits.row(i).maxCoeff(&best);
    pred(i) = best;
  }
  return pred;
}

std::vector<Metric> beam_trial(const ExperimentConfig& c,
                               std::uint64_t tseed) {
  BeamSetup s = make_beam_setup(c, tseed);
  std::vector<Metric> out;
  for (const std::string& scheme : c.schemes) {
    if (scheme == "PerfectCSI") {
      Eigen::VectorXi pred = s.test_labels.cast<int>();
      out.push_back({scheme, "capacity", mean_capacity(s, c, pred)});
      continue;
    }
    Eigen::VectorXd theta = s.ctx.theta_for(scheme);
    Eigen::VectorXi pred =
        softmax_predictions(s.ctx.model, theta, s.test_pos, s.classes);
    out.push_back({scheme, "capacity", mean_capacity(s, c, pred)});
  }
  return out;
}

// -------------------------------------------------- NN / meta beam trials

Eigen::VectorXi net_predictions(const Mlp& net, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd probs = net.forward(X);
  Eigen::VectorXi pred(X.rows());
  for (int i = 0; i < X.rows(); ++i) {
    int best = 0;
    probs.row(i).maxCoeff(&best);
    pred(i) = best;
  }
  return pred;
}

Eigen::MatrixXd argmax_labels(const Mlp& net, const Eigen::MatrixXd& X) {
  Eigen::VectorXi p = net_predictions(net, X);
  Eigen::MatrixXd y(X.rows(), 1);
  for (int i = 0; i < X.rows(); ++i) y(i, 0) = p(i);
  return y;
}

std::vector<Metric> meta_beam_trial(const ExperimentConfig& c,
                                    std::uint64_t tseed) {
  BeamSetup s = make_beam_setup(c, tseed);
  const LabeledDataset& lab = s.ctx.lab;
  int n = lab.n();

  // standardized coordinates for the networks; capacities use the raw ones
  Eigen::MatrixXd pool(n + s.ctx.unl.n(), 3);
  pool << lab.inputs, s.ctx.unl.inputs;
  Eigen::RowVectorXd mean = pool.colwise().mean();
  Eigen::RowVectorXd sd =
      ((pool.rowwise() - mean).colwise().squaredNorm() / pool.rows())
          .cwiseSqrt()
          .cwiseMax(1e-9);
  auto std_rows = [&](const Eigen::MatrixXd& X) {
    return Eigen::MatrixXd(
        (X.rowwise() - mean).array().rowwise() / sd.array());
  };
  LabeledDataset lab_std;
  lab_std.inputs = std_rows(lab.inputs);
  lab_std.labels = lab.labels;
  UnlabeledDataset unl_std;
  unl_std.inputs = std_rows(s.ctx.unl.inputs);
  Eigen::MatrixXd test_std = std_rows(s.test_pos);

  std::vector<int> sizes;
  sizes.push_back(3);
  for (int h : c.student_hidden) sizes.push_back(h);
  sizes.push_back(s.classes);

  FoldAssignment folds = make_folds(n, c.K, derive_seed(tseed, 400));
  auto make_net = [&](std::uint64_t seed) {
    return Mlp(sizes, Mlp::Activation::LeakyReLU,
               Mlp::Output::SoftmaxClassifier, seed);
  };
  auto pretrain_teachers = [&]() {
    std::vector<Mlp> teachers;
    for (int k = 0; k < c.K; ++k) {
      Mlp t = make_net(derive_seed(tseed, 401, k));
      LabeledDataset sub = lab_std.subset(folds.complement(k));
      t.train(sub.inputs, sub.labels, 200, c.eta_t,
              std::min(c.batch_labeled, sub.n()),
              derive_seed(tseed, 402, k));
      teachers.push_back(std::move(t));
    }
    return teachers;
  };

  MetaConfig mc;
  mc.T = c.meta_steps;
  mc.eta_S = c.eta_s;
  mc.eta_T = c.eta_t;
  mc.batch_labeled = std::max(1, std::min(c.batch_labeled, n / c.K));
  mc.batch_unlabeled = std::min(c.batch_unlabeled, unl_std.n());
  mc.lambda_refresh = c.lambda_refresh;
  mc.seed = derive_seed(tseed, 403);

  std::vector<Metric> out;
  for (const std::string& scheme : c.schemes) {
    Mlp student = make_net(derive_seed(tseed, 404));
    if (scheme == "PerfectCSI") {
      Eigen::VectorXi pred = s.test_labels.cast<int>();
      out.push_back({scheme, "capacity", mean_capacity(s, c, pred)});
      continue;
    }
    if (scheme == "ERM") {
      Rng rng(derive_seed(tseed, 410));
      std::vector<int> all(n);
      for (int i = 0; i < n; ++i) all[i] = i;
      int bs = std::min(c.batch_labeled, n);
      for (int step = 0; step < c.meta_steps; ++step) {
        std::vector<int> bidx(bs);
        for (int i = 0; i < bs; ++i)
          bidx[i] = static_cast<int>(rng.uniform_int(n));
        LabeledDataset batch = lab_std.subset(bidx);
        student.gradient_step(batch.inputs, batch.labels, c.eta_s);
      }
    } else if (scheme == "MPL") {
      Mlp teacher = make_net(derive_seed(tseed, 420));
      teacher.train(lab_std.inputs, lab_std.labels, 200, c.eta_t,
                    std::min(c.batch_labeled, n), derive_seed(tseed, 421));
      StudentTeacherState st{student, {teacher}, 0};
      Rng rng(derive_seed(tseed, 422));
      for (int step = 0; step < c.meta_steps; ++step) {
        std::vector<int> li(std::min(c.batch_labeled, n));
        for (auto& i : li) i = static_cast<int>(rng.uniform_int(n));
        std::vector<int> ui(mc.batch_unlabeled);
        for (auto& i : ui)
          i = static_cast<int>(rng.uniform_int(unl_std.n()));
        LabeledDataset lb = lab_std.subset(li);
        Eigen::MatrixXd Xu(ui.size(), 3);
        for (std::size_t i = 0; i < ui.size(); ++i)
          Xu.row(i) = unl_std.inputs.row(ui[i]);
        mpl_step(st, lb.inputs, lb.labels, Xu, mc, rng);
      }
      student = st.student;
    } else if (scheme == "TunedCPPIBatch") {
      std::vector<Mlp> teachers = pretrain_teachers();
      StudentTeacherState st{student, teachers, 0};
      Rng rng(derive_seed(tseed, 430));
      double r = static_cast<double>(n) / unl_std.n();
      double lambda = c.lambda_override >= 0 ? c.lambda_override : 1.0;
      for (int step = 0; step < c.meta_steps; ++step) {
        if (c.lambda_override < 0 && c.lambda_refresh > 0 &&
            step % c.lambda_refresh == 0)
          lambda = mcppi_lambda_plugin(teachers, lab_std.inputs,
                                       lab_std.labels, s.classes, r);
        std::vector<FoldBatch> fbs(c.K);
        std::vector<Eigen::MatrixXd> yu(c.K), yl(c.K);
        std::vector<int> ui(mc.batch_unlabeled);
        for (auto& i : ui)
          i = static_cast<int>(rng.uniform_int(unl_std.n()));
        Eigen::MatrixXd Xu(ui.size(), 3);
        for (std::size_t i = 0; i < ui.size(); ++i)
          Xu.row(i) = unl_std.inputs.row(ui[i]);
        for (int k = 0; k < c.K; ++k) {
          const std::vector<int>& members = folds.members[k];
          std::vector<int> bi(mc.batch_labeled);
          for (auto& i : bi)
            i = members[rng.uniform_int(members.size())];
          LabeledDataset lb = lab_std.subset(bi);
          fbs[k].X = lb.inputs;
          fbs[k].Y = lb.labels;
          yu[k] = argmax_labels(teachers[k], Xu);
          yl[k] = argmax_labels(teachers[k], fbs[k].X);
        }
        double kap = kappa(step, c.meta_steps, mc.kappa_kind);
        mcppi_student_step(st, lambda, kap, Xu, yu, fbs, yl, c.eta_s);
      }
      student = st.student;
    } else if (scheme == "MCPPI") {
      StudentTeacherState st{student, pretrain_teachers(), 0};
      mcppi_train(st, lab_std, unl_std, folds, mc);
      student = st.student;
    } else {
      throw std::invalid_argument("scheme " + scheme +
                                  " not available for this experiment");
    }
    out.push_back(
        {scheme, "capacity",
         mean_capacity(s, c, net_predictions(student, test_std))});
  }
  return out;
}

std::vector<Metric> run_trial(const ExperimentConfig& c, std::uint64_t tseed) {
  if (c.experiment == "synth-mean" || c.experiment == "synth-linreg")
    return synth_trial(c, tseed);
  if (c.experiment == "localize") return localize_trial(c, tseed);
  if (c.experiment == "beam-align") return beam_trial(c, tseed);
  if (c.experiment == "beam-align-nn" || c.experiment == "mcppi-beam")
    return meta_beam_trial(c, tseed);
  throw std::invalid_argument("unknown experiment " + c.experiment);
}

}  // namespace

// ------------------------------------------------------------- driver

ResultsTable run_experiment(const ExperimentConfig& cfg) {
  cfg.check();
  ResultsTable table;
  for (double v : cfg.sweep) {
    ExperimentConfig c = at_sweep(cfg, v);
    std::map<std::pair<std::string, std::string>, std::vector<double>> acc;
    int failures = 0;
    for (int t = 0; t < cfg.trials; ++t) {
      try {
        for (const Metric& m :
             run_trial(c, trial_seed(cfg.seed, cfg.experiment, v, t)))
          acc[{m.scheme, m.name}].push_back(m.value);
      } catch (const std::exception& e) {
        ++failures;
        std::cerr << cfg.experiment << " trial " << t << " at " << cfg.sweep_key
                  << "=" << fmt(v) << " failed: " << e.what() << "\n";
      }
    }
    for (const auto& [key, vals] : acc) {
      ResultRow row;
      row.experiment = cfg.experiment;
      row.scheme = key.first;
      row.sweep = v;
      row.metric = key.second;
      row.trials = static_cast<int>(vals.size());
      double mean = 0;
      for (double x : vals) mean += x;
      mean /= vals.size();
      double var = 0;
      for (double x : vals) var += (x - mean) * (x - mean);
      row.mean = mean;
      row.stderr_ = vals.size() > 1
                        ? std::sqrt(var / (vals.size() - 1)) /
                              std::sqrt(static_cast<double>(vals.size()))
                        : 0.0;
      table.rows.push_back(std::move(row));
    }
    if (failures > 0) {
      ResultRow row;
      row.experiment = cfg.experiment;
      row.scheme = "all";
      row.sweep = v;
      row.metric = "failures";
      row.mean = failures;
      row.stderr_ = 0;
      row.trials = cfg.trials;
      table.rows.push_back(std::move(row));
    }
  }
  std::stable_sort(table.rows.begin(), table.rows.end(),
                   [](const ResultRow& a, const ResultRow& b) {
                     if (a.scheme != b.scheme) return a.scheme < b.scheme;
                     if (a.sweep != b.sweep) return a.sweep < b.sweep;
                     return a.metric < b.metric;
                   });
  return table;
}

void emit_csv(const ResultsTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit_csv: cannot open " + path);
  out << "experiment,scheme,sweep,metric,mean,stderr,trials\n";
  for (const ResultRow& r : table.rows)
    out << r.experiment << ',' << r.scheme << ',' << fmt(r.sweep) << ','
        << r.metric << ',' << fmt(r.mean) << ',' << fmt(r.stderr_) << ','
        << r.trials << "\n";
}

ResultsTable parse_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("parse_results_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) ||
      line != "experiment,scheme,sweep,metric,mean,stderr,trials")
    throw std::runtime_error("parse_results_csv: bad header");
  ResultsTable table;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f = split(line, ',');
    if (f.size() != 7)
      throw std::runtime_error("parse_results_csv: bad row: " + line);
    ResultRow r;
    r.experiment = f[0];
    r.scheme = f[1];
    r.sweep = std::stod(f[2]);
    r.metric = f[3];
    r.mean = std::stod(f[4]);
    r.stderr_ = std::stod(f[5]);
    r.trials = std::stoi(f[6]);
    table.rows.push_back(std::move(r));
  }
  return table;
}

void emit_plotdata(const ResultsTable& table, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::map<std::pair<std::string, std::string>, std::ofstream> files;
  for (const ResultRow& r : table.rows) {
    auto key = std::make_pair(r.scheme, r.metric);
    auto it = files.find(key);
    if (it == files.end()) {
      std::string name = dir + "/" + r.scheme + "_" + r.metric + ".dat";
      it = files.emplace(key, std::ofstream(name)).first;
      if (!it->second)
        throw std::runtime_error("emit_plotdata: cannot open " + name);
    }
    it->second << fmt(r.sweep) << ' ' << fmt(r.mean) << ' '
               << fmt(r.stderr_) << "\n";
  }
}

std::string lambda_probe(const ExperimentConfig& cfg) {
  cfg.check();
  if (cfg.experiment != "synth-mean" && cfg.experiment != "synth-linreg" &&
      cfg.experiment != "localize" && cfg.experiment != "beam-align")
    throw std::invalid_argument(
        "lambda-probe supports synth-mean, synth-linreg, localize and "
        "beam-align");
  std::ostringstream out;
  for (double v : cfg.sweep) {
    ExperimentConfig c = at_sweep(cfg, v);
    out << cfg.sweep_key << "=" << fmt(v) << "\n";
    int probes = std::min(cfg.trials, 5);
    for (int t = 0; t < probes; ++t) {
      std::uint64_t tseed = trial_seed(cfg.seed, cfg.experiment, v, t);
      SchemeContext* ctx;
      SynthSetup ss;
      LocalizeSetup ls;
      BeamSetup bs;
      if (cfg.experiment == "localize") {
        ls = make_localize_setup(c, tseed);
        ctx = &ls.ctx;
      } else if (cfg.experiment == "beam-align") {
        bs = make_beam_setup(c, tseed);
        ctx = &bs.ctx;
      } else {
        ss = make_synth_setup(c, tseed);
        ctx = &ss.ctx;
      }
      ExperimentConfig c2 = c;
      c2.lambda_override = -1;
      ctx->cfg = &c2;
      ctx->theta_for("TunedCPPI");
      const TuningEstimate& e = ctx->last_tuning;
      out << "  trial " << t << ": lambda_hat=" << fmt(e.lambda_hat)
          << " r=" << fmt(e.r) << " clipped=" << (e.clipped ? 1 : 0)
          << " degenerate=" << (e.degenerate ? 1 : 0) << "\n";
    }
  }
  return out.str();
}

std::vector<std::string> run_validation() {
  std::vector<std::string> failures;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };

  check(kappa(0, 10, KappaKind::Linear) == 0.0 &&
            kappa(10, 10, KappaKind::Quadratic) == 1.0 &&
            kappa(5, 10, KappaKind::Quadratic) == 0.25,
        "kappa schedule endpoints");

  ArrayGeometry geom;
  bool norms_ok = true;
  for (double theta : {0.3, 1.0, 2.2})
    for (double phi : {-2.0, 0.1, 1.5})
      norms_ok = norms_ok &&
                 std::abs(upa_steering(geom, theta, phi).norm() - 1.0) < 1e-12;
  check(norms_ok, "steering vector norms");

  Codebook cb = make_upa_codebook(4, 2, 0.5);
  bool cb_ok = cb.size() == 32;
  for (const auto& b : cb.beams)
    cb_ok = cb_ok && std::abs(b.norm() - 1.0) < 1e-10;
  check(cb_ok, "codebook size and norms");

  Region region;
  region.lo = Eigen::Vector3d(10, -5, 0);
  region.hi = Eigen::Vector3d(30, 5, 3);
  Environment env = gen_environment(region, 6, 3, 77);
  Eigen::Vector3d x(17.0, 1.0, 1.5);
  PathSet z1 = path_set(env, x), z2 = path_set(env, x);
  bool det_ok = z1.L() == z2.L();
  for (int l = 0; det_ok && l < z1.L(); ++l)
    det_ok = z1.paths[l].alpha == z2.paths[l].alpha;
  check(det_ok, "environment determinism");

  Eigen::MatrixXcd H = channel_from_paths(z1, geom);
  Codebook rx = trivial_rx_codebook(1);
  check(optimal_beam(H, cb, rx) == optimal_beam(3.7 * H, cb, rx),
        "beam index scale invariance");

  FoldAssignment folds = make_folds(17, 5, 3);
  std::vector<char> seen(17, 0);
  for (const auto& m : folds.members)
    for (int i : m) seen[i] = 1;
  check(std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; }),
        "fold partition covers all indices");

  ResultsTable t;
  t.rows.push_back({"synth-mean", "ERM", 100, "mse", 0.04, 0.001, 300});
  std::string tmp =
      (std::filesystem::temp_directory_path() / "ppi_validate.csv").string();
  emit_csv(t, tmp);
  ResultsTable back = parse_results_csv(tmp);
  check(back.rows.size() == 1 && back.rows[0].mean == 0.04 &&
            back.rows[0].scheme == "ERM",
        "results csv round trip");
  std::filesystem::remove(tmp);

  return failures;
}

}  // namespace ppi

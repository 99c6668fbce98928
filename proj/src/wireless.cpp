#include "ppi/wireless.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "ppi/mlp.hpp"
#include "ppi/rng.hpp"

namespace ppi {

namespace {

constexpr double kPi = std::numbers::pi;

std::uint64_t quantize(double v) {
  return static_cast<std::uint64_t>(
      static_cast<std::int64_t>(std::llround(v * 1e6)));
}

// (magnitude, AoD, AoA) for one propagation leg chain; phase drawn from a
// generator seeded by the quantized position and a per-path tag.
double random_phase(const Environment& env, const Eigen::Vector3d& x,
                    std::uint64_t tag) {
  Rng rng(derive_seed(env.seed, 7, quantize(x.x()), quantize(x.y()),
                      quantize(x.z()), tag));
  return rng.uniform(0.0, 2.0 * kPi);
}

void direction_angles(const Eigen::Vector3d& from, const Eigen::Vector3d& to,
                      double& theta, double& phi) {
  Eigen::Vector3d d = to - from;
  double norm = d.norm();
  if (norm < 1e-12) {
    theta = kPi / 2;
    phi = 0.0;
    return;
  }
  d /= norm;
  theta = std::acos(std::clamp(d.z(), -1.0, 1.0));
  phi = std::atan2(d.y(), d.x());
}

}  // namespace

Environment gen_environment(const Region& region, int scatterer_count,
                            int L_max, std::uint64_t seed) {
  if (L_max < 1) throw std::invalid_argument("gen_environment: L_max < 1");
  Environment env;
  env.region = region;
  env.L_max = L_max;
  env.seed = seed;
  // BS outside the position region, facing it along +x
  env.bs_position = Eigen::Vector3d(
      region.lo.x() - 0.25 * (region.hi.x() - region.lo.x()),
      0.5 * (region.lo.y() + region.hi.y()),
      0.5 * (region.lo.z() + region.hi.z()));
  Rng rng(derive_seed(seed, 5));
  env.scatterers.resize(scatterer_count, 3);
  for (int s = 0; s < scatterer_count; ++s)
    for (int c = 0; c < 3; ++c)
      env.scatterers(s, c) = rng.uniform(region.lo(c), region.hi(c));
  return env;
}

PathSet path_set(const Environment& env, const Eigen::Vector3d& x) {
  PathSet z;
  const double wl = env.wavelength;

  PathSet::Path los;
  double d_los = std::max((x - env.bs_position).norm(), 1e-6);
  direction_angles(env.bs_position, x, los.theta_aod, los.phi_aod);
  direction_angles(x, env.bs_position, los.theta_aoa, los.phi_aoa);
  los.alpha = std::polar(wl / (4.0 * kPi * d_los), random_phase(env, x, 0));
  z.paths.push_back(los);

  for (int s = 0; s < env.scatterers.rows(); ++s) {
    Eigen::Vector3d sc = env.scatterers.row(s);
    double d1 = std::max((sc - env.bs_position).norm(), 1e-6);
    double d2 = std::max((x - sc).norm(), 1e-6);
    PathSet::Path p;
    direction_angles(env.bs_position, sc, p.theta_aod, p.phi_aod);
    direction_angles(x, sc, p.theta_aoa, p.phi_aoa);
    p.alpha = std::polar(env.reflection_loss * wl / (4.0 * kPi * (d1 + d2)),
                         random_phase(env, x, static_cast<std::uint64_t>(s) + 1));
    z.paths.push_back(p);
  }

  std::stable_sort(z.paths.begin(), z.paths.end(),
                   [](const PathSet::Path& a, const PathSet::Path& b) {
                     return std::abs(a.alpha) > std::abs(b.alpha);
                   });
  if (z.L() > env.L_max) z.paths.resize(env.L_max);
  return z;
}

Eigen::MatrixXd sample_positions(const Region& region, int count,
                                 std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd X(count, 3);
  for (int i = 0; i < count; ++i)
    for (int c = 0; c < 3; ++c)
      X(i, c) = rng.uniform(region.lo(c), region.hi(c));
  return X;
}

Eigen::VectorXcd ula_response(int n, double spacing, double nu) {
  Eigen::VectorXcd a(n);
  double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (int m = 0; m < n; ++m)
    a(m) = std::polar(scale, 2.0 * kPi * spacing * m * nu);
  return a;
}

Eigen::VectorXcd upa_steering(const ArrayGeometry& geom, double theta,
                              double phi) {
  double nu_y = std::sin(theta) * std::sin(phi);
  double nu_z = std::cos(theta);
  Eigen::VectorXcd ay = ula_response(geom.tx_ny, geom.spacing, nu_y);
  Eigen::VectorXcd az = ula_response(geom.tx_nz, geom.spacing, nu_z);
  Eigen::VectorXcd a(geom.tx_ny * geom.tx_nz);
  for (int iy = 0; iy < geom.tx_ny; ++iy)
    for (int iz = 0; iz < geom.tx_nz; ++iz)
      a(iy * geom.tx_nz + iz) = ay(iy) * az(iz);
  return a;
}

Eigen::MatrixXcd channel_from_paths(const PathSet& z,
                                    const ArrayGeometry& geom) {
  Eigen::MatrixXcd H =
      Eigen::MatrixXcd::Zero(geom.tx_antennas(), geom.rx_antennas);
  for (const PathSet::Path& p : z.paths) {
    Eigen::VectorXcd at = upa_steering(geom, p.theta_aod, p.phi_aod);
    Eigen::VectorXcd ar = ula_response(
        geom.rx_antennas, geom.spacing,
        std::sin(p.theta_aoa) * std::sin(p.phi_aoa));
    H += p.alpha * at * ar.adjoint();
  }
  return H;
}

Codebook make_upa_codebook(int ny, int nz, double spacing) {
  if (ny < 1 || nz < 1)
    throw std::invalid_argument("make_upa_codebook: array dims < 1");
  Codebook cb;
  for (int i = 0; i < 2 * ny; ++i) {
    double sin_phi = (i - ny + 0.5) / (2.0 * ny);
    Eigen::VectorXcd ay = ula_response(ny, spacing, sin_phi);
    for (int k = 0; k < 2 * nz; ++k) {
      double cos_theta = (k - nz + 0.5) / (2.0 * nz);
      Eigen::VectorXcd az = ula_response(nz, spacing, cos_theta);
      Eigen::VectorXcd beam(ny * nz);
      for (int iy = 0; iy < ny; ++iy)
        for (int iz = 0; iz < nz; ++iz)
          beam(iy * nz + iz) = ay(iy) * az(iz);
      cb.beams.push_back(std::move(beam));
    }
  }
  return cb;
}

Codebook trivial_rx_codebook(int rx_antennas) {
  Codebook cb;
  Eigen::VectorXcd w = Eigen::VectorXcd::Zero(rx_antennas);
  w.setConstant(std::complex<double>(
      1.0 / std::sqrt(static_cast<double>(rx_antennas)), 0.0));
  cb.beams.push_back(std::move(w));
  return cb;
}

int optimal_beam(const Eigen::MatrixXcd& H, const Codebook& tx,
                 const Codebook& rx) {
  int best = 0;
  double best_gain = -1.0;
  for (int iu = 0; iu < tx.size(); ++iu) {
    Eigen::RowVectorXcd uh = tx.beams[iu].adjoint() * H;
    for (int iw = 0; iw < rx.size(); ++iw) {
      double gain = std::norm((uh * rx.beams[iw]).value());
      if (gain > best_gain) {
        best_gain = gain;
        best = iu * rx.size() + iw;
      }
    }
  }
  return best;
}

double capacity(const Eigen::MatrixXcd& H, const Eigen::VectorXcd& u,
                const Eigen::VectorXcd& w, double power, double noise_var) {
  double gain = std::norm((u.adjoint() * H * w).value());
  return std::log2(1.0 + power * gain / noise_var);
}

Eigen::VectorXd path_vector(const PathSet& z, int L) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(4 * L);
  int take = std::min(L, z.L());
  for (int l = 0; l < take; ++l) {
    v(4 * l + 0) = z.paths[l].alpha.real();
    v(4 * l + 1) = z.paths[l].alpha.imag();
    v(4 * l + 2) = z.paths[l].theta_aod;
    v(4 * l + 3) = z.paths[l].phi_aod;
  }
  return v;
}

PathSet paths_from_vector(const Eigen::VectorXd& v) {
  if (v.size() % 4 != 0)
    throw std::invalid_argument("paths_from_vector: length not 4L");
  PathSet z;
  for (int l = 0; l < v.size() / 4; ++l) {
    PathSet::Path p;
    p.alpha = std::complex<double>(v(4 * l), v(4 * l + 1));
    p.theta_aod = v(4 * l + 2);
    p.phi_aod = v(4 * l + 3);
    z.paths.push_back(p);
  }
  return z;
}

namespace {

class CkmLabeler final : public Labeler {
 public:
  CkmLabeler(Mlp net, Eigen::RowVectorXd in_mean, Eigen::RowVectorXd in_scale,
             Eigen::RowVectorXd out_mean, Eigen::RowVectorXd out_scale,
             ArrayGeometry geom, Codebook tx, Codebook rx)
      : net_(std::move(net)),
        in_mean_(std::move(in_mean)),
        in_scale_(std::move(in_scale)),
        out_mean_(std::move(out_mean)),
        out_scale_(std::move(out_scale)),
        geom_(geom),
        tx_(std::move(tx)),
        rx_(std::move(rx)) {}

  Eigen::VectorXd predict_raw(const Eigen::VectorXd& x) const override {
    Eigen::RowVectorXd z =
        (x.transpose() - in_mean_).cwiseQuotient(in_scale_);
    Eigen::RowVectorXd out = net_.forward(z).row(0);
    return (out.cwiseProduct(out_scale_) + out_mean_).transpose();
  }

  Eigen::MatrixXd predict_raw_rows(const Eigen::MatrixXd& X) const override {
    Eigen::MatrixXd Z =
        (X.rowwise() - in_mean_).array().rowwise() / in_scale_.array();
    Eigen::MatrixXd out = net_.forward(Z);
    return (out.array().rowwise() * out_scale_.array()).rowwise() +
           out_mean_.array();
  }

  Eigen::VectorXd label_from_raw(const Eigen::VectorXd& raw) const override {
    Eigen::MatrixXcd H = channel_from_paths(paths_from_vector(raw), geom_);
    Eigen::VectorXd y(1);
    y(0) = optimal_beam(H, tx_, rx_);
    return y;
  }

  int raw_dim() const override { return static_cast<int>(out_mean_.size()); }
  int label_dim() const override { return 1; }

 private:
  Mlp net_;
  Eigen::RowVectorXd in_mean_, in_scale_, out_mean_, out_scale_;
  ArrayGeometry geom_;
  Codebook tx_, rx_;
};

}  // namespace

LabelerPtr ckm_labeler_fit(const Eigen::MatrixXd& positions,
                           const std::vector<PathSet>& path_sets,
                           const ArrayGeometry& geom, const Codebook& tx,
                           const Codebook& rx, int L,
                           const LabelerSpec& mlp_spec) {
  int n = static_cast<int>(positions.rows());
  if (n == 0 || static_cast<int>(path_sets.size()) != n)
    throw std::invalid_argument("ckm_labeler_fit: positions/paths mismatch");

  Eigen::MatrixXd targets(n, 4 * L);
  for (int i = 0; i < n; ++i)
    targets.row(i) = path_vector(path_sets[i], L).transpose();

  auto standardize = [](const Eigen::MatrixXd& M, Eigen::RowVectorXd& mean,
                        Eigen::RowVectorXd& scale) {
    mean = M.colwise().mean();
    Eigen::MatrixXd C = M.rowwise() - mean;
    scale = (C.colwise().squaredNorm() / M.rows()).cwiseSqrt();
    scale = scale.cwiseMax(1e-9);
    return Eigen::MatrixXd((C.array().rowwise() / scale.array()).matrix());
  };

  Eigen::RowVectorXd in_mean, in_scale, out_mean, out_scale;
  Eigen::MatrixXd Xs = standardize(positions, in_mean, in_scale);
  Eigen::MatrixXd Ys = standardize(targets, out_mean, out_scale);

  std::vector<int> sizes;
  sizes.push_back(static_cast<int>(positions.cols()));
  for (int h : mlp_spec.mlp_hidden) sizes.push_back(h);
  sizes.push_back(4 * L);
  Mlp net(sizes, Mlp::Activation::LeakyReLU, Mlp::Output::Regression,
          derive_seed(mlp_spec.seed, 40));
  net.train(Xs, Ys, mlp_spec.mlp_epochs, mlp_spec.mlp_lr,
            std::min(mlp_spec.mlp_batch, n), derive_seed(mlp_spec.seed, 41));

  return std::make_shared<CkmLabeler>(std::move(net), in_mean, in_scale,
                                      out_mean, out_scale, geom, tx, rx);
}

LabeledDataset beam_dataset(const Environment& env, const ArrayGeometry& geom,
                            const Codebook& tx, const Codebook& rx,
                            const Eigen::MatrixXd& positions) {
  int n = static_cast<int>(positions.rows());
  LabeledDataset data;
  data.inputs = positions;
  data.labels.resize(n, 1);
  for (int i = 0; i < n; ++i) {
    Eigen::MatrixXcd H =
        channel_from_paths(path_set(env, positions.row(i)), geom);
    data.labels(i, 0) = optimal_beam(H, tx, rx);
  }
  return data;
}

void save_environment(const Environment& env, const std::string& path) {
  nlohmann::json j;
  j["bs_position"] = {env.bs_position.x(), env.bs_position.y(),
                      env.bs_position.z()};
  j["region"] = {{"lo", {env.region.lo.x(), env.region.lo.y(),
                         env.region.lo.z()}},
                 {"hi", {env.region.hi.x(), env.region.hi.y(),
                         env.region.hi.z()}}};
  j["wavelength"] = env.wavelength;
  j["reflection_loss"] = env.reflection_loss;
  j["L_max"] = env.L_max;
  j["seed"] = env.seed;
  auto scat = nlohmann::json::array();
  for (int s = 0; s < env.scatterers.rows(); ++s)
    scat.push_back({env.scatterers(s, 0), env.scatterers(s, 1),
                    env.scatterers(s, 2)});
  j["scatterers"] = scat;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_environment: cannot open " + path);
  out << j.dump(2) << "\n";
}

Environment load_environment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_environment: cannot open " + path);
  nlohmann::json j;
  in >> j;
  Environment env;
  auto bs = j.at("bs_position");
  env.bs_position = Eigen::Vector3d(bs[0], bs[1], bs[2]);
  auto lo = j.at("region").at("lo"), hi = j.at("region").at("hi");
  env.region.lo = Eigen::Vector3d(lo[0], lo[1], lo[2]);
  env.region.hi = Eigen::Vector3d(hi[0], hi[1], hi[2]);
  env.wavelength = j.at("wavelength");
  env.reflection_loss = j.at("reflection_loss");
  env.L_max = j.at("L_max");
  env.seed = j.at("seed");
  const auto& scat = j.at("scatterers");
  env.scatterers.resize(scat.size(), 3);
  for (std::size_t s = 0; s < scat.size(); ++s)
    for (int c = 0; c < 3; ++c) env.scatterers(s, c) = scat[s][c];
  return env;
}

void write_beam_csv(const std::string& path, const Eigen::MatrixXd& positions,
                    const Eigen::VectorXd& labels) {
  if (positions.rows() != labels.size())
    throw std::invalid_argument("write_beam_csv: row count mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_beam_csv: cannot open " + path);
  out << "x,y,z,label\n";
  char buf[64];
  for (int i = 0; i < positions.rows(); ++i) {
    for (int c = 0; c < 3; ++c) {
      std::snprintf(buf, sizeof(buf), "%.12g", positions(i, c));
      out << buf << ',';
    }
    out << static_cast<long long>(labels(i)) << "\n";
  }
}

}  // namespace ppi

#pragma once

#include <Eigen/Core>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "ppi/datasets.hpp"
#include "ppi/labelers.hpp"

namespace ppi {

// Multipath description of one position: complex gain plus departure and
// arrival angles (zenith in [0,pi], azimuth in [-pi,pi]) per path.
struct PathSet {
  struct Path {
    std::complex<double> alpha;
    double theta_aod = 0, phi_aod = 0;
    double theta_aoa = 0, phi_aoa = 0;
  };
  std::vector<Path> paths;

  int L() const { return static_cast<int>(paths.size()); }
};

struct ArrayGeometry {
  int tx_ny = 4;
  int tx_nz = 4;
  double spacing = 0.5;  // in wavelengths
  int rx_antennas = 1;

  int tx_antennas() const { return tx_ny * tx_nz; }
};

struct Codebook {
  std::vector<Eigen::VectorXcd> beams;

  int size() const { return static_cast<int>(beams.size()); }
};

struct Region {
  Eigen::Vector3d lo = Eigen::Vector3d::Zero();
  Eigen::Vector3d hi = Eigen::Vector3d::Ones();
};

// Deterministic position -> PathSet map: line-of-sight plus the strongest
// single-bounce reflections off fixed scatterers, free-space gains, per-path
// phases seeded by the quantized position.
struct Environment {
  Eigen::Vector3d bs_position = Eigen::Vector3d::Zero();
  Eigen::MatrixXd scatterers;  // S x 3
  Region region;
  double wavelength = 1.0;
  double reflection_loss = 0.6;  // single-bounce amplitude factor
  int L_max = 4;
  std::uint64_t seed = 0;
};

Environment gen_environment(const Region& region, int scatterer_count,
                            int L_max, std::uint64_t seed);

// Paths sorted nonincreasing in |alpha|, at most env.L_max of them.
PathSet path_set(const Environment& env, const Eigen::Vector3d& x);

// Uniform positions in the region.
Eigen::MatrixXd sample_positions(const Region& region, int count,
                                 std::uint64_t seed);

// Unit-norm linear-array response (1/sqrt(n)) exp(j 2 pi spacing m nu).
Eigen::VectorXcd ula_response(int n, double spacing, double nu);

// Transmit steering vector: kron(a_y(sin theta sin phi), a_z(cos theta)).
Eigen::VectorXcd upa_steering(const ArrayGeometry& geom, double theta,
                              double phi);

// H = sum_l alpha_l a_tx(theta_l, phi_l) a_rx(theta_l, phi_l)^H,
// tx_antennas x rx_antennas. The receive side is a linear array.
Eigen::MatrixXcd channel_from_paths(const PathSet& z,
                                    const ArrayGeometry& geom);

// Beams at the 2*N_y sin(phi) points and 2*N_z cos(theta) points spaced
// 1/(2N_y) and 1/(2N_z), centered on broadside; 4*N_y*N_z beams total,
// enumerated row-major over (sin grid, cos grid), each unit norm.
Codebook make_upa_codebook(int ny, int nz, double spacing);

// Single-beam receive codebook for an rx_antennas-element array.
Codebook trivial_rx_codebook(int rx_antennas);

// argmax over pairs of |u^H H w|^2; pairs enumerated row-major over (u, w);
// ties broken by lowest index. Returns a 0-based index in {0..|U||W|-1}.
int optimal_beam(const Eigen::MatrixXcd& H, const Codebook& tx,
                 const Codebook& rx);

// log2(1 + P |u^H H w|^2 / noise_var)
double capacity(const Eigen::MatrixXcd& H, const Eigen::VectorXcd& u,
                const Eigen::VectorXcd& w, double power, double noise_var);

// Fixed-length regression target for a PathSet: L slots of
// (Re alpha, Im alpha, theta_aod, phi_aod), zero-padded or truncated.
Eigen::VectorXd path_vector(const PathSet& z, int L);
PathSet paths_from_vector(const Eigen::VectorXd& v);

// Composite labeler f = g(c(X)): an Mlp regressor c from position to the
// path vector (trained on standardized inputs and targets), with g
// synthesizing the channel and running optimal_beam. predict_raw returns the
// path vector; the label is the beam class index.
LabelerPtr ckm_labeler_fit(const Eigen::MatrixXd& positions,
                           const std::vector<PathSet>& path_sets,
                           const ArrayGeometry& geom, const Codebook& tx,
                           const Codebook& rx, int L,
                           const LabelerSpec& mlp_spec);

// X = positions (rows), Y = optimal beam class; class count |U|*|W|.
LabeledDataset beam_dataset(const Environment& env, const ArrayGeometry& geom,
                            const Codebook& tx, const Codebook& rx,
                            const Eigen::MatrixXd& positions);

// Replayable snapshots and dataset export.
void save_environment(const Environment& env, const std::string& path);
Environment load_environment(const std::string& path);
void write_beam_csv(const std::string& path, const Eigen::MatrixXd& positions,
                    const Eigen::VectorXd& labels);

}  // namespace ppi

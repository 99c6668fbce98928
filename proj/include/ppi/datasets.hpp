#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ppi {

// Inputs are stored one sample per row. Labels are stored the same way:
// a scalar label occupies one column, a position label two columns, and a
// class label is a single column holding the class index as a double.
struct LabeledDataset {
  Eigen::MatrixXd inputs;  // n x d
  Eigen::MatrixXd labels;  // n x q

  int n() const { return static_cast<int>(inputs.rows()); }
  int dim() const { return static_cast<int>(inputs.cols()); }
  int label_dim() const { return static_cast<int>(labels.cols()); }

  LabeledDataset subset(const std::vector<int>& idx) const;
};

struct UnlabeledDataset {
  Eigen::MatrixXd inputs;  // N x d

  int n() const { return static_cast<int>(inputs.rows()); }
  int dim() const { return static_cast<int>(inputs.cols()); }
};

struct FoldAssignment {
  int K = 0;
  std::vector<int> fold_of;               // index i -> fold in {0..K-1}
  std::vector<std::vector<int>> members;  // fold k -> sorted index list

  int n() const { return static_cast<int>(fold_of.size()); }
  std::vector<int> complement(int k) const;  // all indices outside fold k
};

struct SynthParams {
  int d = 2;
  double mu = 4.0;
  double sigma = 2.0;
  double R = 0.5;  // in [0,1]
  std::uint64_t seed = 0;
};

struct RssiRecord {
  Eigen::VectorXd rssi;      // length m, dBm; kRssiNotDetected marks a miss
  Eigen::Vector2d position;  // longitude, latitude
  int building = 0;
  int floor = 0;
};

// UJIIndoorLoc convention: 100 means "access point not detected".
inline constexpr double kRssiNotDetected = 100.0;

// Random permutation of {0..n-1} split into K near-equal blocks; the first
// (n mod K) folds take the extra element. Throws std::invalid_argument when
// K < 2 or K > n.
FoldAssignment make_folds(int n, int K, std::uint64_t seed);

// Y = mu + X^T beta + z with X ~ N(0, I_d), beta = (R*sigma/sqrt(2)) * 1_d,
// z ~ N(0, sigma^2 (1 - R^2)).
std::pair<LabeledDataset, UnlabeledDataset> gen_synthetic(const SynthParams& p,
                                                          int n, int N);

// Population coefficient vector of the generating model.
Eigen::VectorXd synth_beta(const SynthParams& p);

// Reads a UJIIndoorLoc-schema CSV (WAP001..WAPm, LONGITUDE, LATITUDE, FLOOR,
// BUILDINGID), optionally filtered by building/floor. Sentinel values are
// preserved verbatim. Throws std::runtime_error on schema or parse errors,
// with the offending line number for cell-level failures.
std::vector<RssiRecord> load_rssi_csv(const std::string& path,
                                      std::optional<int> building = {},
                                      std::optional<int> floor = {});

void write_rssi_csv(const std::string& path,
                    const std::vector<RssiRecord>& records);

struct RssiSynthConfig {
  int m = 8;  // access point count, >= 3
  double x_min = 0.0, x_max = 100.0;
  double y_min = 0.0, y_max = 100.0;
  double pl0 = 40.0;        // path loss at 1 m
  double alpha = 2.0;       // path loss exponent
  double shadow_std = 4.0;  // dB
  double min_distance = 0.1;
  std::uint64_t seed = 0;
};

struct RssiSynthData {
  LabeledDataset labeled;      // inputs = RSSI vectors, labels = positions
  UnlabeledDataset unlabeled;  // RSSI vectors
  Eigen::MatrixXd ap_positions;  // m x 2
};

// RSSI_j = -PL0 - 10*alpha*log10(max(dist, min_distance)) + N(0, shadow^2).
RssiSynthData gen_synthetic_rssi(const RssiSynthConfig& cfg, int n, int N);

}  // namespace ppi

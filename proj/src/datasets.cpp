#include "ppi/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ppi/rng.hpp"

namespace ppi {

LabeledDataset LabeledDataset::subset(const std::vector<int>& idx) const {
  LabeledDataset out;
  out.inputs.resize(static_cast<int>(idx.size()), inputs.cols());
  out.labels.resize(static_cast<int>(idx.size()), labels.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.inputs.row(static_cast<int>(r)) = inputs.row(idx[r]);
    out.labels.row(static_cast<int>(r)) = labels.row(idx[r]);
  }
  return out;
}

std::vector<int> FoldAssignment::complement(int k) const {
  std::vector<int> out;
  out.reserve(fold_of.size());
  for (int i = 0; i < n(); ++i)
    if (fold_of[i] != k) out.push_back(i);
  return out;
}

FoldAssignment make_folds(int n, int K, std::uint64_t seed) {
  if (K < 2 || K > n)
    throw std::invalid_argument("make_folds: require 2 <= K <= n");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm);

  FoldAssignment fa;
  fa.K = K;
  fa.fold_of.assign(n, 0);
  fa.members.assign(K, {});
  int base = n / K, rem = n % K;
  int pos = 0;
  for (int k = 0; k < K; ++k) {
    int sz = base + (k < rem ? 1 : 0);
    for (int j = 0; j < sz; ++j) {
      int i = perm[pos++];
      fa.fold_of[i] = k;
      fa.members[k].push_back(i);
    }
    std::sort(fa.members[k].begin(), fa.members[k].end());
  }
  return fa;
}

Eigen::VectorXd synth_beta(const SynthParams& p) {
  return Eigen::VectorXd::Constant(p.d, p.R * p.sigma / std::sqrt(2.0));
}

std::pair<LabeledDataset, UnlabeledDataset> gen_synthetic(const SynthParams& p,
                                                          int n, int N) {
  if (n < 1 || N < 1) throw std::invalid_argument("gen_synthetic: n, N >= 1");
  if (p.R < 0.0 || p.R > 1.0 || p.sigma <= 0.0)
    throw std::invalid_argument("gen_synthetic: bad params");
  Rng rng(p.seed);
  Eigen::VectorXd beta = synth_beta(p);
  double noise_std = p.sigma * std::sqrt(1.0 - p.R * p.R);

  LabeledDataset lab;
  lab.inputs.resize(n, p.d);
  lab.labels.resize(n, 1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p.d; ++j) lab.inputs(i, j) = rng.normal();
    lab.labels(i, 0) =
        p.mu + lab.inputs.row(i).dot(beta) + rng.normal(0.0, noise_std);
  }
  UnlabeledDataset unl;
  unl.inputs.resize(N, p.d);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < p.d; ++j) unl.inputs(i, j) = rng.normal();
  return {std::move(lab), std::move(unl)};
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_cell(const std::string& s, int line_no, const std::string& col) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("load_rssi_csv: unparsable value '" + s +
                             "' in column " + col + " at line " +
                             std::to_string(line_no));
  }
}

}  // namespace

std::vector<RssiRecord> load_rssi_csv(const std::string& path,
                                      std::optional<int> building,
                                      std::optional<int> floor) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_rssi_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("load_rssi_csv: empty file " + path);

  std::vector<std::string> header = split_csv_line(line);
  std::vector<int> wap_cols;
  int lon_col = -1, lat_col = -1, floor_col = -1, bld_col = -1;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const std::string& h = header[c];
    if (h.rfind("WAP", 0) == 0)
      wap_cols.push_back(c);
    else if (h == "LONGITUDE")
      lon_col = c;
    else if (h == "LATITUDE")
      lat_col = c;
    else if (h == "FLOOR")
      floor_col = c;
    else if (h == "BUILDINGID")
      bld_col = c;
  }
  if (wap_cols.empty() || lon_col < 0 || lat_col < 0 || floor_col < 0 ||
      bld_col < 0)
    throw std::runtime_error(
        "load_rssi_csv: schema error, need WAP*, LONGITUDE, LATITUDE, FLOOR, "
        "BUILDINGID columns");

  std::vector<RssiRecord> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error("load_rssi_csv: wrong cell count at line " +
                               std::to_string(line_no));
    RssiRecord rec;
    rec.floor = static_cast<int>(
        parse_cell(cells[floor_col], line_no, "FLOOR"));
    rec.building = static_cast<int>(
        parse_cell(cells[bld_col], line_no, "BUILDINGID"));
    if (building && rec.building != *building) continue;
    if (floor && rec.floor != *floor) continue;
    rec.rssi.resize(static_cast<int>(wap_cols.size()));
    for (std::size_t j = 0; j < wap_cols.size(); ++j)
      rec.rssi(static_cast<int>(j)) =
          parse_cell(cells[wap_cols[j]], line_no, header[wap_cols[j]]);
    rec.position(0) = parse_cell(cells[lon_col], line_no, "LONGITUDE");
    rec.position(1) = parse_cell(cells[lat_col], line_no, "LATITUDE");
    out.push_back(std::move(rec));
  }
  return out;
}

void write_rssi_csv(const std::string& path,
                    const std::vector<RssiRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_rssi_csv: cannot open " + path);
  int m = records.empty() ? 0 : static_cast<int>(records[0].rssi.size());
  for (int j = 0; j < m; ++j) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "WAP%03d", j + 1);
    out << buf << ',';
  }
  out << "LONGITUDE,LATITUDE,FLOOR,BUILDINGID\n";
  char num[64];
  for (const RssiRecord& r : records) {
    for (int j = 0; j < m; ++j) {
      std::snprintf(num, sizeof(num), "%.12g", r.rssi(j));
      out << num << ',';
    }
    std::snprintf(num, sizeof(num), "%.12g", r.position(0));
    out << num << ',';
    std::snprintf(num, sizeof(num), "%.12g", r.position(1));
    out << num << ',' << r.floor << ',' << r.building << '\n';
  }
}

RssiSynthData gen_synthetic_rssi(const RssiSynthConfig& cfg, int n, int N) {
  if (cfg.m < 3)
    throw std::invalid_argument("gen_synthetic_rssi: need m >= 3 APs");
  if (cfg.x_max <= cfg.x_min || cfg.y_max <= cfg.y_min)
    throw std::invalid_argument("gen_synthetic_rssi: degenerate area");
  Rng rng(cfg.seed);

  RssiSynthData data;
  data.ap_positions.resize(cfg.m, 2);
  for (int j = 0; j < cfg.m; ++j) {
    data.ap_positions(j, 0) = rng.uniform(cfg.x_min, cfg.x_max);
    data.ap_positions(j, 1) = rng.uniform(cfg.y_min, cfg.y_max);
  }

  auto sample = [&](Eigen::MatrixXd& X, Eigen::MatrixXd* Y, int rows) {
    X.resize(rows, cfg.m);
    if (Y) Y->resize(rows, 2);
    for (int i = 0; i < rows; ++i) {
      double px = rng.uniform(cfg.x_min, cfg.x_max);
      double py = rng.uniform(cfg.y_min, cfg.y_max);
      for (int j = 0; j < cfg.m; ++j) {
        double dx = px - data.ap_positions(j, 0);
        double dy = py - data.ap_positions(j, 1);
        double dist = std::max(std::sqrt(dx * dx + dy * dy), cfg.min_distance);
        X(i, j) = -cfg.pl0 - 10.0 * cfg.alpha * std::log10(dist) +
                  (cfg.shadow_std > 0.0 ? rng.normal(0.0, cfg.shadow_std)
                                        : 0.0);
      }
      if (Y) {
        (*Y)(i, 0) = px;
        (*Y)(i, 1) = py;
      }
    }
  };
  sample(data.labeled.inputs, &data.labeled.labels, n);
  sample(data.unlabeled.inputs, nullptr, N);
  return data;
}

}  // namespace ppi

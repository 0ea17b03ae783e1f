#include "dataio.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

namespace gs4 {

namespace fs = std::filesystem;
using nlohmann::json;

std::string split_name(Split s) {
  switch (s) {
    case Split::Population: return "population";
    case Split::ClinicalSsTrain: return "clinical_ss_train";
    case Split::ClinicalSsVal: return "clinical_ss_val";
    case Split::ClinicalCv: return "clinical_cv";
  }
  return "population";
}

Split split_from_name(const std::string& name) {
  if (name == "population") return Split::Population;
  if (name == "clinical_ss_train") return Split::ClinicalSsTrain;
  if (name == "clinical_ss_val") return Split::ClinicalSsVal;
  if (name == "clinical_cv") return Split::ClinicalCv;
  throw std::invalid_argument("unknown split name: " + name);
}

std::vector<const Sample*> Dataset::by_split(Split s) const {
  std::vector<const Sample*> out;
  for (const Sample& smp : samples)
    if (smp.split == s) out.push_back(&smp);
  return out;
}

Mat standardize(const Mat& x) {
  require(x.cols() >= 2, "standardize: need at least 2 timepoints");
  const double eps = 1e-8;
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); i++) {
    const double mean = x.row(i).mean();
    Eigen::RowVectorXd centered = x.row(i).array() - mean;
    const double sd = std::sqrt(centered.squaredNorm() / double(x.cols()));
    out.row(i) = centered / std::max(sd, eps);
  }
  return out;
}

Mat resample_linear(const Mat& x, int t_new) {
  require(x.cols() >= 2, "resample_linear: need at least 2 timepoints");
  require(t_new >= 2, "resample_linear: t_new must be >= 2");
  const Eigen::Index t_old = x.cols();
  Mat out(x.rows(), t_new);
  for (int j = 0; j < t_new; j++) {
    const double pos = double(j) * double(t_old - 1) / double(t_new - 1);
    const Eigen::Index lo = Eigen::Index(pos);
    const Eigen::Index hi = std::min(lo + 1, t_old - 1);
    const double frac = pos - double(lo);
    out.col(j) = (1.0 - frac) * x.col(lo) + frac * x.col(hi);
  }
  return out;
}

namespace {

std::vector<int> network_of_node(const SynthConfig& cfg) {
  std::vector<int> net(std::size_t(cfg.num_nodes));
  const int per = cfg.num_nodes / cfg.num_networks;
  for (int i = 0; i < cfg.num_nodes; i++)
    net[std::size_t(i)] = std::min(i / per, cfg.num_networks - 1);
  return net;
}

int anomaly_network_index(const SynthConfig& cfg) {
  for (int k = 0; k < cfg.num_networks; k++)
    if ("N" + std::to_string(k + 1) == cfg.anomaly_network) return k;
  throw std::invalid_argument("generate_synth: unknown anomaly_network " +
                              cfg.anomaly_network);
}

void validate_synth(const SynthConfig& cfg) {
  require(cfg.num_nodes >= 2 && cfg.num_networks >= 1 &&
              cfg.num_nodes >= cfg.num_networks,
          "SynthConfig: bad node/network counts");
  require(cfg.timepoints >= 8, "SynthConfig: timepoints too small");
  require(cfg.within_coupling >= 0 && cfg.between_coupling >= 0 &&
              cfg.within_coupling + cfg.between_coupling > 0,
          "SynthConfig: couplings must be non-negative and not both zero");
  require(cfg.noise_sigma > 0, "SynthConfig: noise_sigma must be positive");
  require(cfg.anomaly_strength >= 0, "SynthConfig: negative anomaly_strength");
  require(cfg.clinical_ss_val_count % 2 == 0 && cfg.clinical_cv_count % 2 == 0,
          "SynthConfig: balanced splits need even counts");
  anomaly_network_index(cfg);
}

}  // namespace

std::vector<std::pair<std::string, std::vector<int>>> synth_networks(
    const SynthConfig& cfg) {
  std::vector<int> net = network_of_node(cfg);
  std::vector<std::pair<std::string, std::vector<int>>> out;
  for (int k = 0; k < cfg.num_networks; k++)
    out.emplace_back("N" + std::to_string(k + 1), std::vector<int>{});
  for (int i = 0; i < cfg.num_nodes; i++)
    out[std::size_t(net[std::size_t(i)])].second.push_back(i);
  return out;
}

Mat synth_transition(const SynthConfig& cfg, bool patient) {
  validate_synth(cfg);
  std::vector<int> net = network_of_node(cfg);
  const int anom = anomaly_network_index(cfg);
  const int v = cfg.num_nodes;
  Mat phi(v, v);
  for (int i = 0; i < v; i++)
    for (int j = 0; j < v; j++) {
      double w = (net[std::size_t(i)] == net[std::size_t(j)])
                     ? cfg.within_coupling
                     : cfg.between_coupling;
      if (patient && net[std::size_t(i)] == anom &&
          net[std::size_t(j)] != anom)
        w *= 1.0 + cfg.anomaly_strength;
      phi(i, j) = w;
    }
  // Normalize the whole transition to spectral radius 0.95. The patient
  // matrix is re-normalized by its own radius, so the planted scaling of the
  // anomalous network's incoming between-block coupling survives as a genuine
  // relative (and variance) deviation instead of being absorbed row by row.
  Eigen::EigenSolver<Mat> es(phi, false);
  const double radius = es.eigenvalues().cwiseAbs().maxCoeff();
  require(radius > 0, "synth_transition: zero coupling matrix");
  phi *= 0.95 / radius;
  return phi;
}

Vec lyapunov_steady_variance(const Mat& phi, double noise_sigma, int iters) {
  Mat v = Mat::Zero(phi.rows(), phi.cols());
  const Mat q = noise_sigma * noise_sigma *
                Mat::Identity(phi.rows(), phi.cols());
  for (int it = 0; it < iters; it++) v = phi * v * phi.transpose() + q;
  return v.diagonal();
}

namespace {

Mat simulate_var(const Mat& phi, double sigma, int t, std::mt19937_64& rng) {
  const Eigen::Index v = phi.rows();
  const int burn = 200;
  std::normal_distribution<double> gauss(0.0, sigma);
  Vec x = Vec::Zero(v);
  Mat out(v, t);
  for (int step = 0; step < burn + t; step++) {
    Vec eta(v);
    for (Eigen::Index i = 0; i < v; i++) eta[i] = gauss(rng);
    x = phi * x + eta;
    if (step >= burn) out.col(step - burn) = x;
  }
  return out;
}

}  // namespace

Dataset generate_synth(const SynthConfig& cfg) {
  validate_synth(cfg);
  const Mat phi_h = synth_transition(cfg, false);
  const Mat phi_p = synth_transition(cfg, true);

  Dataset ds;
  ds.num_nodes = cfg.num_nodes;
  ds.timepoints = cfg.timepoints;

  uint64_t index = 0;
  auto emit = [&](const std::string& id, Split split, int label) {
    auto rng = make_rng(cfg.seed ^ index);
    index++;
    Sample s;
    s.id = id;
    s.split = split;
    s.label = label;
    s.site = "synth";
    s.x = simulate_var(label == 1 ? phi_p : phi_h, cfg.noise_sigma,
                       cfg.timepoints, rng);
    ds.samples.push_back(std::move(s));
  };

  char buf[64];
  for (int i = 0; i < cfg.population_count; i++) {
    std::snprintf(buf, sizeof buf, "pop%04d", i);
    emit(buf, Split::Population, 0);
  }
  for (int i = 0; i < cfg.clinical_ss_train_count; i++) {
    std::snprintf(buf, sizeof buf, "sstr%03d", i);
    emit(buf, Split::ClinicalSsTrain, 0);
  }
  for (int i = 0; i < cfg.clinical_ss_val_count; i++) {
    std::snprintf(buf, sizeof buf, "ssv%03d", i);
    emit(buf, Split::ClinicalSsVal, i < cfg.clinical_ss_val_count / 2 ? 0 : 1);
  }
  for (int i = 0; i < cfg.clinical_cv_count; i++) {
    std::snprintf(buf, sizeof buf, "cv%03d", i);
    emit(buf, Split::ClinicalCv, i < cfg.clinical_cv_count / 2 ? 0 : 1);
  }
  return ds;
}

namespace {

constexpr char kMatrixMagic[4] = {'G', 'S', '4', 'T'};

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("short read while reading " + what);
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

}  // namespace

void save_matrix(const fs::path& path, const Mat& x) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(kMatrixMagic, 4);
  write_u32(os, 1);
  write_u32(os, uint32_t(x.rows()));
  write_u32(os, uint32_t(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); i++)
    for (Eigen::Index j = 0; j < x.cols(); j++) {
      const float f = float(x(i, j));
      static_assert(sizeof(float) == 4);
      os.write(reinterpret_cast<const char*>(&f), 4);
    }
  if (!os) throw IoError("write failed: " + path.string());
}

Mat load_matrix(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMatrixMagic, 4) != 0)
    throw IoError("bad magic in " + path.string());
  const uint32_t version = read_u32(is, "version");
  if (version != 1)
    throw IoError("unsupported matrix version in " + path.string());
  const uint32_t v = read_u32(is, "rows");
  const uint32_t t = read_u32(is, "cols");
  Mat x(v, t);
  for (uint32_t i = 0; i < v; i++)
    for (uint32_t j = 0; j < t; j++) {
      float f;
      is.read(reinterpret_cast<char*>(&f), 4);
      if (!is) throw IoError("short read in " + path.string());
      x(i, j) = double(f);
    }
  return x;
}

void save_matrix_csv(const fs::path& path, const Mat& x) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  char buf[64];
  for (Eigen::Index i = 0; i < x.rows(); i++) {
    for (Eigen::Index j = 0; j < x.cols(); j++) {
      std::snprintf(buf, sizeof buf, "%.17g", x(i, j));
      os << buf;
      if (j + 1 < x.cols()) os << ',';
    }
    os << '\n';
  }
}

Mat load_matrix_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    lineno++;
    if (line.empty() && is.eof()) break;
    std::vector<double> row;
    std::size_t pos = 0;
    int col = 0;
    while (pos <= line.size()) {
      std::size_t comma = line.find(',', pos);
      std::string cell = line.substr(
          pos, comma == std::string::npos ? std::string::npos : comma - pos);
      col++;
      try {
        std::size_t used = 0;
        double val = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument("trailing junk");
        row.push_back(val);
      } catch (const std::exception&) {
        throw ParseError("csv parse error at row " + std::to_string(lineno) +
                         " column " + std::to_string(col) + " in " +
                         path.string() + ": '" + cell + "'");
      }
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError("csv parse error at row " + std::to_string(lineno) +
                       ": ragged row in " + path.string());
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("empty csv file: " + path.string());
  Mat x(Eigen::Index(rows.size()), Eigen::Index(rows.front().size()));
  for (Eigen::Index i = 0; i < x.rows(); i++)
    for (Eigen::Index j = 0; j < x.cols(); j++)
      x(i, j) = rows[std::size_t(i)][std::size_t(j)];
  return x;
}

void save_dataset(const fs::path& dir, const Dataset& ds,
                  const std::string& manifest_name) {
  fs::create_directories(dir / "matrices");
  json manifest;
  manifest["num_nodes"] = ds.num_nodes;
  manifest["timepoints"] = ds.timepoints;
  manifest["samples"] = json::array();
  for (const Sample& s : ds.samples) {
    const std::string rel = "matrices/" + s.id + ".gs4t";
    save_matrix(dir / rel, s.x);
    manifest["samples"].push_back({{"id", s.id},
                                   {"path", rel},
                                   {"label", s.label},
                                   {"site", s.site},
                                   {"split", split_name(s.split)}});
  }
  std::ofstream os(dir / manifest_name);
  if (!os) throw IoError("cannot write manifest in " + dir.string());
  os << manifest.dump(2) << '\n';
}

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open manifest: " + manifest_path.string());
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    throw ParseError("manifest parse error in " + manifest_path.string() +
                     ": " + e.what());
  }
  Dataset ds;
  try {
    ds.num_nodes = manifest.at("num_nodes").get<int>();
    ds.timepoints = manifest.at("timepoints").get<int>();
    std::set<std::string> seen;
    const fs::path base = manifest_path.parent_path();
    for (const json& j : manifest.at("samples")) {
      Sample s;
      s.id = j.at("id").get<std::string>();
      if (!seen.insert(s.id).second)
        throw std::invalid_argument("duplicate sample id: " + s.id);
      const int label = j.at("label").get<int>();
      require(label == -1 || label == 0 || label == 1,
              "out-of-range label for sample " + s.id);
      s.label = label;
      s.site = j.at("site").get<std::string>();
      s.split = split_from_name(j.at("split").get<std::string>());
      s.x = load_matrix(base / j.at("path").get<std::string>());
      require(s.x.rows() == ds.num_nodes && s.x.cols() == ds.timepoints,
              "matrix dimensions of sample " + s.id +
                  " disagree with manifest");
      ds.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw ParseError("manifest schema error in " + manifest_path.string() +
                     ": " + e.what());
  }
  return ds;
}

}  // namespace gs4

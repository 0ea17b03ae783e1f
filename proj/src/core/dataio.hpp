#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"

namespace gs4 {

enum class Split { Population, ClinicalSsTrain, ClinicalSsVal, ClinicalCv };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

constexpr int kLabelUnlabeled = -1;

struct Sample {
  std::string id;
  Mat x;  // V x T
  int label = kLabelUnlabeled;  // 0 healthy, 1 patient, -1 unlabeled
  std::string site;
  Split split = Split::Population;
};

struct Dataset {
  int num_nodes = 0;
  int timepoints = 0;
  std::vector<Sample> samples;

  std::vector<const Sample*> by_split(Split s) const;
};

struct SynthConfig {
  int num_nodes = 32;
  int num_networks = 4;
  int timepoints = 256;
  double within_coupling = 1.0;
  double between_coupling = 0.35;
  double noise_sigma = 1.0;
  std::string anomaly_network = "N1";
  double anomaly_strength = 1.0;
  int population_count = 400;
  int clinical_ss_train_count = 60;
  int clinical_ss_val_count = 200;  // balanced healthy/patient
  int clinical_cv_count = 100;      // balanced, labeled
  uint64_t seed = 0;
};

// Per-node zero mean / unit variance (eps-guarded constant rows).
Mat standardize(const Mat& x);

// Per-node 1-D linear interpolation onto t_new uniform points, endpoints fixed.
Mat resample_linear(const Mat& x, int t_new);

// Block-structured VAR(1) transition matrix for healthy subjects; rows
// normalized to sum 0.95 so the spectral radius stays below one.
Mat synth_transition(const SynthConfig& cfg, bool patient);

// Analytic steady-state variance of node i under x_t = phi x_{t-1} + noise,
// from the discrete Lyapunov equation solved by fixed-point iteration.
Vec lyapunov_steady_variance(const Mat& phi, double noise_sigma,
                             int iters = 2000);

Dataset generate_synth(const SynthConfig& cfg);

// Network partition implied by SynthConfig (contiguous equal blocks N1..Nk).
std::vector<std::pair<std::string, std::vector<int>>> synth_networks(
    const SynthConfig& cfg);

// Binary matrix container: magic "GS4T", u32 version, u32 V, u32 T, then
// V*T little-endian float32, node-major.
void save_matrix(const std::filesystem::path& path, const Mat& x);
Mat load_matrix(const std::filesystem::path& path);

// CSV: V lines of T comma-separated decimals, no header.
void save_matrix_csv(const std::filesystem::path& path, const Mat& x);
Mat load_matrix_csv(const std::filesystem::path& path);

// Manifest: {"num_nodes", "timepoints", "samples": [{id,path,label,site,split}]}.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds,
                  const std::string& manifest_name = "manifest.json");
Dataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace gs4

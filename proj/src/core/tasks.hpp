#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"
#include "dataio.hpp"

namespace gs4 {

struct GraphS4Model;

struct NetworkPartition {
  int num_nodes = 0;
  std::vector<std::pair<std::string, std::vector<int>>> networks;  // ordered
  std::optional<Mat> overlaps;  // V x num_networks, entries in [0,1]

  const std::vector<int>& nodes_of(const std::string& name) const;
  int network_index(const std::string& name) const;
  void validate() const;
};

enum class TaskKind { NetworkMask, Forecast, Denoise, RandomMask };

std::string task_kind_name(TaskKind k);
TaskKind task_kind_from_name(const std::string& name);

struct TaskSpec {
  TaskKind kind = TaskKind::NetworkMask;
  std::string target_network;  // network_mask
  int horizon = 30;            // forecast
  double noise_sigma = 0.1;    // denoise
  double mask_fraction = 0.2;  // random_mask
  int num_eval_masks = 5;      // random_mask

  // Checkpoint base name for this task ("<network>" for network_mask).
  std::string name() const;
};

struct TaskInstance {
  Mat input;      // V x T, zeros where the task hides data
  Mat target;     // V x T
  Mat loss_mask;  // V x T binary
};

// m_i = 1 iff node i belongs to the network (overlap >= 0.5 when fractional).
Eigen::VectorXi make_network_mask(const NetworkPartition& p,
                                  const std::string& network);

TaskInstance build_instance(const Sample& x, const TaskSpec& spec,
                            const NetworkPartition& p, uint64_t seed);

// Mean masked-region MSE over spec.num_eval_masks seeded random-mask draws.
double eval_random_mask_score(const GraphS4Model& model, const Sample& x,
                              const TaskSpec& spec, const NetworkPartition& p,
                              uint64_t seed);

// Partition file: {"num_nodes": int, "networks": {name: [int,...]},
//                  "overlaps": optional row-major V x K array}.
void save_partition(const std::filesystem::path& path,
                    const NetworkPartition& p);
NetworkPartition load_partition(const std::filesystem::path& path);

NetworkPartition partition_from_synth(const SynthConfig& cfg);

}  // namespace gs4

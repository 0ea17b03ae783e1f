#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "common.hpp"
#include "graph.hpp"
#include "ssm.hpp"

namespace gs4 {

struct ModelConfig {
  int num_layers = 4;
  int state_dim = 128;
  int channels = 5;
  int diffusion_steps = 2;
  double dropout = 0.2;
  int num_nodes = 0;
  int emb_dim = 10;
  bool share_c = false;          // one output map for all channels
  bool literal_no_power = false; // E instead of E^d in the graph conv

  void validate() const;
};

struct Param {
  std::string name;
  Mat value;
  bool frozen = false;
};

struct GraphS4Model {
  ModelConfig cfg;
  std::vector<Param> params;
  bool has_cls_head = false;

  int index_of(const std::string& name) const;  // -1 when absent
  Mat& tensor(const std::string& name);
  const Mat& tensor(const std::string& name) const;

  // Shared-per-layer SSM parameters with the channel's output map filled in.
  DPLRParams layer_dplr(int layer, int channel) const;
  DiffusionWeights layer_weights(int layer) const;
  NodeEmbedding embedding() const;

  int64_t param_count() const;
};

enum class ForwardMode { Conv, Scan };

GraphS4Model init_model(const ModelConfig& cfg, uint64_t seed);

// Adds the classification head tensors if absent.
void ensure_cls_head(GraphS4Model& model, uint64_t seed);

// Last-layer V x T x C features of the trunk (eval mode, no dropout).
Tensor3 forward_features(const GraphS4Model& model, const Mat& x,
                         ForwardMode mode);

Mat forward_seq(const GraphS4Model& model, const Mat& x, ForwardMode mode);

// Temporal global average pooling + linear head; returns 2 logits.
Vec forward_cls(const GraphS4Model& model, const Mat& x);

// Checkpoint container: magic "GS4M", u32 version, config document, then
// named rank/dims/float64 tensors. Round-trips bit-exactly.
void save_model(const std::filesystem::path& path, const GraphS4Model& model);
GraphS4Model load_model(const std::filesystem::path& path);

std::string layer_param(int layer, const std::string& field);

}  // namespace gs4

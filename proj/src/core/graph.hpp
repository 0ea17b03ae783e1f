#pragma once

#include <vector>

#include "common.hpp"

namespace gs4 {

// Node-major stack of time-by-channel slabs: m is (v*t) x c, row index v*t + ti.
struct Tensor3 {
  Mat m;
  int v = 0;
  int t = 0;
  int c = 0;

  Tensor3() = default;
  Tensor3(int v_, int t_, int c_) : m(Mat::Zero(v_ * t_, c_)), v(v_), t(t_), c(c_) {}
  double& at(int vi, int ti, int ci) { return m(vi * t + ti, ci); }
  double at(int vi, int ti, int ci) const { return m(vi * t + ti, ci); }
};

struct NodeEmbedding {
  Mat e_a;  // V x C_emb
};

struct AdjacencyMatrix {
  Mat e;  // V x V, I + row-stochastic sparse part
};

struct DiffusionWeights {
  std::vector<Mat> w;  // D+1 matrices, each C_in x C_out
};

// Euclidean projection of z onto the probability simplex.
Vec sparsemax_row(const Vec& z);

// E = I + rowwise-sparsemax(ReLU(e_a e_a^T)).
AdjacencyMatrix adaptive_adjacency(const NodeEmbedding& emb);

// Z = sum_d E^d X W_d, node mixing per time step, channel map per diffusion step.
Tensor3 diffusion_conv(const AdjacencyMatrix& adj, const Tensor3& x,
                       const DiffusionWeights& weights,
                       bool literal_no_power = false);

// Apply E along the node axis for every (time, channel) position.
Mat node_mix(const Mat& e, const Mat& x, int v, int t);

}  // namespace gs4

#include "graph.hpp"

#include <algorithm>
#include <numeric>

namespace gs4 {

Vec sparsemax_row(const Vec& z) {
  const Eigen::Index n = z.size();
  require(n >= 1, "sparsemax_row: empty input");
  require(z.allFinite(), "sparsemax_row: non-finite entries");

  std::vector<double> sorted(z.data(), z.data() + n);
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());

  double cumsum = 0.0;
  double tau = 0.0;
  for (Eigen::Index k = 0; k < n; k++) {
    cumsum += sorted[std::size_t(k)];
    if (1.0 + double(k + 1) * sorted[std::size_t(k)] > cumsum)
      tau = (cumsum - 1.0) / double(k + 1);
  }
  return (z.array() - tau).cwiseMax(0.0).matrix();
}

AdjacencyMatrix adaptive_adjacency(const NodeEmbedding& emb) {
  const Eigen::Index v = emb.e_a.rows();
  require(v >= 1 && emb.e_a.cols() >= 1, "adaptive_adjacency: empty embedding");
  Mat sim = (emb.e_a * emb.e_a.transpose()).cwiseMax(0.0);
  AdjacencyMatrix adj;
  adj.e = Mat::Identity(v, v);
  for (Eigen::Index i = 0; i < v; i++)
    adj.e.row(i) += sparsemax_row(sim.row(i).transpose()).transpose();
  return adj;
}

Mat node_mix(const Mat& e, const Mat& x, int v, int t) {
  require(e.rows() == v && e.cols() == v && x.rows() == Eigen::Index(v) * t,
          "node_mix: shape mismatch");
  Mat y = Mat::Zero(x.rows(), x.cols());
  for (int vi = 0; vi < v; vi++)
    for (int u = 0; u < v; u++) {
      const double w = e(vi, u);
      if (w != 0.0) y.middleRows(vi * t, t) += w * x.middleRows(u * t, t);
    }
  return y;
}

Tensor3 diffusion_conv(const AdjacencyMatrix& adj, const Tensor3& x,
                       const DiffusionWeights& weights, bool literal_no_power) {
  require(!weights.w.empty(), "diffusion_conv: empty weight list");
  const int c_in = x.c;
  const int c_out = int(weights.w.front().cols());
  for (const Mat& w : weights.w)
    require(w.rows() == c_in && w.cols() == c_out,
            "diffusion_conv: weight shape mismatch");
  require(adj.e.rows() == x.v && adj.e.cols() == x.v,
          "diffusion_conv: adjacency/input mismatch");

  Tensor3 z(x.v, x.t, c_out);
  Mat mixed = x.m;  // d = 0 term: identity mixing
  for (std::size_t d = 0; d < weights.w.size(); d++) {
    if (d > 0) {
      if (d == 1 || literal_no_power)
        mixed = node_mix(adj.e, x.m, x.v, x.t);
      else
        mixed = node_mix(adj.e, mixed, x.v, x.t);
    }
    z.m += mixed * weights.w[d];
  }
  return z;
}

}  // namespace gs4

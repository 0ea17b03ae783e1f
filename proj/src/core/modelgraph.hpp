#pragma once

#include <unordered_map>

#include "model.hpp"
#include "tape.hpp"
#include "tasks.hpp"

namespace gs4 {

struct LossConfig {
  double lambda1 = 1.0;
  double lambda2 = 0.5;
  double pearson_eps = 1e-8;

  void validate() const {
    require(lambda1 >= 0 && lambda2 >= 0, "LossConfig: negative lambda");
    require(lambda1 > 0 || lambda2 > 0, "LossConfig: both lambdas zero");
    require(pearson_eps > 0, "LossConfig: pearson_eps must be positive");
  }
};

// Lazily binds model parameter tensors to tape leaves; frozen tensors become
// constant leaves so their gradient is exactly zero.
struct ParamBinding {
  GraphS4Model* model = nullptr;
  std::unordered_map<std::string, int> node_of;

  int get(ad::Tape& tape, const std::string& name);

  // Accumulate tape gradients into `grads` (same indexing as model->params),
  // scaled by `scale`.
  void collect(const ad::Tape& tape, std::vector<Mat>& grads,
               double scale) const;
};

struct ForwardNodes {
  int seq_flat = -1;   // (V*T) x 1 prediction after output projection
  int features = -1;   // (V*T) x C last-layer trunk features
  int v = 0, t = 0, c = 0;
};

// Training-path forward. Mirrors forward_seq in conv mode; the kernel is
// computed by a differentiable recurrence instead of the Cauchy fast path.
// dropout_rng == nullptr disables dropout (eval / gradcheck).
ForwardNodes build_forward(ad::Tape& tape, ParamBinding& bind, const Mat& x,
                           std::mt19937_64* dropout_rng);

// Eq-style masked loss: lambda1 * mean squared error over masked positions
// minus lambda2 * mean per-node Pearson correlation over masked positions.
// Returns the scalar loss node; the mask must be a row-set x column-set
// rectangle (all task kinds produce one).
struct SeqLossNodes {
  int loss = -1;
  int mse = -1;
  int pearson = -1;
};

SeqLossNodes build_seq_loss_parts(ad::Tape& tape, const ForwardNodes& fwd,
                                  const TaskInstance& inst,
                                  const LossConfig& cfg);

int build_seq_loss(ad::Tape& tape, const ForwardNodes& fwd,
                   const TaskInstance& inst, const LossConfig& cfg);

// Cross entropy of the 2-logit head against label in {0,1}.
int build_cls_loss(ad::Tape& tape, ParamBinding& bind, const ForwardNodes& fwd,
                   int label);

// Non-AD scalar loss on explicit matrices (used for reporting and scoring).
double loss_mse_pearson(const Mat& y, const Mat& y_hat, const LossConfig& cfg);
double masked_mse(const Mat& target, const Mat& pred, const Mat& loss_mask);

// Decompose a mask into (rows, cols); throws if not a rectangle.
void mask_rectangle(const Mat& mask, std::vector<int>& rows,
                    std::vector<int>& cols);

}  // namespace gs4

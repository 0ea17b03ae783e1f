#pragma once

#include <functional>
#include <ostream>

#include "modelgraph.hpp"

namespace gs4 {

struct TrainConfig {
  int batch_size = 128;
  double lr = 0.01;
  double lr_decay = 0.95;       // multiplicative, per epoch
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs_population = 20;
  int epochs_clinical_max = 100;
  int epochs_finetune = 50;
  int early_stop_patience = 5;
  double inner_val_fraction = 0.1;
  uint64_t seed = 0;
  int threads = 0;  // 0 = use hardware concurrency

  void validate() const;
};

// Decoupled weight decay Adam update for one tensor; state starts at zero,
// `step` counts from 1.
void adamw_step(Mat& param, const Mat& grad, Mat& m, Mat& v, int64_t step,
                double lr, double beta1, double beta2, double eps,
                double weight_decay);

class AdamW {
 public:
  explicit AdamW(const GraphS4Model& model);
  void step(GraphS4Model& model, const std::vector<Mat>& grads, double lr,
            const TrainConfig& cfg);

 private:
  std::vector<Mat> m_, v_;
  int64_t step_ = 0;
};

struct LossParts {
  double loss = 0.0;
  double mse = 0.0;
  double pearson = 0.0;
};

// Mean loss and parameter gradients over a set of task instances; chunked
// and optionally threaded with a fixed accumulation order.
struct BatchGrad {
  LossParts parts;
  std::vector<Mat> grads;  // indexed like model.params
};

BatchGrad batch_gradients_seq(GraphS4Model& model,
                              const std::vector<TaskInstance>& batch,
                              const LossConfig& loss_cfg, uint64_t dropout_seed,
                              bool train_mode, int threads);

BatchGrad batch_gradients_cls(GraphS4Model& model,
                              const std::vector<const Sample*>& batch,
                              uint64_t dropout_seed, bool train_mode,
                              int threads);

// Loss parts of the eval-mode forward on one instance.
LossParts eval_instance(const GraphS4Model& model, const TaskInstance& inst,
                        const LossConfig& cfg);

// Two-stage self-supervised pretraining: fixed-epoch pass on the population
// set, then clinical training with inner-validation early stopping. Returns
// the best-inner-validation checkpoint. Log lines are tab separated:
// epoch, split, loss, mse, pearson, lr.
GraphS4Model pretrain_ssl(const std::vector<const Sample*>& population,
                          const std::vector<const Sample*>& clinical_healthy,
                          const TaskSpec& spec, const NetworkPartition& part,
                          const ModelConfig& mcfg, const TrainConfig& cfg,
                          const LossConfig& loss_cfg, std::ostream* log);

// Supervised fine-tuning with cross entropy; freezes everything except the
// last layer and the classification head unless full_finetune is set. Early
// stop on inner-validation balanced accuracy.
GraphS4Model finetune_cls(GraphS4Model model,
                          const std::vector<const Sample*>& labeled,
                          const TrainConfig& cfg, bool full_finetune,
                          std::ostream* log);

struct GradCheckEntry {
  std::string tensor;
  double rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_tensor;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Central finite differences of the full forward + loss against the tape
// gradients, per trainable tensor. `max_entries` caps probed entries per
// tensor (0 = all).
GradCheckReport gradcheck_model(GraphS4Model& model, const TaskInstance& inst,
                                const LossConfig& cfg, double h, double tol,
                                int max_entries = 0);

}  // namespace gs4

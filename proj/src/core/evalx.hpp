#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "model.hpp"
#include "tasks.hpp"

namespace gs4 {

// Masked prediction error of one sample under a task, eval-mode forward.
// Deterministic: instance randomness is seeded from the sample id.
double anomaly_score(const GraphS4Model& model, const Sample& x,
                     const TaskSpec& spec, const NetworkPartition& p);

// Probability that a random positive (label 1) score exceeds a random
// negative score, ties counted 1/2 (exact Mann-Whitney U).
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

struct ScreenRow {
  double mse_healthy = 0.0;
  double mse_patient = 0.0;
  double auroc = 0.0;
};

struct ScreenReport {
  std::string dataset_id;
  std::vector<std::pair<std::string, ScreenRow>> rows;  // partition order

  // Name of the network with the highest AUROC.
  const std::string& best_network() const;
};

// Per-network anomaly screening over a balanced labeled validation set.
// `models` holds one trained network-mask model per partition network.
ScreenReport screen_networks(
    const std::map<std::string, const GraphS4Model*>& models,
    const std::vector<const Sample*>& val, const NetworkPartition& p,
    const std::string& dataset_id);

struct ThresholdResult {
  double threshold = 0.0;
  double youden_j = 0.0;
  bool degenerate = false;  // best J <= 0 (inverted or uninformative scores)
};

// Threshold maximizing Youden's J (sensitivity + specificity - 1) when
// predicting positive for score > threshold. Candidates are midpoints
// between adjacent distinct scores plus the all/none boundaries; ties go to
// the lowest candidate.
ThresholdResult select_threshold(const std::vector<double>& scores,
                                 const std::vector<int>& labels);

struct FoldMetrics {
  double balanced_accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
};

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
};

struct CVResult {
  std::vector<FoldMetrics> per_fold;  // repeats * folds entries
  int repeats = 0;
  int folds = 0;

  MetricSummary balanced_accuracy() const;
  MetricSummary sensitivity() const;
  MetricSummary specificity() const;
};

// Trains on a sample list and returns a 0/1 predictor.
using Predictor = std::function<int(const Sample&)>;
using TrainFn =
    std::function<Predictor(const std::vector<const Sample*>&, uint64_t seed)>;

// Repeated stratified k-fold cross validation. Ids in excluded["ss_val"]
// never appear anywhere; ids in excluded["ss_train"] are added to every
// training fold but never to a test fold.
CVResult cv_harness(const std::vector<const Sample*>& labeled, int folds,
                    int repeats,
                    const std::map<std::string, std::set<std::string>>& excluded,
                    const TrainFn& train_fn, uint64_t seed);

// JSON documents with the field names of the structs above.
std::string screen_report_json(const ScreenReport& report);
std::string cv_result_json(const CVResult& result);
ScreenReport screen_report_from_json(const std::string& text);

// Aligned text tables for terminal output.
std::string format_screen_report(const ScreenReport& report);
std::string format_cv_result(const CVResult& result);

}  // namespace gs4

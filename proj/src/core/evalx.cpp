#include "evalx.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "modelgraph.hpp"

namespace gs4 {

using json = nlohmann::ordered_json;

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

double anomaly_score(const GraphS4Model& model, const Sample& x,
                     const TaskSpec& spec, const NetworkPartition& p) {
  // Scored on the original (unstandardized) scale: the model is trained on
  // standardized healthy data, so both pattern deviations and amplitude
  // deviations of the masked network raise the masked-region error.
  const Sample& s = x;
  const uint64_t seed = fnv1a(s.id);
  if (spec.kind == TaskKind::RandomMask)
    return eval_random_mask_score(model, s, spec, p, seed);
  TaskInstance inst = build_instance(s, spec, p, seed);
  const Mat pred = forward_seq(model, inst.input, ForwardMode::Conv);
  return masked_mse(inst.target, pred, inst.loss_mask);
}

double auroc(const std::vector<double>& scores,
             const std::vector<int>& labels) {
  require(scores.size() == labels.size() && !scores.empty(),
          "auroc: scores and labels must be nonempty and equal length");
  std::size_t npos = 0, nneg = 0;
  for (int l : labels) {
    require(l == 0 || l == 1, "auroc: labels must be 0 or 1");
    (l == 1 ? npos : nneg)++;
  }
  require(npos > 0 && nneg > 0, "auroc: both classes must be present");
  double u = 0.0;
  for (std::size_t i = 0; i < scores.size(); i++) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); j++) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j])
        u += 1.0;
      else if (scores[i] == scores[j])
        u += 0.5;
    }
  }
  return u / (double(npos) * double(nneg));
}

const std::string& ScreenReport::best_network() const {
  require(!rows.empty(), "ScreenReport: no rows");
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); i++)
    if (rows[i].second.auroc > rows[best].second.auroc) best = i;
  return rows[best].first;
}

ScreenReport screen_networks(
    const std::map<std::string, const GraphS4Model*>& models,
    const std::vector<const Sample*>& val, const NetworkPartition& p,
    const std::string& dataset_id) {
  p.validate();
  std::size_t npos = 0, nneg = 0;
  for (const Sample* s : val) {
    require(s->label == 0 || s->label == 1,
            "screen_networks: unlabeled sample " + s->id);
    (s->label == 1 ? npos : nneg)++;
  }
  require(npos > 0 && nneg > 0,
          "screen_networks: validation set must contain both classes");
  const double imbalance =
      std::abs(double(npos) - double(nneg)) / double(val.size());
  require(imbalance <= 0.10,
          "screen_networks: validation set not balanced within 10%");

  ScreenReport report;
  report.dataset_id = dataset_id;
  for (const auto& [name, nodes] : p.networks) {
    (void)nodes;
    auto it = models.find(name);
    require(it != models.end() && it->second != nullptr,
            "screen_networks: missing model for network " + name);
    TaskSpec spec;
    spec.kind = TaskKind::NetworkMask;
    spec.target_network = name;
    ScreenRow row;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const Sample* s : val) {
      const double score = anomaly_score(*it->second, *s, spec, p);
      scores.push_back(score);
      labels.push_back(s->label);
      (s->label == 1 ? row.mse_patient : row.mse_healthy) += score;
    }
    row.mse_healthy /= double(nneg);
    row.mse_patient /= double(npos);
    row.auroc = auroc(scores, labels);
    report.rows.emplace_back(name, row);
  }
  return report;
}

ThresholdResult select_threshold(const std::vector<double>& scores,
                                 const std::vector<int>& labels) {
  require(scores.size() == labels.size() && !scores.empty(),
          "select_threshold: scores and labels must match");
  std::size_t npos = 0, nneg = 0;
  for (int l : labels) {
    require(l == 0 || l == 1, "select_threshold: labels must be 0 or 1");
    (l == 1 ? npos : nneg)++;
  }
  require(npos > 0 && nneg > 0,
          "select_threshold: both classes must be present");

  std::vector<double> uniq = scores;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

  auto youden = [&](double t) {
    double tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); i++) {
      const bool pred = scores[i] > t;
      if (labels[i] == 1)
        (pred ? tp : fn)++;
      else
        (pred ? fp : tn)++;
    }
    return tp / (tp + fn) + tn / (tn + fp) - 1.0;
  };

  if (uniq.size() == 1) {
    // Uninformative scores: every cut is equivalent; report the value itself.
    return {uniq[0], 0.0, true};
  }

  std::vector<double> candidates;
  candidates.push_back(uniq.front() - 1.0);  // predict everyone positive
  for (std::size_t i = 0; i + 1 < uniq.size(); i++)
    candidates.push_back(0.5 * (uniq[i] + uniq[i + 1]));
  candidates.push_back(uniq.back());  // predict no one positive

  ThresholdResult best{candidates.front(), youden(candidates.front()), false};
  for (std::size_t i = 1; i < candidates.size(); i++) {
    const double j = youden(candidates[i]);
    if (j > best.youden_j) {  // strict: ties keep the lower threshold
      best.youden_j = j;
      best.threshold = candidates[i];
    }
  }
  best.degenerate = best.youden_j <= 0.0;
  return best;
}

namespace {

MetricSummary summarize(const std::vector<FoldMetrics>& folds,
                        double FoldMetrics::*field) {
  MetricSummary s;
  if (folds.empty()) return s;
  for (const FoldMetrics& f : folds) s.mean += f.*field;
  s.mean /= double(folds.size());
  double var = 0.0;
  for (const FoldMetrics& f : folds) {
    const double d = f.*field - s.mean;
    var += d * d;
  }
  s.stddev = std::sqrt(var / double(folds.size()));
  return s;
}

}  // namespace

MetricSummary CVResult::balanced_accuracy() const {
  return summarize(per_fold, &FoldMetrics::balanced_accuracy);
}
MetricSummary CVResult::sensitivity() const {
  return summarize(per_fold, &FoldMetrics::sensitivity);
}
MetricSummary CVResult::specificity() const {
  return summarize(per_fold, &FoldMetrics::specificity);
}

CVResult cv_harness(
    const std::vector<const Sample*>& labeled, int folds, int repeats,
    const std::map<std::string, std::set<std::string>>& excluded,
    const TrainFn& train_fn, uint64_t seed) {
  require(folds >= 2, "cv_harness: need at least 2 folds");
  require(repeats >= 1, "cv_harness: need at least 1 repeat");

  const std::set<std::string> empty;
  auto lookup = [&](const char* key) -> const std::set<std::string>& {
    auto it = excluded.find(key);
    return it == excluded.end() ? empty : it->second;
  };
  const std::set<std::string>& ss_val = lookup("ss_val");
  const std::set<std::string>& ss_train = lookup("ss_train");

  std::vector<const Sample*> eligible, train_only;
  for (const Sample* s : labeled) {
    require(s->label == 0 || s->label == 1,
            "cv_harness: unlabeled sample " + s->id);
    if (ss_val.count(s->id)) continue;  // excluded from the entire process
    if (ss_train.count(s->id))
      train_only.push_back(s);
    else
      eligible.push_back(s);
  }
  require(!eligible.empty(), "cv_harness: no eligible samples");

  CVResult result;
  result.folds = folds;
  result.repeats = repeats;

  for (int rep = 0; rep < repeats; rep++) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < eligible.size(); i++)
      (eligible[i]->label == 1 ? pos : neg).push_back(i);
    auto rng = make_rng(mix_seed(seed, 0xcf00 + uint64_t(rep)));
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);

    std::vector<std::vector<std::size_t>> test{std::size_t(folds)};
    for (std::size_t i = 0; i < pos.size(); i++)
      test[i % std::size_t(folds)].push_back(pos[i]);
    for (std::size_t i = 0; i < neg.size(); i++)
      test[i % std::size_t(folds)].push_back(neg[i]);

    for (int f = 0; f < folds; f++) {
      const std::vector<std::size_t>& te = test[std::size_t(f)];
      bool has_pos = false, has_neg = false;
      for (std::size_t i : te)
        (eligible[i]->label == 1 ? has_pos : has_neg) = true;
      require(has_pos && has_neg,
              "cv_harness: fold without both classes; dataset too small");

      std::vector<const Sample*> train = train_only;
      std::vector<bool> in_test(eligible.size(), false);
      for (std::size_t i : te) in_test[i] = true;
      for (std::size_t i = 0; i < eligible.size(); i++)
        if (!in_test[i]) train.push_back(eligible[i]);

      Predictor predict =
          train_fn(train, mix_seed(seed, uint64_t(rep) * 1000 + uint64_t(f)));

      double tp = 0, fn = 0, tn = 0, fp = 0;
      for (std::size_t i : te) {
        const int pred = predict(*eligible[i]);
        if (eligible[i]->label == 1)
          (pred == 1 ? tp : fn)++;
        else
          (pred == 0 ? tn : fp)++;
      }
      FoldMetrics m;
      m.sensitivity = tp / (tp + fn);
      m.specificity = tn / (tn + fp);
      m.balanced_accuracy = 0.5 * (m.sensitivity + m.specificity);
      result.per_fold.push_back(m);
    }
  }
  return result;
}

std::string screen_report_json(const ScreenReport& report) {
  json doc;
  doc["dataset_id"] = report.dataset_id;
  json rows = json::object();
  for (const auto& [name, row] : report.rows)
    rows[name] = {{"mse_healthy", row.mse_healthy},
                  {"mse_patient", row.mse_patient},
                  {"auroc", row.auroc}};
  doc["rows"] = rows;
  return doc.dump(2) + "\n";
}

ScreenReport screen_report_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("screen report: ") + e.what());
  }
  ScreenReport report;
  report.dataset_id = doc.at("dataset_id").get<std::string>();
  for (const auto& [name, row] : doc.at("rows").items())
    report.rows.emplace_back(
        name, ScreenRow{row.at("mse_healthy").get<double>(),
                        row.at("mse_patient").get<double>(),
                        row.at("auroc").get<double>()});
  return report;
}

std::string cv_result_json(const CVResult& result) {
  json doc;
  doc["repeats"] = result.repeats;
  doc["folds"] = result.folds;
  json per_fold = json::array();
  for (const FoldMetrics& m : result.per_fold)
    per_fold.push_back({{"balanced_accuracy", m.balanced_accuracy},
                        {"sensitivity", m.sensitivity},
                        {"specificity", m.specificity}});
  doc["per_fold"] = per_fold;
  auto put = [&](const char* key, MetricSummary s) {
    doc[key] = {{"mean", s.mean}, {"stddev", s.stddev}};
  };
  put("balanced_accuracy", result.balanced_accuracy());
  put("sensitivity", result.sensitivity());
  put("specificity", result.specificity());
  return doc.dump(2) + "\n";
}

std::string format_screen_report(const ScreenReport& report) {
  std::ostringstream os;
  os << "dataset: " << report.dataset_id << "\n";
  os << std::left << std::setw(12) << "network" << std::right << std::setw(14)
     << "mse_healthy" << std::setw(14) << "mse_patient" << std::setw(10)
     << "auroc" << "\n";
  os << std::string(50, '-') << "\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& [name, row] : report.rows)
    os << std::left << std::setw(12) << name << std::right << std::setw(14)
       << row.mse_healthy << std::setw(14) << row.mse_patient << std::setw(10)
       << row.auroc << "\n";
  return os.str();
}

std::string format_cv_result(const CVResult& result) {
  std::ostringstream os;
  os << result.repeats << "x" << result.folds << "-fold cross validation ("
     << result.per_fold.size() << " folds)\n";
  os << std::left << std::setw(20) << "metric" << std::right << std::setw(10)
     << "mean" << std::setw(10) << "std" << "\n";
  os << std::string(40, '-') << "\n";
  os << std::fixed << std::setprecision(4);
  auto row = [&](const char* name, MetricSummary s) {
    os << std::left << std::setw(20) << name << std::right << std::setw(10)
       << s.mean << std::setw(10) << s.stddev << "\n";
  };
  row("balanced_accuracy", result.balanced_accuracy());
  row("sensitivity", result.sensitivity());
  row("specificity", result.specificity());
  return os.str();
}

}  // namespace gs4

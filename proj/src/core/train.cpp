#include "train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace gs4 {

void TrainConfig::validate() const {
  require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
  require(lr > 0, "TrainConfig: lr must be positive");
  require(lr_decay > 0 && lr_decay <= 1, "TrainConfig: lr_decay in (0,1]");
  require(weight_decay >= 0, "TrainConfig: negative weight_decay");
  require(epochs_population >= 0 && epochs_clinical_max >= 0 &&
              epochs_finetune >= 0,
          "TrainConfig: negative epoch counts");
  require(early_stop_patience >= 1, "TrainConfig: patience must be >= 1");
  require(inner_val_fraction > 0 && inner_val_fraction < 0.5,
          "TrainConfig: inner_val_fraction in (0, 0.5)");
}

void adamw_step(Mat& param, const Mat& grad, Mat& m, Mat& v, int64_t step,
                double lr, double beta1, double beta2, double eps,
                double weight_decay) {
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v.array().matrix() +
      (1.0 - beta2) * grad.array().square().matrix();
  const double bc1 = 1.0 - std::pow(beta1, double(step));
  const double bc2 = 1.0 - std::pow(beta2, double(step));
  param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  param.array() -= lr * weight_decay * param.array();
}

AdamW::AdamW(const GraphS4Model& model) {
  for (const Param& p : model.params) {
    m_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
  }
}

void AdamW::step(GraphS4Model& model, const std::vector<Mat>& grads, double lr,
                 const TrainConfig& cfg) {
  if (m_.size() != model.params.size()) {
    // Tensors added after construction (e.g. a fresh cls head).
    while (m_.size() < model.params.size()) {
      const Param& p = model.params[m_.size()];
      m_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    }
  }
  step_++;
  for (std::size_t i = 0; i < model.params.size(); i++) {
    Param& p = model.params[i];
    if (p.frozen || i >= grads.size() || grads[i].size() == 0) continue;
    adamw_step(p.value, grads[i], m_[i], v_[i], step_, lr, cfg.beta1,
               cfg.beta2, cfg.adam_eps, cfg.weight_decay);
  }
}

namespace {

int resolve_threads(int threads) {
  if (threads > 0) return threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

constexpr std::size_t kChunk = 8;

struct ChunkOut {
  LossParts parts;
  std::vector<Mat> grads;
};

template <typename BuildFn>
BatchGrad run_batched(GraphS4Model& model, std::size_t count,
                      BuildFn&& build_one, int threads) {
  const std::size_t nchunks = (count + kChunk - 1) / kChunk;
  std::vector<ChunkOut> outs(nchunks);

  auto run_chunk = [&](std::size_t chunk) {
    ChunkOut& out = outs[chunk];
    out.grads.assign(model.params.size(), Mat());
    ad::Tape tape;
    ParamBinding bind;
    bind.model = &model;
    int total = -1;
    const std::size_t lo = chunk * kChunk;
    const std::size_t hi = std::min(count, lo + kChunk);
    for (std::size_t i = lo; i < hi; i++) {
      auto [loss_node, parts] = build_one(tape, bind, i);
      out.parts.loss += parts.loss;
      out.parts.mse += parts.mse;
      out.parts.pearson += parts.pearson;
      total = total < 0 ? loss_node : tape.add(total, loss_node);
    }
    tape.backward(total);
    bind.collect(tape, out.grads, 1.0 / double(count));
  };

  const int nthreads = std::min<int>(resolve_threads(threads), int(nchunks));
  if (nthreads <= 1) {
    for (std::size_t c = 0; c < nchunks; c++) run_chunk(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < nthreads; w++)
      pool.emplace_back([&] {
        for (std::size_t c = next.fetch_add(1); c < nchunks;
             c = next.fetch_add(1))
          run_chunk(c);
      });
    for (auto& th : pool) th.join();
  }

  BatchGrad result;
  result.grads.assign(model.params.size(), Mat());
  for (std::size_t c = 0; c < nchunks; c++) {  // fixed accumulation order
    result.parts.loss += outs[c].parts.loss;
    result.parts.mse += outs[c].parts.mse;
    result.parts.pearson += outs[c].parts.pearson;
    for (std::size_t i = 0; i < model.params.size(); i++) {
      if (outs[c].grads[i].size() == 0) continue;
      if (result.grads[i].size() == 0)
        result.grads[i] = outs[c].grads[i];
      else
        result.grads[i] += outs[c].grads[i];
    }
  }
  result.parts.loss /= double(count);
  result.parts.mse /= double(count);
  result.parts.pearson /= double(count);
  return result;
}

}  // namespace

BatchGrad batch_gradients_seq(GraphS4Model& model,
                              const std::vector<TaskInstance>& batch,
                              const LossConfig& loss_cfg, uint64_t dropout_seed,
                              bool train_mode, int threads) {
  require(!batch.empty(), "batch_gradients_seq: empty batch");
  return run_batched(
      model, batch.size(),
      [&](ad::Tape& tape, ParamBinding& bind, std::size_t i) {
        std::mt19937_64 rng(mix_seed(dropout_seed, i));
        ForwardNodes fwd = build_forward(tape, bind, batch[i].input,
                                         train_mode ? &rng : nullptr);
        SeqLossNodes nodes = build_seq_loss_parts(tape, fwd, batch[i], loss_cfg);
        LossParts parts{tape.val(nodes.loss)(0, 0), tape.val(nodes.mse)(0, 0),
                        tape.val(nodes.pearson)(0, 0)};
        return std::pair<int, LossParts>(nodes.loss, parts);
      },
      threads);
}

BatchGrad batch_gradients_cls(GraphS4Model& model,
                              const std::vector<const Sample*>& batch,
                              uint64_t dropout_seed, bool train_mode,
                              int threads) {
  require(!batch.empty(), "batch_gradients_cls: empty batch");
  return run_batched(
      model, batch.size(),
      [&](ad::Tape& tape, ParamBinding& bind, std::size_t i) {
        const Sample& s = *batch[i];
        require(s.label == 0 || s.label == 1,
                "batch_gradients_cls: unlabeled sample " + s.id);
        std::mt19937_64 rng(mix_seed(dropout_seed, i));
        ForwardNodes fwd =
            build_forward(tape, bind, s.x, train_mode ? &rng : nullptr);
        const int loss = build_cls_loss(tape, bind, fwd, s.label);
        LossParts parts{tape.val(loss)(0, 0), 0.0, 0.0};
        return std::pair<int, LossParts>(loss, parts);
      },
      threads);
}

namespace {

LossParts loss_parts_plain(const Mat& y, const Mat& y_hat,
                           const LossConfig& cfg) {
  LossParts out;
  const double vp = double(y.rows());
  const double tp = double(y.cols());
  out.mse = (y - y_hat).squaredNorm() / (vp * tp);
  for (Eigen::Index i = 0; i < y.rows(); i++) {
    Eigen::RowVectorXd yc = y.row(i).array() - y.row(i).mean();
    Eigen::RowVectorXd hc = y_hat.row(i).array() - y_hat.row(i).mean();
    out.pearson += yc.dot(hc) /
                   (std::sqrt(std::max(yc.squaredNorm(), cfg.pearson_eps)) *
                    std::sqrt(std::max(hc.squaredNorm(), cfg.pearson_eps)));
  }
  out.pearson /= vp;
  out.loss = cfg.lambda1 * out.mse - cfg.lambda2 * out.pearson;
  return out;
}

}  // namespace

LossParts eval_instance(const GraphS4Model& model, const TaskInstance& inst,
                        const LossConfig& cfg) {
  const Mat pred = forward_seq(model, inst.input, ForwardMode::Conv);
  std::vector<int> rows, cols;
  mask_rectangle(inst.loss_mask, rows, cols);
  Mat y(Eigen::Index(rows.size()), Eigen::Index(cols.size()));
  Mat yh(y.rows(), y.cols());
  for (std::size_t i = 0; i < rows.size(); i++)
    for (std::size_t j = 0; j < cols.size(); j++) {
      y(Eigen::Index(i), Eigen::Index(j)) = inst.target(rows[i], cols[j]);
      yh(Eigen::Index(i), Eigen::Index(j)) = pred(rows[i], cols[j]);
    }
  return loss_parts_plain(y, yh, cfg);
}

namespace {

void log_line(std::ostream* log, int epoch, const std::string& split,
              const LossParts& parts, double lr) {
  if (!log) return;
  (*log) << epoch << '\t' << split << '\t' << parts.loss << '\t' << parts.mse
         << '\t' << parts.pearson << '\t' << lr << '\n';
  log->flush();
}

std::vector<Sample> standardized_copy(const std::vector<const Sample*>& in) {
  std::vector<Sample> out;
  out.reserve(in.size());
  for (const Sample* s : in) {
    Sample c = *s;
    c.x = standardize(c.x);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

GraphS4Model pretrain_ssl(const std::vector<const Sample*>& population,
                          const std::vector<const Sample*>& clinical_healthy,
                          const TaskSpec& spec, const NetworkPartition& part,
                          const ModelConfig& mcfg, const TrainConfig& cfg,
                          const LossConfig& loss_cfg, std::ostream* log) {
  cfg.validate();
  loss_cfg.validate();
  require(!population.empty(), "pretrain_ssl: empty population dataset");
  require(clinical_healthy.size() >= 2,
          "pretrain_ssl: clinical set needs at least 2 samples");
  for (const Sample* s : clinical_healthy)
    require(s->label == 0,
            "pretrain_ssl: patient sample in clinical_healthy: " + s->id);

  std::vector<Sample> pop = standardized_copy(population);
  std::vector<Sample> clin = standardized_copy(clinical_healthy);

  // Inner-validation split: deterministic shuffle, last fraction held out.
  {
    std::vector<std::size_t> order(clin.size());
    for (std::size_t i = 0; i < order.size(); i++) order[i] = i;
    auto rng = make_rng(mix_seed(cfg.seed, 0x1771));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Sample> shuffled;
    for (std::size_t i : order) shuffled.push_back(std::move(clin[i]));
    clin = std::move(shuffled);
  }
  const std::size_t n_val = std::max<std::size_t>(
      1, std::size_t(std::lround(cfg.inner_val_fraction * double(clin.size()))));
  const std::size_t n_train = clin.size() - n_val;
  require(n_train >= 1, "pretrain_ssl: clinical set too small for a split");

  std::vector<TaskInstance> val_instances;
  for (std::size_t i = n_train; i < clin.size(); i++)
    val_instances.push_back(
        build_instance(clin[i], spec, part, mix_seed(cfg.seed, 0xe7a1 + i)));

  GraphS4Model model = init_model(mcfg, cfg.seed);
  AdamW opt(model);
  double lr = cfg.lr;
  int epoch = 0;

  auto inner_val_parts = [&]() {
    LossParts sum;
    for (const TaskInstance& inst : val_instances) {
      LossParts p = eval_instance(model, inst, loss_cfg);
      sum.loss += p.loss;
      sum.mse += p.mse;
      sum.pearson += p.pearson;
    }
    const double n = double(val_instances.size());
    sum.loss /= n;
    sum.mse /= n;
    sum.pearson /= n;
    return sum;
  };

  auto run_epoch = [&](const std::vector<Sample>& data, std::size_t limit) {
    std::vector<std::size_t> order(limit);
    for (std::size_t i = 0; i < limit; i++) order[i] = i;
    auto rng = make_rng(mix_seed(cfg.seed, 0xbc00 + uint64_t(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    LossParts sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < limit;
         start += std::size_t(cfg.batch_size)) {
      const std::size_t end =
          std::min(limit, start + std::size_t(cfg.batch_size));
      std::vector<TaskInstance> batch;
      for (std::size_t i = start; i < end; i++)
        batch.push_back(build_instance(
            data[order[i]], spec, part,
            mix_seed(cfg.seed, 0x9000 + uint64_t(epoch) * 131071 + order[i])));
      BatchGrad bg = batch_gradients_seq(
          model, batch, loss_cfg,
          mix_seed(cfg.seed, 0xd0 + uint64_t(epoch) * 524287 + start), true,
          cfg.threads);
      opt.step(model, bg.grads, lr, cfg);
      sum.loss += bg.parts.loss;
      sum.mse += bg.parts.mse;
      sum.pearson += bg.parts.pearson;
      batches++;
    }
    sum.loss /= double(batches);
    sum.mse /= double(batches);
    sum.pearson /= double(batches);
    return sum;
  };

  for (int e = 0; e < cfg.epochs_population; e++, epoch++) {
    LossParts train = run_epoch(pop, pop.size());
    log_line(log, epoch, "population_train", train, lr);
    log_line(log, epoch, "inner_val", inner_val_parts(), lr);
    lr *= cfg.lr_decay;
  }

  GraphS4Model best = model;
  double best_loss = inner_val_parts().loss;
  int since_improve = 0;
  for (int e = 0; e < cfg.epochs_clinical_max; e++, epoch++) {
    LossParts train = run_epoch(clin, n_train);
    LossParts val = inner_val_parts();
    log_line(log, epoch, "clinical_train", train, lr);
    log_line(log, epoch, "inner_val", val, lr);
    lr *= cfg.lr_decay;
    if (val.loss < best_loss) {
      best_loss = val.loss;
      best = model;
      since_improve = 0;
    } else {
      since_improve++;
      if (since_improve >= cfg.early_stop_patience) break;
    }
  }
  return best;
}

namespace {

double balanced_accuracy(const std::vector<int>& labels,
                         const std::vector<int>& preds) {
  double tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < labels.size(); i++) {
    if (labels[i] == 1)
      (preds[i] == 1 ? tp : fn)++;
    else
      (preds[i] == 0 ? tn : fp)++;
  }
  const double sens = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  const double spec = tn + fp > 0 ? tn / (tn + fp) : 0.0;
  return 0.5 * (sens + spec);
}

}  // namespace

GraphS4Model finetune_cls(GraphS4Model model,
                          const std::vector<const Sample*>& labeled,
                          const TrainConfig& cfg, bool full_finetune,
                          std::ostream* log) {
  cfg.validate();
  int pos = 0, neg = 0;
  for (const Sample* s : labeled) {
    if (s->label == 1) pos++;
    if (s->label == 0) neg++;
  }
  require(pos >= 2 && neg >= 2,
          "finetune_cls: need at least two samples of each class");

  ensure_cls_head(model, cfg.seed);
  const std::string last_layer =
      "layer" + std::to_string(model.cfg.num_layers - 1) + ".";
  for (Param& p : model.params) {
    if (full_finetune)
      p.frozen = false;
    else
      p.frozen = !(p.name.rfind(last_layer, 0) == 0 ||
                   p.name.rfind("cls_", 0) == 0);
  }

  // Classification keeps the original scale: unlike the masked tasks there
  // is no zero fill to anchor, and per-sample amplitude is itself a class
  // signal.
  std::vector<Sample> data;
  data.reserve(labeled.size());
  for (const Sample* s : labeled) data.push_back(*s);

  // Stratified inner-validation split.
  std::vector<std::size_t> pos_idx, neg_idx;
  for (std::size_t i = 0; i < data.size(); i++)
    (data[i].label == 1 ? pos_idx : neg_idx).push_back(i);
  auto rng = make_rng(mix_seed(cfg.seed, 0xf17e));
  std::shuffle(pos_idx.begin(), pos_idx.end(), rng);
  std::shuffle(neg_idx.begin(), neg_idx.end(), rng);
  auto take_val = [&](std::vector<std::size_t>& idx) {
    const std::size_t n = std::max<std::size_t>(
        1, std::size_t(std::lround(cfg.inner_val_fraction * double(idx.size()))));
    std::vector<std::size_t> val(idx.end() - std::ptrdiff_t(n), idx.end());
    idx.resize(idx.size() - n);
    return val;
  };
  std::vector<std::size_t> val_idx = take_val(pos_idx);
  for (std::size_t i : take_val(neg_idx)) val_idx.push_back(i);
  std::vector<std::size_t> train_idx = pos_idx;
  train_idx.insert(train_idx.end(), neg_idx.begin(), neg_idx.end());
  require(!train_idx.empty(), "finetune_cls: empty training split");

  AdamW opt(model);
  double lr = cfg.lr;

  auto val_bacc = [&]() {
    std::vector<int> labels, preds;
    for (std::size_t i : val_idx) {
      labels.push_back(data[i].label);
      Vec logits = forward_cls(model, data[i].x);
      preds.push_back(logits[1] > logits[0] ? 1 : 0);
    }
    return balanced_accuracy(labels, preds);
  };

  GraphS4Model best = model;
  double best_bacc = -1.0;
  int since_improve = 0;
  for (int epoch = 0; epoch < cfg.epochs_finetune; epoch++) {
    std::vector<std::size_t> order = train_idx;
    auto erng = make_rng(mix_seed(cfg.seed, 0xce00 + uint64_t(epoch)));
    std::shuffle(order.begin(), order.end(), erng);
    LossParts sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += std::size_t(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + std::size_t(cfg.batch_size));
      std::vector<const Sample*> batch;
      for (std::size_t i = start; i < end; i++)
        batch.push_back(&data[order[i]]);
      BatchGrad bg = batch_gradients_cls(
          model, batch,
          mix_seed(cfg.seed, 0xdd + uint64_t(epoch) * 262139 + start), true,
          cfg.threads);
      opt.step(model, bg.grads, lr, cfg);
      sum.loss += bg.parts.loss;
      batches++;
    }
    sum.loss /= double(batches);
    log_line(log, epoch, "finetune_train", sum, lr);
    const double bacc = val_bacc();
    log_line(log, epoch, "inner_val_bacc", {bacc, 0.0, 0.0}, lr);
    lr *= cfg.lr_decay;
    if (bacc > best_bacc) {
      best_bacc = bacc;
      best = model;
      since_improve = 0;
    } else {
      since_improve++;
      if (since_improve >= cfg.early_stop_patience) break;
    }
  }
  return best;
}

GradCheckReport gradcheck_model(GraphS4Model& model, const TaskInstance& inst,
                                const LossConfig& cfg, double h, double tol,
                                int max_entries) {
  std::vector<TaskInstance> batch{inst};
  BatchGrad bg = batch_gradients_seq(model, batch, cfg, 0, false, 1);

  auto loss_value = [&]() {
    ad::Tape tape;
    ParamBinding bind;
    bind.model = &model;
    ForwardNodes fwd = build_forward(tape, bind, inst.input, nullptr);
    const int loss = build_seq_loss(tape, fwd, inst, cfg);
    return tape.val(loss)(0, 0);
  };

  GradCheckReport report;
  for (std::size_t pi = 0; pi < model.params.size(); pi++) {
    Param& p = model.params[pi];
    if (p.frozen) continue;
    const Mat& g = bg.grads[pi];
    double worst = 0.0;
    const Eigen::Index total = p.value.size();
    const Eigen::Index stride =
        (max_entries > 0 && total > max_entries)
            ? (total + max_entries - 1) / max_entries
            : 1;
    for (Eigen::Index k = 0; k < total; k += stride) {
      double* slot = p.value.data() + k;
      const double saved = *slot;
      *slot = saved + h;
      const double up = loss_value();
      *slot = saved - h;
      const double down = loss_value();
      *slot = saved;
      const double fd = (up - down) / (2.0 * h);
      const double ad = g.size() == 0 ? 0.0 : *(g.data() + k);
      const double scale = std::max({1e-6, std::abs(fd), std::abs(ad)});
      worst = std::max(worst, std::abs(fd - ad) / scale);
    }
    report.per_tensor.push_back({p.name, worst});
    report.max_rel_err = std::max(report.max_rel_err, worst);
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

}  // namespace gs4

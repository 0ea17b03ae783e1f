#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "core/train.hpp"

using namespace gs4;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.num_layers = 1;
  cfg.state_dim = 4;
  cfg.channels = 2;
  cfg.diffusion_steps = 1;
  cfg.dropout = 0.0;
  cfg.num_nodes = 4;
  cfg.emb_dim = 2;
  return cfg;
}

NetworkPartition tiny_partition() {
  NetworkPartition p;
  p.num_nodes = 4;
  p.networks = {{"A", {0, 1}}, {"B", {2, 3}}};
  return p;
}

TaskInstance tiny_instance(uint64_t seed) {
  auto rng = make_rng(seed);
  std::normal_distribution<double> nd;
  Sample s;
  s.id = "t";
  s.x = Mat(4, 16);
  for (int i = 0; i < 4; i++)
    for (int j = 0; j < 16; j++) s.x(i, j) = nd(rng);
  TaskSpec spec;
  spec.kind = TaskKind::NetworkMask;
  spec.target_network = "A";
  return build_instance(s, spec, tiny_partition(), seed);
}

}  // namespace

TEST_CASE("loss_mse_pearson worked examples") {
  LossConfig cfg;
  cfg.lambda1 = 1.0;
  cfg.lambda2 = 1.0;

  // Perfect non-constant prediction: loss = -1.
  Mat y(2, 4);
  y << 1, 2, 3, 4, -1, 0, 2, 1;
  CHECK(loss_mse_pearson(y, y, cfg) == doctest::Approx(-1.0).epsilon(1e-9));

  // Hand-derived: y=[1,-1], y_hat=[-1,1] -> 4 - (-1) = 5.
  Mat y2(1, 2), yh2(1, 2);
  y2 << 1, -1;
  yh2 << -1, 1;
  CHECK(loss_mse_pearson(y2, yh2, cfg) == doctest::Approx(5.0).epsilon(1e-9));

  // Constant target row: correlation term collapses under the eps guard.
  Mat y3 = Mat::Constant(1, 4, 2.0);
  Mat yh3(1, 4);
  yh3 << 1, 2, 3, 4;
  const double mse = (y3 - yh3).squaredNorm() / 4.0;
  CHECK(loss_mse_pearson(y3, yh3, cfg) == doctest::Approx(mse).epsilon(1e-6));
}

TEST_CASE("pearson term is invariant under positive affine maps") {
  LossConfig cfg;
  cfg.lambda1 = 0.0;
  cfg.lambda2 = 1.0;
  auto rng = make_rng(3);
  std::normal_distribution<double> nd;
  Mat y(3, 8), yh(3, 8);
  for (int i = 0; i < 3; i++)
    for (int j = 0; j < 8; j++) {
      y(i, j) = nd(rng);
      yh(i, j) = nd(rng);
    }
  const double base = loss_mse_pearson(y, yh, cfg);
  Mat scaled = 2.5 * yh.array() + 7.0;
  CHECK(loss_mse_pearson(y, scaled, cfg) ==
        doctest::Approx(base).epsilon(1e-7));
}

TEST_CASE("adamw worked examples") {
  // Step 1, g=1, lr=0.1 -> update ~ -0.1.
  Mat theta = Mat::Zero(1, 1), m = Mat::Zero(1, 1), v = Mat::Zero(1, 1);
  adamw_step(theta, Mat::Ones(1, 1), m, v, 1, 0.1, 0.9, 0.999, 1e-8, 0.0);
  CHECK(theta(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));

  // Decoupled decay only: g=0, theta=1, wd=0.01, lr=0.1 -> 0.999.
  Mat t2 = Mat::Ones(1, 1), m2 = Mat::Zero(1, 1), v2 = Mat::Zero(1, 1);
  adamw_step(t2, Mat::Zero(1, 1), m2, v2, 1, 0.1, 0.9, 0.999, 1e-8, 0.01);
  CHECK(t2(0, 0) == doctest::Approx(0.999).epsilon(1e-12));

  // No gradient, no decay: unchanged.
  Mat t3 = Mat::Constant(1, 1, 0.3), m3 = Mat::Zero(1, 1),
      v3 = Mat::Zero(1, 1);
  adamw_step(t3, Mat::Zero(1, 1), m3, v3, 1, 0.1, 0.9, 0.999, 1e-8, 0.0);
  CHECK(t3(0, 0) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("optimizer step with lr 0 and wd 0 changes nothing") {
  GraphS4Model model = init_model(tiny_cfg(), 1);
  GraphS4Model before = model;
  AdamW opt(model);
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  std::vector<TaskInstance> batch{tiny_instance(1)};
  BatchGrad bg = batch_gradients_seq(model, batch, LossConfig{}, 0, false, 1);
  opt.step(model, bg.grads, 0.0, cfg);
  for (std::size_t i = 0; i < model.params.size(); i++)
    CHECK((model.params[i].value - before.params[i].value)
              .cwiseAbs()
              .maxCoeff() == 0.0);
}

TEST_CASE("frozen tensors receive zero gradient and never move") {
  GraphS4Model model = init_model(tiny_cfg(), 2);
  const int emb_idx = model.index_of("emb");
  REQUIRE(emb_idx >= 0);
  model.params[std::size_t(emb_idx)].frozen = true;
  const Mat before = model.params[std::size_t(emb_idx)].value;

  AdamW opt(model);
  TrainConfig cfg;
  std::vector<TaskInstance> batch{tiny_instance(2)};
  for (int step = 0; step < 3; step++) {
    BatchGrad bg =
        batch_gradients_seq(model, batch, LossConfig{}, 0, false, 1);
    CHECK(bg.grads[std::size_t(emb_idx)].size() == 0);
    opt.step(model, bg.grads, 0.01, cfg);
  }
  CHECK((model.params[std::size_t(emb_idx)].value - before)
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("batch gradients are independent of thread count") {
  GraphS4Model model = init_model(tiny_cfg(), 3);
  std::vector<TaskInstance> batch;
  for (uint64_t s = 0; s < 20; s++) batch.push_back(tiny_instance(s));
  BatchGrad g1 = batch_gradients_seq(model, batch, LossConfig{}, 5, true, 1);
  BatchGrad g4 = batch_gradients_seq(model, batch, LossConfig{}, 5, true, 4);
  CHECK(g1.parts.loss == g4.parts.loss);
  REQUIRE(g1.grads.size() == g4.grads.size());
  for (std::size_t i = 0; i < g1.grads.size(); i++) {
    REQUIRE(g1.grads[i].size() == g4.grads[i].size());
    if (g1.grads[i].size() > 0)
      CHECK((g1.grads[i] - g4.grads[i]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("model gradients match finite differences") {
  GraphS4Model model = init_model(tiny_cfg(), 4);
  TaskInstance inst = tiny_instance(4);
  GradCheckReport report =
      gradcheck_model(model, inst, LossConfig{}, 1e-5, 1e-3, 3);
  for (const auto& entry : report.per_tensor) {
    INFO(entry.tensor);
    CHECK(entry.rel_err < 1e-3);
  }
  CHECK(report.pass);
}

TEST_CASE("gradient of the mse term vanishes at a perfect prediction") {
  LossConfig cfg;
  cfg.lambda1 = 1.0;
  cfg.lambda2 = 0.0;
  // A model with zeroed output projection predicts 0; target 0 gives a
  // stationary point of the quadratic.
  GraphS4Model model = init_model(tiny_cfg(), 5);
  model.tensor("output_proj").setZero();
  TaskInstance inst = tiny_instance(5);
  inst.target.setZero();
  std::vector<TaskInstance> batch{inst};
  BatchGrad bg = batch_gradients_seq(model, batch, cfg, 0, false, 1);
  const int op = model.index_of("output_proj");
  // d(mse)/d(output_proj) is 0 because the residual is identically zero.
  CHECK(bg.grads[std::size_t(op)].cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pretrain improves the inner validation loss") {
  SynthConfig scfg;
  scfg.num_nodes = 8;
  scfg.num_networks = 2;
  scfg.timepoints = 48;
  scfg.population_count = 12;
  scfg.clinical_ss_train_count = 8;
  scfg.clinical_ss_val_count = 4;
  scfg.clinical_cv_count = 4;
  scfg.seed = 11;
  Dataset ds = generate_synth(scfg);
  NetworkPartition part = partition_from_synth(scfg);

  ModelConfig mcfg = tiny_cfg();
  mcfg.num_nodes = 8;

  TaskSpec spec;
  spec.kind = TaskKind::NetworkMask;
  spec.target_network = "N1";

  TrainConfig tc;
  tc.batch_size = 12;
  tc.epochs_population = 3;
  tc.epochs_clinical_max = 3;
  tc.early_stop_patience = 2;
  tc.inner_val_fraction = 0.25;
  tc.seed = 7;
  tc.threads = 2;

  LossConfig lc;
  std::ostringstream log;
  GraphS4Model trained = pretrain_ssl(ds.by_split(Split::Population),
                                      ds.by_split(Split::ClinicalSsTrain),
                                      spec, part, mcfg, tc, lc, &log);

  // Compare trained vs untrained eval loss on the validation split.
  GraphS4Model fresh = init_model(mcfg, tc.seed);
  double trained_loss = 0.0, fresh_loss = 0.0;
  for (const Sample* s : ds.by_split(Split::ClinicalSsVal)) {
    Sample std_s = *s;
    std_s.x = standardize(std_s.x);
    TaskInstance inst = build_instance(std_s, spec, part, 3);
    trained_loss += eval_instance(trained, inst, lc).loss;
    fresh_loss += eval_instance(fresh, inst, lc).loss;
  }
  CHECK(trained_loss < fresh_loss);

  // Metrics log format: epoch <tab> split <tab> loss mse pearson lr.
  std::string line;
  std::istringstream is(log.str());
  REQUIRE(std::getline(is, line));
  CHECK(std::count(line.begin(), line.end(), '\t') == 5);
}

TEST_CASE("pretrain determinism") {
  SynthConfig scfg;
  scfg.num_nodes = 6;
  scfg.num_networks = 2;
  scfg.timepoints = 32;
  scfg.population_count = 6;
  scfg.clinical_ss_train_count = 4;
  scfg.clinical_ss_val_count = 2;
  scfg.clinical_cv_count = 2;
  scfg.seed = 3;
  Dataset ds = generate_synth(scfg);
  NetworkPartition part = partition_from_synth(scfg);
  ModelConfig mcfg = tiny_cfg();
  mcfg.num_nodes = 6;
  TaskSpec spec;
  spec.kind = TaskKind::NetworkMask;
  spec.target_network = "N1";
  TrainConfig tc;
  tc.batch_size = 6;
  tc.epochs_population = 2;
  tc.epochs_clinical_max = 2;
  tc.early_stop_patience = 2;
  tc.inner_val_fraction = 0.25;
  tc.seed = 9;
  tc.threads = 3;

  GraphS4Model a = pretrain_ssl(ds.by_split(Split::Population),
                                ds.by_split(Split::ClinicalSsTrain), spec,
                                part, mcfg, tc, LossConfig{}, nullptr);
  GraphS4Model b = pretrain_ssl(ds.by_split(Split::Population),
                                ds.by_split(Split::ClinicalSsTrain), spec,
                                part, mcfg, tc, LossConfig{}, nullptr);
  REQUIRE(a.params.size() == b.params.size());
  for (std::size_t i = 0; i < a.params.size(); i++)
    CHECK((a.params[i].value - b.params[i].value).cwiseAbs().maxCoeff() ==
          0.0);
}

TEST_CASE("finetune freezes everything but the last layer and head") {
  SynthConfig scfg;
  scfg.num_nodes = 6;
  scfg.num_networks = 2;
  scfg.timepoints = 32;
  scfg.population_count = 2;
  scfg.clinical_ss_train_count = 2;
  scfg.clinical_ss_val_count = 2;
  scfg.clinical_cv_count = 16;
  scfg.seed = 21;
  Dataset ds = generate_synth(scfg);

  ModelConfig mcfg = tiny_cfg();
  mcfg.num_layers = 2;
  mcfg.num_nodes = 6;
  GraphS4Model base = init_model(mcfg, 13);
  GraphS4Model before = base;

  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs_finetune = 2;
  tc.early_stop_patience = 2;
  tc.inner_val_fraction = 0.25;
  tc.seed = 5;
  tc.threads = 2;

  GraphS4Model tuned =
      finetune_cls(base, ds.by_split(Split::ClinicalCv), tc, false, nullptr);
  for (const Param& p : tuned.params) {
    const bool trainable = p.name.rfind("layer1.", 0) == 0 ||
                           p.name.rfind("cls_", 0) == 0;
    const int idx = before.index_of(p.name);
    if (idx < 0) continue;  // cls head tensors are new
    if (!trainable)
      CHECK((p.value - before.params[std::size_t(idx)].value)
                .cwiseAbs()
                .maxCoeff() == 0.0);
  }
  CHECK(tuned.has_cls_head);
}

TEST_CASE("finetune rejects single-class data") {
  SynthConfig scfg;
  scfg.num_nodes = 6;
  scfg.num_networks = 2;
  scfg.timepoints = 32;
  scfg.population_count = 2;
  scfg.clinical_ss_train_count = 4;
  scfg.clinical_ss_val_count = 2;
  scfg.clinical_cv_count = 2;
  scfg.seed = 2;
  Dataset ds = generate_synth(scfg);
  ModelConfig mcfg = tiny_cfg();
  mcfg.num_nodes = 6;
  GraphS4Model base = init_model(mcfg, 1);
  TrainConfig tc;
  // ss_train samples are all healthy.
  CHECK_THROWS_AS(finetune_cls(base, ds.by_split(Split::ClinicalSsTrain), tc,
                               false, nullptr),
                  std::invalid_argument);
}

TEST_CASE("pretrain rejects patients in the clinical healthy set") {
  SynthConfig scfg;
  scfg.num_nodes = 6;
  scfg.num_networks = 2;
  scfg.timepoints = 32;
  scfg.population_count = 2;
  scfg.clinical_ss_train_count = 2;
  scfg.clinical_ss_val_count = 4;
  scfg.clinical_cv_count = 2;
  scfg.seed = 2;
  Dataset ds = generate_synth(scfg);
  ModelConfig mcfg = tiny_cfg();
  mcfg.num_nodes = 6;
  TaskSpec spec;
  spec.kind = TaskKind::NetworkMask;
  spec.target_network = "N1";
  // ss_val contains patients.
  CHECK_THROWS_AS(
      pretrain_ssl(ds.by_split(Split::Population),
                   ds.by_split(Split::ClinicalSsVal), spec,
                   partition_from_synth(scfg), mcfg, TrainConfig{},
                   LossConfig{}, nullptr),
      std::invalid_argument);
}

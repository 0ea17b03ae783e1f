#include <doctest.h>

#include <filesystem>

#include "core/model.hpp"
#include "core/tasks.hpp"

using namespace gs4;

namespace {

NetworkPartition four_node_partition() {
  NetworkPartition p;
  p.num_nodes = 4;
  p.networks = {{"A", {1, 3}}, {"B", {0, 2}}};
  return p;
}

Sample make_sample(const Mat& x, const std::string& id = "s0") {
  Sample s;
  s.id = id;
  s.x = x;
  s.label = 0;
  s.site = "test";
  return s;
}

}  // namespace

TEST_CASE("make_network_mask from a hard partition") {
  Eigen::VectorXi m = make_network_mask(four_node_partition(), "A");
  CHECK(m[0] == 0);
  CHECK(m[1] == 1);
  CHECK(m[2] == 0);
  CHECK(m[3] == 1);
  CHECK_THROWS_AS(make_network_mask(four_node_partition(), "C"),
                  std::invalid_argument);
}

TEST_CASE("make_network_mask overlap threshold is inclusive at 0.5") {
  NetworkPartition p;
  p.num_nodes = 2;
  p.networks = {{"A", {0}}, {"B", {1}}};
  Mat ov(2, 2);
  ov << 0.5, 0.5, 0.49, 0.51;
  p.overlaps = ov;
  Eigen::VectorXi m = make_network_mask(p, "A");
  CHECK(m[0] == 1);   // exactly 0.5 counts
  CHECK(m[1] == 0);   // 0.49 does not
}

TEST_CASE("network_mask instance worked example") {
  NetworkPartition p;
  p.num_nodes = 2;
  p.networks = {{"A", {0}}, {"B", {1}}};
  Mat x(2, 2);
  x << 1, 2, 3, 4;
  TaskSpec spec;
  spec.kind = TaskKind::NetworkMask;
  spec.target_network = "A";
  TaskInstance inst = build_instance(make_sample(x), spec, p, 0);
  CHECK(inst.input(0, 0) == 0.0);
  CHECK(inst.input(0, 1) == 0.0);
  CHECK(inst.input(1, 0) == 3.0);
  CHECK(inst.input(1, 1) == 4.0);
  CHECK(inst.target == x);
  CHECK(inst.loss_mask(0, 0) == 1.0);
  CHECK(inst.loss_mask(0, 1) == 1.0);
  CHECK(inst.loss_mask(1, 0) == 0.0);
  CHECK(inst.loss_mask(1, 1) == 0.0);
}

TEST_CASE("forecast instance masks the last columns") {
  Mat x(2, 3);
  x << 1, 2, 3, 4, 5, 6;
  TaskSpec spec;
  spec.kind = TaskKind::Forecast;
  spec.horizon = 1;
  NetworkPartition p;
  p.num_nodes = 2;
  p.networks = {{"A", {0}}, {"B", {1}}};
  TaskInstance inst = build_instance(make_sample(x), spec, p, 0);
  for (int i = 0; i < 2; i++) {
    CHECK(inst.input(i, 2) == 0.0);
    CHECK(inst.loss_mask(i, 0) == 0.0);
    CHECK(inst.loss_mask(i, 1) == 0.0);
    CHECK(inst.loss_mask(i, 2) == 1.0);
  }
  spec.horizon = 3;
  CHECK_THROWS_AS(build_instance(make_sample(x), spec, p, 0),
                  std::invalid_argument);
}

TEST_CASE("denoise with zero sigma is the identity") {
  Mat x(2, 4);
  x << 1, 2, 3, 4, 5, 6, 7, 8;
  TaskSpec spec;
  spec.kind = TaskKind::Denoise;
  spec.noise_sigma = 0.0;
  NetworkPartition p;
  p.num_nodes = 2;
  p.networks = {{"A", {0}}, {"B", {1}}};
  TaskInstance inst = build_instance(make_sample(x), spec, p, 3);
  CHECK((inst.input - x).cwiseAbs().maxCoeff() == 0.0);
  CHECK(inst.loss_mask.minCoeff() == 1.0);
}

TEST_CASE("random_mask hides a seeded node subset") {
  Mat x = Mat::Ones(10, 6);
  TaskSpec spec;
  spec.kind = TaskKind::RandomMask;
  spec.mask_fraction = 0.3;
  NetworkPartition p;
  p.num_nodes = 10;
  std::vector<int> all;
  for (int i = 0; i < 10; i++) all.push_back(i);
  p.networks = {{"A", all}};
  TaskInstance a = build_instance(make_sample(x), spec, p, 5);
  TaskInstance b = build_instance(make_sample(x), spec, p, 5);
  CHECK((a.input - b.input).cwiseAbs().maxCoeff() == 0.0);
  int masked = 0;
  for (int i = 0; i < 10; i++)
    if (a.loss_mask(i, 0) == 1.0) masked++;
  CHECK(masked == 3);
}

TEST_CASE("hidden content never leaks into the input") {
  auto rng = make_rng(77);
  std::normal_distribution<double> nd;
  Mat x(4, 16);
  for (int i = 0; i < 4; i++)
    for (int j = 0; j < 16; j++) x(i, j) = nd(rng);
  NetworkPartition p = four_node_partition();
  for (TaskKind kind :
       {TaskKind::NetworkMask, TaskKind::Forecast, TaskKind::RandomMask}) {
    TaskSpec spec;
    spec.kind = kind;
    spec.target_network = "A";
    spec.horizon = 4;
    spec.mask_fraction = 0.5;
    TaskInstance inst = build_instance(make_sample(x), spec, p, 9);
    CHECK((inst.input.array() * inst.loss_mask.array()).abs().maxCoeff() ==
          0.0);
  }
}

TEST_CASE("network masks of a partition are disjoint and cover") {
  NetworkPartition p;
  p.num_nodes = 6;
  p.networks = {{"A", {0, 3}}, {"B", {1, 4}}, {"C", {2, 5}}};
  Eigen::VectorXi total = Eigen::VectorXi::Zero(6);
  for (const auto& [name, nodes] : p.networks) {
    (void)nodes;
    total += make_network_mask(p, name);
  }
  for (int i = 0; i < 6; i++) CHECK(total[i] == 1);
}

TEST_CASE("partition validation") {
  NetworkPartition p;
  p.num_nodes = 3;
  p.networks = {{"A", {0, 1}}, {"B", {1, 2}}};  // overlap without overlaps
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.networks = {{"A", {0}}, {"B", {2}}};  // gap
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.networks = {{"A", {0, 1}}, {"B", {2}}};
  CHECK_NOTHROW(p.validate());
}

TEST_CASE("partition file round trip keeps order") {
  const auto dir = std::filesystem::temp_directory_path() / "gs4_part_test";
  std::filesystem::create_directories(dir);
  NetworkPartition p;
  p.num_nodes = 4;
  p.networks = {{"Zeta", {0, 1}}, {"Alpha", {2, 3}}};
  save_partition(dir / "p.json", p);
  NetworkPartition q = load_partition(dir / "p.json");
  REQUIRE(q.networks.size() == 2);
  CHECK(q.networks[0].first == "Zeta");
  CHECK(q.networks[1].first == "Alpha");
  CHECK(q.networks[0].second == std::vector<int>({0, 1}));
  CHECK(q.num_nodes == 4);
  std::filesystem::remove_all(dir);
}

TEST_CASE("partition_from_synth blocks") {
  SynthConfig cfg;
  cfg.num_nodes = 8;
  cfg.num_networks = 4;
  NetworkPartition p = partition_from_synth(cfg);
  CHECK(p.networks.size() == 4);
  CHECK(p.networks[0].first == "N1");
  CHECK(p.networks[0].second == std::vector<int>({0, 1}));
  CHECK_NOTHROW(p.validate());
}

TEST_CASE("eval_random_mask_score determinism and perfect model") {
  ModelConfig mcfg;
  mcfg.num_layers = 1;
  mcfg.state_dim = 4;
  mcfg.channels = 2;
  mcfg.diffusion_steps = 1;
  mcfg.dropout = 0.0;
  mcfg.num_nodes = 4;
  mcfg.emb_dim = 2;
  GraphS4Model m = init_model(mcfg, 1);
  auto rng = make_rng(4);
  std::normal_distribution<double> nd;
  Mat x(4, 16);
  for (int i = 0; i < 4; i++)
    for (int j = 0; j < 16; j++) x(i, j) = nd(rng);
  TaskSpec spec;
  spec.kind = TaskKind::RandomMask;
  spec.mask_fraction = 0.5;
  spec.num_eval_masks = 3;
  NetworkPartition p = four_node_partition();
  const double s1 = eval_random_mask_score(m, make_sample(x), spec, p, 7);
  const double s2 = eval_random_mask_score(m, make_sample(x), spec, p, 7);
  CHECK(s1 == s2);
  CHECK(s1 >= 0.0);
}

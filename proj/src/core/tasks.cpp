#include "tasks.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>

#include "model.hpp"

namespace gs4 {

// ordered_json keeps the network map in file order.
using json = nlohmann::ordered_json;

const std::vector<int>& NetworkPartition::nodes_of(
    const std::string& name) const {
  for (const auto& [n, nodes] : networks)
    if (n == name) return nodes;
  throw std::invalid_argument("unknown network name: " + name);
}

int NetworkPartition::network_index(const std::string& name) const {
  for (std::size_t i = 0; i < networks.size(); i++)
    if (networks[i].first == name) return int(i);
  throw std::invalid_argument("unknown network name: " + name);
}

void NetworkPartition::validate() const {
  require(num_nodes >= 1, "partition: num_nodes must be >= 1");
  require(!networks.empty(), "partition: no networks");
  for (const auto& [name, nodes] : networks)
    for (int i : nodes)
      require(i >= 0 && i < num_nodes,
              "partition: node index out of range in network " + name);
  if (overlaps) {
    require(overlaps->rows() == num_nodes &&
                overlaps->cols() == Eigen::Index(networks.size()),
            "partition: overlaps shape mismatch");
    for (Eigen::Index i = 0; i < overlaps->rows(); i++)
      require(overlaps->row(i).sum() <= 1.0 + 1e-6,
              "partition: overlap row sums above 1");
  } else {
    std::vector<int> count(std::size_t(num_nodes), 0);
    for (const auto& [name, nodes] : networks)
      for (int i : nodes) count[std::size_t(i)]++;
    for (int i = 0; i < num_nodes; i++)
      require(count[std::size_t(i)] == 1,
              "partition: node " + std::to_string(i) +
                  " must belong to exactly one network");
  }
}

std::string task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::NetworkMask: return "network_mask";
    case TaskKind::Forecast: return "forecast";
    case TaskKind::Denoise: return "denoise";
    case TaskKind::RandomMask: return "random_mask";
  }
  return "network_mask";
}

TaskKind task_kind_from_name(const std::string& name) {
  if (name == "network_mask") return TaskKind::NetworkMask;
  if (name == "forecast") return TaskKind::Forecast;
  if (name == "denoise") return TaskKind::Denoise;
  if (name == "random_mask") return TaskKind::RandomMask;
  throw std::invalid_argument("unknown task kind: " + name);
}

std::string TaskSpec::name() const {
  switch (kind) {
    case TaskKind::NetworkMask: return target_network;
    case TaskKind::Forecast: return "forecast" + std::to_string(horizon);
    case TaskKind::Denoise: return "denoise";
    case TaskKind::RandomMask: return "random_mask";
  }
  return "task";
}

Eigen::VectorXi make_network_mask(const NetworkPartition& p,
                                  const std::string& network) {
  const int idx = p.network_index(network);
  Eigen::VectorXi m = Eigen::VectorXi::Zero(p.num_nodes);
  if (p.overlaps) {
    for (int i = 0; i < p.num_nodes; i++)
      if ((*p.overlaps)(i, idx) >= 0.5) m[i] = 1;
  } else {
    for (int i : p.networks[std::size_t(idx)].second) m[i] = 1;
  }
  return m;
}

TaskInstance build_instance(const Sample& x, const TaskSpec& spec,
                            const NetworkPartition& p, uint64_t seed) {
  const Eigen::Index v = x.x.rows();
  const Eigen::Index t = x.x.cols();
  require(p.num_nodes == int(v), "build_instance: partition/sample mismatch");

  TaskInstance inst;
  inst.target = x.x;
  inst.input = x.x;
  inst.loss_mask = Mat::Zero(v, t);

  switch (spec.kind) {
    case TaskKind::NetworkMask: {
      Eigen::VectorXi m = make_network_mask(p, spec.target_network);
      for (Eigen::Index i = 0; i < v; i++)
        if (m[i]) {
          inst.input.row(i).setZero();
          inst.loss_mask.row(i).setOnes();
        }
      break;
    }
    case TaskKind::Forecast: {
      require(spec.horizon >= 1 && spec.horizon < int(t),
              "build_instance: forecast horizon must be in [1, T)");
      inst.input.rightCols(spec.horizon).setZero();
      inst.loss_mask.rightCols(spec.horizon).setOnes();
      break;
    }
    case TaskKind::Denoise: {
      require(spec.noise_sigma >= 0, "build_instance: negative noise sigma");
      auto rng = make_rng(mix_seed(seed, 0xde01));
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (Eigen::Index i = 0; i < v; i++)
        for (Eigen::Index j = 0; j < t; j++)
          inst.input(i, j) += spec.noise_sigma * gauss(rng);
      inst.loss_mask.setOnes();
      break;
    }
    case TaskKind::RandomMask: {
      require(spec.mask_fraction > 0 && spec.mask_fraction < 1,
              "build_instance: mask_fraction must be in (0,1)");
      const int count = std::clamp(
          int(std::lround(spec.mask_fraction * double(v))), 1, int(v) - 1);
      std::vector<int> idx(static_cast<std::size_t>(v), 0);
      for (Eigen::Index i = 0; i < v; i++) idx[std::size_t(i)] = int(i);
      auto rng = make_rng(mix_seed(seed, 0x4a11));
      std::shuffle(idx.begin(), idx.end(), rng);
      for (int k = 0; k < count; k++) {
        inst.input.row(idx[std::size_t(k)]).setZero();
        inst.loss_mask.row(idx[std::size_t(k)]).setOnes();
      }
      break;
    }
  }
  require(inst.loss_mask.sum() > 0, "build_instance: empty loss mask");
  return inst;
}

double eval_random_mask_score(const GraphS4Model& model, const Sample& x,
                              const TaskSpec& spec, const NetworkPartition& p,
                              uint64_t seed) {
  require(spec.kind == TaskKind::RandomMask,
          "eval_random_mask_score: spec must be random_mask");
  require(spec.num_eval_masks >= 1,
          "eval_random_mask_score: need at least one mask");
  double total = 0.0;
  for (int m = 0; m < spec.num_eval_masks; m++) {
    TaskInstance inst = build_instance(x, spec, p, mix_seed(seed, uint64_t(m)));
    Mat pred = forward_seq(model, inst.input, ForwardMode::Conv);
    const double denom = inst.loss_mask.sum();
    const Mat err = (pred - inst.target).cwiseProduct(inst.loss_mask);
    total += err.squaredNorm() / denom;
  }
  return total / double(spec.num_eval_masks);
}

void save_partition(const std::filesystem::path& path,
                    const NetworkPartition& p) {
  p.validate();
  json j;
  j["num_nodes"] = p.num_nodes;
  j["networks"] = json::object();
  for (const auto& [name, nodes] : p.networks) j["networks"][name] = nodes;
  if (p.overlaps) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < p.overlaps->rows(); i++) {
      json row = json::array();
      for (Eigen::Index k = 0; k < p.overlaps->cols(); k++)
        row.push_back((*p.overlaps)(i, k));
      rows.push_back(row);
    }
    j["overlaps"] = rows;
  }
  std::ofstream os(path);
  if (!os) throw IoError("cannot write partition: " + path.string());
  os << j.dump(2) << '\n';
}

NetworkPartition load_partition(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open partition: " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ParseError("partition parse error in " + path.string() + ": " +
                     e.what());
  }
  NetworkPartition p;
  try {
    p.num_nodes = j.at("num_nodes").get<int>();
    for (const auto& [name, nodes] : j.at("networks").items())
      p.networks.emplace_back(name, nodes.get<std::vector<int>>());
    if (j.contains("overlaps")) {
      const auto& rows = j.at("overlaps");
      Mat ov(p.num_nodes, Eigen::Index(p.networks.size()));
      require(int(rows.size()) == p.num_nodes,
              "partition: overlaps row count mismatch");
      for (int i = 0; i < p.num_nodes; i++) {
        const auto& row = rows.at(std::size_t(i));
        require(row.size() == p.networks.size(),
                "partition: overlaps column count mismatch");
        for (std::size_t k = 0; k < p.networks.size(); k++)
          ov(i, Eigen::Index(k)) = row.at(k).get<double>();
      }
      p.overlaps = ov;
    }
  } catch (const json::exception& e) {
    throw ParseError("partition schema error in " + path.string() + ": " +
                     e.what());
  }
  p.validate();
  return p;
}

NetworkPartition partition_from_synth(const SynthConfig& cfg) {
  NetworkPartition p;
  p.num_nodes = cfg.num_nodes;
  p.networks = synth_networks(cfg);
  p.validate();
  return p;
}

}  // namespace gs4

#include "model.hpp"

#include <json.hpp>

#include <fstream>

#include "fft.hpp"

namespace gs4 {

namespace fs = std::filesystem;
using nlohmann::json;

void ModelConfig::validate() const {
  require(num_layers >= 1, "ModelConfig: num_layers must be >= 1");
  require(state_dim >= 1, "ModelConfig: state_dim must be >= 1");
  require(channels >= 1, "ModelConfig: channels must be >= 1");
  require(diffusion_steps >= 0, "ModelConfig: diffusion_steps must be >= 0");
  require(dropout >= 0.0 && dropout < 1.0, "ModelConfig: dropout in [0,1)");
  require(num_nodes >= 1, "ModelConfig: num_nodes must be >= 1");
  require(emb_dim >= 1, "ModelConfig: emb_dim must be >= 1");
}

std::string layer_param(int layer, const std::string& field) {
  return "layer" + std::to_string(layer) + "." + field;
}

int GraphS4Model::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params.size(); i++)
    if (params[i].name == name) return int(i);
  return -1;
}

Mat& GraphS4Model::tensor(const std::string& name) {
  const int i = index_of(name);
  if (i < 0) throw StateError("missing parameter tensor: " + name);
  return params[std::size_t(i)].value;
}

const Mat& GraphS4Model::tensor(const std::string& name) const {
  const int i = index_of(name);
  if (i < 0) throw StateError("missing parameter tensor: " + name);
  return params[std::size_t(i)].value;
}

DPLRParams GraphS4Model::layer_dplr(int layer, int channel) const {
  DPLRParams p;
  auto cvec = [&](const std::string& re, const std::string& im) {
    const Mat& r = tensor(layer_param(layer, re));
    const Mat& i = tensor(layer_param(layer, im));
    return (r.col(0).cast<cd>() + cd(0, 1) * i.col(0).cast<cd>()).eval();
  };
  p.lambda = cvec("lambda_re", "lambda_im");
  p.p = cvec("p_re", "p_im");
  p.q = cvec("q_re", "q_im");
  p.b = cvec("b_re", "b_im");
  const int row = cfg.share_c ? 0 : channel;
  const Mat& cr = tensor(layer_param(layer, "c_re"));
  const Mat& ci = tensor(layer_param(layer, "c_im"));
  p.c = (cr.row(row).transpose().cast<cd>() +
         cd(0, 1) * ci.row(row).transpose().cast<cd>())
            .eval();
  p.log_dt = tensor(layer_param(layer, "log_dt"))(0, 0);
  return p;
}

DiffusionWeights GraphS4Model::layer_weights(int layer) const {
  DiffusionWeights w;
  for (int d = 0; d <= cfg.diffusion_steps; d++)
    w.w.push_back(tensor(layer_param(layer, "w" + std::to_string(d))));
  return w;
}

NodeEmbedding GraphS4Model::embedding() const { return {tensor("emb")}; }

int64_t GraphS4Model::param_count() const {
  int64_t n = 0;
  for (const Param& p : params) n += p.value.size();
  return n;
}

namespace {

Mat uniform_mat(Eigen::Index rows, Eigen::Index cols, double lo, double hi,
                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; i++)
    for (Eigen::Index j = 0; j < cols; j++) m(i, j) = dist(rng);
  return m;
}

}  // namespace

GraphS4Model init_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  GraphS4Model model;
  model.cfg = cfg;
  auto push = [&](const std::string& name, Mat v) {
    model.params.push_back({name, std::move(v), false});
  };

  const int n = cfg.state_dim;
  const int c = cfg.channels;
  for (int l = 0; l < cfg.num_layers; l++) {
    DPLRParams ssm = hippo_legs_init(n, mix_seed(seed, uint64_t(100 + l)));
    push(layer_param(l, "lambda_re"), ssm.lambda.real());
    push(layer_param(l, "lambda_im"), ssm.lambda.imag());
    push(layer_param(l, "p_re"), ssm.p.real());
    push(layer_param(l, "p_im"), ssm.p.imag());
    push(layer_param(l, "q_re"), ssm.q.real());
    push(layer_param(l, "q_im"), ssm.q.imag());
    push(layer_param(l, "b_re"), ssm.b.real());
    push(layer_param(l, "b_im"), ssm.b.imag());

    const int c_rows = cfg.share_c ? 1 : c;
    Mat cre(c_rows, n), cim(c_rows, n);
    cre.row(0) = ssm.c.real().transpose();
    cim.row(0) = ssm.c.imag().transpose();
    for (int ch = 1; ch < c_rows; ch++) {
      DPLRParams extra =
          hippo_legs_init(n, mix_seed(seed, uint64_t(1000 + 31 * l + ch)));
      cre.row(ch) = extra.c.real().transpose();
      cim.row(ch) = extra.c.imag().transpose();
    }
    push(layer_param(l, "c_re"), cre);
    push(layer_param(l, "c_im"), cim);
    Mat logdt(1, 1);
    logdt(0, 0) = ssm.log_dt;
    push(layer_param(l, "log_dt"), logdt);

    auto rng = make_rng(mix_seed(seed, uint64_t(5000 + l)));
    const double bound =
        1.0 / std::sqrt(double(c) * double(cfg.diffusion_steps + 1));
    for (int d = 0; d <= cfg.diffusion_steps; d++)
      push(layer_param(l, "w" + std::to_string(d)),
           uniform_mat(c, c, -bound, bound, rng));
    push(layer_param(l, "bias"), Mat::Zero(1, c));
  }

  auto rng = make_rng(mix_seed(seed, 0xe3b));
  push("emb", uniform_mat(cfg.num_nodes, cfg.emb_dim, 0.0, 1.0, rng));
  const double pbound = 1.0 / std::sqrt(double(c));
  push("input_proj", uniform_mat(1, c, -pbound, pbound, rng));
  push("output_proj", uniform_mat(c, 1, -pbound, pbound, rng));
  return model;
}

void ensure_cls_head(GraphS4Model& model, uint64_t seed) {
  if (model.has_cls_head || model.index_of("cls_w") >= 0) {
    model.has_cls_head = true;
    return;
  }
  auto rng = make_rng(mix_seed(seed, 0xc15));
  const Eigen::Index dim =
      Eigen::Index(model.cfg.num_nodes) * model.cfg.channels;
  const double bound = 1.0 / std::sqrt(double(dim));
  model.params.push_back(
      {"cls_w", uniform_mat(dim, 2, -bound, bound, rng), false});
  model.params.push_back({"cls_b", Mat::Zero(1, 2), false});
  model.has_cls_head = true;
}

Tensor3 forward_features(const GraphS4Model& model, const Mat& x,
                         ForwardMode mode) {
  const ModelConfig& cfg = model.cfg;
  const int v = cfg.num_nodes;
  const int t = int(x.cols());
  const int c = cfg.channels;
  require(int(x.rows()) == v, "forward: node count mismatch");
  require(t >= 8, "forward: need at least 8 timepoints");
  require(x.allFinite(), "forward: non-finite input");

  const Mat& w_in = model.tensor("input_proj");  // 1 x C
  Tensor3 act(v, t, c);
  for (int ch = 0; ch < c; ch++)
    for (int vi = 0; vi < v; vi++)
      act.m.col(ch).segment(vi * t, t) = w_in(0, ch) * x.row(vi).transpose();

  const AdjacencyMatrix adj = adaptive_adjacency(model.embedding());

  for (int l = 0; l < cfg.num_layers; l++) {
    Tensor3 hidden(v, t, c);
    for (int ch = 0; ch < c; ch++) {
      DPLRParams ssm = model.layer_dplr(l, ch);
      if (mode == ForwardMode::Conv) {
        const Kernel kern = kernel_fast(ssm, t);
        for (int vi = 0; vi < v; vi++) {
          Vec u = act.m.col(ch).segment(vi * t, t);
          hidden.m.col(ch).segment(vi * t, t) = fft::causal_conv(kern.k, u);
        }
      } else {
        const DiscreteSSM d = discretize_bilinear(ssm);
        for (int vi = 0; vi < v; vi++) {
          Vec u = act.m.col(ch).segment(vi * t, t);
          hidden.m.col(ch).segment(vi * t, t) = ssm_scan(d, u);
        }
      }
    }

    hidden.m = hidden.m.unaryExpr([](double z) {
      return z * 0.5 * std::erfc(-z * M_SQRT1_2);
    });

    Tensor3 mixed = diffusion_conv(adj, hidden, model.layer_weights(l),
                                   cfg.literal_no_power);
    mixed.m.rowwise() += model.tensor(layer_param(l, "bias")).row(0);

    act.m += mixed.m;  // residual: layer input plus mixed features
  }
  return act;
}

Mat forward_seq(const GraphS4Model& model, const Mat& x, ForwardMode mode) {
  Tensor3 feats = forward_features(model, x, mode);
  const Mat& w_out = model.tensor("output_proj");  // C x 1
  Mat y(x.rows(), x.cols());
  Mat proj = feats.m * w_out;  // (V*T) x 1
  for (int vi = 0; vi < feats.v; vi++)
    y.row(vi) = proj.col(0).segment(vi * feats.t, feats.t).transpose();
  return y;
}

Vec forward_cls(const GraphS4Model& model, const Mat& x) {
  if (!model.has_cls_head && model.index_of("cls_w") < 0)
    throw StateError("forward_cls: classification head not initialized");
  Tensor3 feats = forward_features(model, x, ForwardMode::Conv);
  // Global average pooling over time, then flatten node-major.
  Vec pooled(Eigen::Index(feats.v) * feats.c);
  for (int vi = 0; vi < feats.v; vi++)
    for (int ch = 0; ch < feats.c; ch++)
      pooled[Eigen::Index(vi) * feats.c + ch] =
          feats.m.col(ch).segment(vi * feats.t, feats.t).mean();
  const Mat& w = model.tensor("cls_w");
  const Mat& b = model.tensor("cls_b");
  return (pooled.transpose() * w + b.row(0)).transpose();
}

namespace {

constexpr char kModelMagic[4] = {'G', 'S', '4', 'M'};

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("short read in checkpoint");
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

json config_to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers},
          {"state_dim", c.state_dim},
          {"channels", c.channels},
          {"diffusion_steps", c.diffusion_steps},
          {"dropout", c.dropout},
          {"num_nodes", c.num_nodes},
          {"emb_dim", c.emb_dim},
          {"share_c", c.share_c},
          {"literal_no_power", c.literal_no_power}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<int>();
  c.state_dim = j.at("state_dim").get<int>();
  c.channels = j.at("channels").get<int>();
  c.diffusion_steps = j.at("diffusion_steps").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.num_nodes = j.at("num_nodes").get<int>();
  c.emb_dim = j.at("emb_dim").get<int>();
  c.share_c = j.value("share_c", false);
  c.literal_no_power = j.value("literal_no_power", false);
  return c;
}

}  // namespace

void save_model(const fs::path& path, const GraphS4Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(kModelMagic, 4);
  write_u32(os, 1);
  const std::string cfg = config_to_json(model.cfg).dump();
  write_u32(os, uint32_t(cfg.size()));
  os.write(cfg.data(), std::streamsize(cfg.size()));
  write_u32(os, uint32_t(model.params.size()));
  for (const Param& p : model.params) {
    write_u32(os, uint32_t(p.name.size()));
    os.write(p.name.data(), std::streamsize(p.name.size()));
    write_u32(os, 2);
    write_u32(os, uint32_t(p.value.rows()));
    write_u32(os, uint32_t(p.value.cols()));
    for (Eigen::Index i = 0; i < p.value.rows(); i++)
      for (Eigen::Index j = 0; j < p.value.cols(); j++) {
        const double d = p.value(i, j);
        static_assert(sizeof(double) == 8);
        os.write(reinterpret_cast<const char*>(&d), 8);
      }
  }
  if (!os) throw IoError("write failed: " + path.string());
}

GraphS4Model load_model(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kModelMagic, 4) != 0)
    throw IoError("bad checkpoint magic in " + path.string());
  const uint32_t version = read_u32(is);
  if (version != 1)
    throw IoError("unsupported checkpoint version in " + path.string());
  const uint32_t cfg_len = read_u32(is);
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), cfg_len);
  if (!is) throw IoError("short read in checkpoint " + path.string());

  GraphS4Model model;
  try {
    model.cfg = config_from_json(json::parse(cfg_text));
  } catch (const json::exception& e) {
    throw ParseError("checkpoint config parse error in " + path.string() +
                     ": " + e.what());
  }
  const uint32_t count = read_u32(is);
  for (uint32_t k = 0; k < count; k++) {
    const uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t rank = read_u32(is);
    if (rank != 2) throw IoError("unsupported tensor rank in checkpoint");
    const uint32_t rows = read_u32(is);
    const uint32_t cols = read_u32(is);
    Mat v(rows, cols);
    for (uint32_t i = 0; i < rows; i++)
      for (uint32_t j = 0; j < cols; j++) {
        double d;
        is.read(reinterpret_cast<char*>(&d), 8);
        if (!is) throw IoError("short read in checkpoint " + path.string());
        v(i, j) = d;
      }
    model.params.push_back({std::move(name), std::move(v), false});
  }
  model.has_cls_head = model.index_of("cls_w") >= 0;
  return model;
}

}  // namespace gs4

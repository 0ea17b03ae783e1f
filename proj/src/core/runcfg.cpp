#include "runcfg.hpp"

#include <fstream>
#include <memory>
#include <set>

#include <json.hpp>

namespace gs4 {

using json = nlohmann::json;

namespace {

[[noreturn]] void bad_field(const std::string& path, const std::string& why) {
  throw std::invalid_argument("config: " + path + ": " + why);
}

// Field accessors that report the full dotted path on any violation.
struct Section {
  const json* j;
  std::string path;

  Section sub(const char* key) const {
    const json& v = (*j).at(key);
    if (!v.is_object()) bad_field(path + key, "expected an object");
    return Section{&v, path + key + "."};
  }
  bool has(const char* key) const { return j->contains(key); }

  template <typename T>
  T get(const char* key, T def) const {
    if (!j->contains(key)) return def;
    try {
      return (*j).at(key).get<T>();
    } catch (const json::exception&) {
      bad_field(path + key, "wrong type");
    }
  }
  template <typename T>
  T req(const char* key) const {
    if (!j->contains(key)) bad_field(path + key, "missing required field");
    return get<T>(key, T{});
  }
  void only(std::initializer_list<const char*> keys) const {
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : j->items()) {
      (void)v;
      if (!allowed.count(k)) bad_field(path + k, "unknown field");
    }
  }
};

SynthConfig parse_synth(const Section& s) {
  s.only({"num_nodes", "num_networks", "timepoints", "within_coupling",
          "between_coupling", "noise_sigma", "anomaly_network",
          "anomaly_strength", "population_count", "clinical_ss_train_count",
          "clinical_ss_val_count", "clinical_cv_count"});
  SynthConfig c;
  c.num_nodes = s.get("num_nodes", c.num_nodes);
  c.num_networks = s.get("num_networks", c.num_networks);
  c.timepoints = s.get("timepoints", c.timepoints);
  c.within_coupling = s.get("within_coupling", c.within_coupling);
  c.between_coupling = s.get("between_coupling", c.between_coupling);
  c.noise_sigma = s.get("noise_sigma", c.noise_sigma);
  c.anomaly_network = s.get("anomaly_network", c.anomaly_network);
  c.anomaly_strength = s.get("anomaly_strength", c.anomaly_strength);
  c.population_count = s.get("population_count", c.population_count);
  c.clinical_ss_train_count =
      s.get("clinical_ss_train_count", c.clinical_ss_train_count);
  c.clinical_ss_val_count =
      s.get("clinical_ss_val_count", c.clinical_ss_val_count);
  c.clinical_cv_count = s.get("clinical_cv_count", c.clinical_cv_count);
  return c;
}

ModelConfig parse_model(const Section& s) {
  s.only({"num_layers", "state_dim", "channels", "diffusion_steps", "dropout",
          "num_nodes", "emb_dim", "share_c", "literal_no_power"});
  ModelConfig c;
  c.num_layers = s.get("num_layers", c.num_layers);
  c.state_dim = s.get("state_dim", c.state_dim);
  c.channels = s.get("channels", c.channels);
  c.diffusion_steps = s.get("diffusion_steps", c.diffusion_steps);
  c.dropout = s.get("dropout", c.dropout);
  c.num_nodes = s.get("num_nodes", c.num_nodes);
  c.emb_dim = s.get("emb_dim", c.emb_dim);
  c.share_c = s.get("share_c", c.share_c);
  c.literal_no_power = s.get("literal_no_power", c.literal_no_power);
  return c;
}

TrainConfig parse_train(const Section& s) {
  s.only({"batch_size", "lr", "lr_decay", "weight_decay", "epochs_population",
          "epochs_clinical_max", "epochs_finetune", "early_stop_patience",
          "inner_val_fraction", "threads"});
  TrainConfig c;
  c.batch_size = s.get("batch_size", c.batch_size);
  c.lr = s.get("lr", c.lr);
  c.lr_decay = s.get("lr_decay", c.lr_decay);
  c.weight_decay = s.get("weight_decay", c.weight_decay);
  c.epochs_population = s.get("epochs_population", c.epochs_population);
  c.epochs_clinical_max = s.get("epochs_clinical_max", c.epochs_clinical_max);
  c.epochs_finetune = s.get("epochs_finetune", c.epochs_finetune);
  c.early_stop_patience = s.get("early_stop_patience", c.early_stop_patience);
  c.inner_val_fraction = s.get("inner_val_fraction", c.inner_val_fraction);
  c.threads = s.get("threads", c.threads);
  return c;
}

LossConfig parse_loss(const Section& s) {
  s.only({"lambda1", "lambda2", "pearson_eps"});
  LossConfig c;
  c.lambda1 = s.get("lambda1", c.lambda1);
  c.lambda2 = s.get("lambda2", c.lambda2);
  c.pearson_eps = s.get("pearson_eps", c.pearson_eps);
  return c;
}

EvalConfig parse_eval(const Section& s) {
  s.only({"folds", "repeats", "pretrained", "full_finetune"});
  EvalConfig c;
  c.folds = s.get("folds", c.folds);
  c.repeats = s.get("repeats", c.repeats);
  c.pretrained = s.get("pretrained", c.pretrained);
  c.full_finetune = s.get("full_finetune", c.full_finetune);
  return c;
}

TaskSpec parse_task(const Section& s, std::size_t index) {
  s.only({"kind", "target_network", "horizon", "noise_sigma", "mask_fraction",
          "num_eval_masks"});
  TaskSpec t;
  t.kind = task_kind_from_name(s.req<std::string>("kind"));
  t.target_network = s.get<std::string>("target_network", "");
  t.horizon = s.get("horizon", t.horizon);
  t.noise_sigma = s.get("noise_sigma", t.noise_sigma);
  t.mask_fraction = s.get("mask_fraction", t.mask_fraction);
  t.num_eval_masks = s.get("num_eval_masks", t.num_eval_masks);
  if (t.kind == TaskKind::NetworkMask && t.target_network.empty())
    bad_field(s.path + "target_network",
              "required for network_mask (task " + std::to_string(index) + ")");
  return t;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (!doc.is_object()) throw std::invalid_argument("config: not an object");

  Section root{&doc, ""};
  root.only({"output_dir", "seed", "synth", "dataset_manifest", "partition",
             "model", "train", "loss", "eval", "tasks"});

  RunConfig cfg;
  cfg.output_dir = root.req<std::string>("output_dir");
  cfg.seed = root.get<uint64_t>("seed", 0);
  if (root.has("synth")) cfg.synth = parse_synth(root.sub("synth"));
  cfg.manifest_explicit = root.has("dataset_manifest");
  cfg.dataset_manifest = root.get<std::string>(
      "dataset_manifest", (cfg.output_dir / "data" / "manifest.json").string());
  cfg.partition_explicit = root.has("partition");
  cfg.partition_path = root.get<std::string>(
      "partition", (cfg.output_dir / "partition.json").string());
  if (root.has("model")) cfg.model = parse_model(root.sub("model"));
  if (root.has("train")) cfg.train = parse_train(root.sub("train"));
  if (root.has("loss")) cfg.loss = parse_loss(root.sub("loss"));
  if (root.has("eval")) cfg.eval = parse_eval(root.sub("eval"));

  if (root.has("tasks")) {
    const json& arr = doc.at("tasks");
    if (!arr.is_array()) bad_field("tasks", "expected an array");
    for (std::size_t i = 0; i < arr.size(); i++) {
      if (!arr[i].is_object())
        bad_field("tasks[" + std::to_string(i) + "]", "expected an object");
      cfg.tasks.push_back(
          parse_task(Section{&arr[i], "tasks[" + std::to_string(i) + "]."}, i));
    }
  }

  if (cfg.synth) {
    if (cfg.model.num_nodes == 0) cfg.model.num_nodes = cfg.synth->num_nodes;
    if (cfg.synth->seed == 0) cfg.synth->seed = cfg.seed;
  }

  try {
    cfg.train.validate();
    cfg.loss.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  require(cfg.eval.folds >= 2, "config: eval.folds must be >= 2");
  require(cfg.eval.repeats >= 1, "config: eval.repeats must be >= 1");
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path.string());
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

void validate_run_config_paths(const RunConfig& cfg, bool need_dataset) {
  std::filesystem::create_directories(cfg.output_dir);
  if (need_dataset) {
    require(std::filesystem::exists(cfg.dataset_manifest),
            "config: dataset manifest not found: " +
                cfg.dataset_manifest.string());
    require(std::filesystem::exists(cfg.partition_path),
            "config: partition file not found: " + cfg.partition_path.string());
  }
}

OutputLock::OutputLock(const std::filesystem::path& output_dir) {
  std::filesystem::create_directories(output_dir);
  path_ = output_dir / ".gs4.lock";
  require(!std::filesystem::exists(path_),
          "output directory is locked by another run: " + path_.string());
  std::ofstream os(path_);
  if (!os) throw IoError("cannot create lockfile: " + path_.string());
  os << "locked\n";
}

OutputLock::~OutputLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

namespace {

ModelConfig resolved_model_cfg(const RunConfig& cfg, const Dataset& ds) {
  ModelConfig mcfg = cfg.model;
  if (mcfg.num_nodes == 0) mcfg.num_nodes = ds.num_nodes;
  require(mcfg.num_nodes == ds.num_nodes,
          "config: model.num_nodes does not match the dataset");
  mcfg.validate();
  return mcfg;
}

std::vector<const Sample*> healthy_only(std::vector<const Sample*> v) {
  std::erase_if(v, [](const Sample* s) { return s->label != 0; });
  return v;
}

GraphS4Model base_model_for_finetune(const RunConfig& cfg, const Dataset& ds) {
  if (cfg.eval.pretrained) {
    require(!cfg.tasks.empty(),
            "config: tasks must be nonempty when eval.pretrained is set");
    const std::filesystem::path path = cfg.checkpoint_path(cfg.tasks.front());
    require(std::filesystem::exists(path),
            "missing checkpoint: " + path.string());
    return load_model(path);
  }
  return init_model(resolved_model_cfg(cfg, ds), cfg.seed);
}

Predictor cls_predictor(std::shared_ptr<GraphS4Model> model) {
  return [model](const Sample& s) {
    Vec logits = forward_cls(*model, s.x);
    return logits[1] > logits[0] ? 1 : 0;
  };
}

}  // namespace

void cmd_synth(const RunConfig& cfg) {
  require(cfg.synth.has_value(),
          "config: synth section required for the synth command");
  OutputLock lock(cfg.output_dir);
  Dataset ds = generate_synth(*cfg.synth);
  save_dataset(cfg.output_dir / "data", ds);
  save_partition(cfg.partition_path, partition_from_synth(*cfg.synth));
}

void cmd_pretrain(const RunConfig& cfg, std::ostream* log) {
  validate_run_config_paths(cfg, true);
  require(!cfg.tasks.empty(), "config: tasks must be nonempty for pretrain");
  OutputLock lock(cfg.output_dir);

  Dataset ds = load_dataset(cfg.dataset_manifest);
  NetworkPartition part = load_partition(cfg.partition_path);
  require(part.num_nodes == ds.num_nodes,
          "config: partition node count does not match the dataset");
  const ModelConfig mcfg = resolved_model_cfg(cfg, ds);

  const auto population = ds.by_split(Split::Population);
  const auto clinical =
      healthy_only(ds.by_split(Split::ClinicalSsTrain));

  std::filesystem::create_directories(cfg.checkpoint_dir());
  std::filesystem::create_directories(cfg.output_dir / "logs");

  for (std::size_t i = 0; i < cfg.tasks.size(); i++) {
    const TaskSpec& spec = cfg.tasks[i];
    TrainConfig tc = cfg.train;
    tc.seed = mix_seed(cfg.seed, 0x7a50 + i);
    std::ofstream metrics(cfg.output_dir / "logs" / (spec.name() + ".log"));
    if (log) (*log) << "pretraining task " << spec.name() << "\n";
    GraphS4Model model = pretrain_ssl(population, clinical, spec, part, mcfg,
                                      tc, cfg.loss, &metrics);
    save_model(cfg.checkpoint_path(spec), model);
  }
}

ScreenReport cmd_screen(const RunConfig& cfg) {
  validate_run_config_paths(cfg, true);
  OutputLock lock(cfg.output_dir);

  Dataset ds = load_dataset(cfg.dataset_manifest);
  NetworkPartition part = load_partition(cfg.partition_path);
  const auto val = ds.by_split(Split::ClinicalSsVal);

  std::vector<GraphS4Model> storage;
  storage.reserve(part.networks.size());
  std::map<std::string, const GraphS4Model*> models;
  for (const auto& [name, nodes] : part.networks) {
    (void)nodes;
    TaskSpec spec;
    spec.kind = TaskKind::NetworkMask;
    spec.target_network = name;
    const std::filesystem::path path = cfg.checkpoint_path(spec);
    require(std::filesystem::exists(path),
            "missing checkpoint: " + path.string());
    storage.push_back(load_model(path));
    models[name] = &storage.back();
  }

  ScreenReport report =
      screen_networks(models, val, part, cfg.dataset_manifest.string());
  std::ofstream os(cfg.output_dir / "screen_report.json");
  if (!os) throw IoError("cannot write screen report");
  os << screen_report_json(report);
  return report;
}

double cmd_score(const RunConfig& cfg, const std::filesystem::path& sample_path,
                 const std::string& task_name) {
  validate_run_config_paths(cfg, true);

  const TaskSpec* spec = nullptr;
  for (const TaskSpec& t : cfg.tasks)
    if (t.name() == task_name) spec = &t;
  require(spec != nullptr, "config: no task named " + task_name);

  const std::filesystem::path ckpt = cfg.checkpoint_path(*spec);
  require(std::filesystem::exists(ckpt), "missing checkpoint: " + ckpt.string());
  GraphS4Model model = load_model(ckpt);
  NetworkPartition part = load_partition(cfg.partition_path);

  Sample s;
  s.id = sample_path.stem().string();
  s.x = sample_path.extension() == ".csv" ? load_matrix_csv(sample_path)
                                          : load_matrix(sample_path);
  return anomaly_score(model, s, *spec, part);
}

void cmd_finetune(const RunConfig& cfg, std::ostream* log) {
  validate_run_config_paths(cfg, true);
  OutputLock lock(cfg.output_dir);

  Dataset ds = load_dataset(cfg.dataset_manifest);
  const auto labeled = ds.by_split(Split::ClinicalCv);
  GraphS4Model base = base_model_for_finetune(cfg, ds);

  TrainConfig tc = cfg.train;
  tc.seed = mix_seed(cfg.seed, 0xf1);
  GraphS4Model tuned =
      finetune_cls(std::move(base), labeled, tc, cfg.eval.full_finetune, log);
  std::filesystem::create_directories(cfg.checkpoint_dir());
  save_model(cfg.checkpoint_dir() / "finetuned.gs4m", tuned);
}

CVResult cmd_eval(const RunConfig& cfg, std::ostream* log) {
  validate_run_config_paths(cfg, true);
  OutputLock lock(cfg.output_dir);

  Dataset ds = load_dataset(cfg.dataset_manifest);
  std::vector<const Sample*> labeled;
  std::map<std::string, std::set<std::string>> excluded;
  for (const Sample& s : ds.samples) {
    if (s.split == Split::ClinicalSsVal) {
      excluded["ss_val"].insert(s.id);
      continue;
    }
    if (s.split == Split::Population) continue;
    if (s.label == kLabelUnlabeled) continue;
    if (s.split == Split::ClinicalSsTrain) excluded["ss_train"].insert(s.id);
    labeled.push_back(&s);
  }

  TrainFn train_fn = [&cfg, &ds, log](const std::vector<const Sample*>& train,
                                      uint64_t seed) {
    auto model = std::make_shared<GraphS4Model>(
        base_model_for_finetune(cfg, ds));
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    *model = finetune_cls(std::move(*model), train, tc, cfg.eval.full_finetune,
                          nullptr);
    (void)log;
    return cls_predictor(model);
  };

  CVResult result = cv_harness(labeled, cfg.eval.folds, cfg.eval.repeats,
                               excluded, train_fn, cfg.seed);
  std::ofstream os(cfg.output_dir / "cv_result.json");
  if (!os) throw IoError("cannot write cv result");
  os << cv_result_json(result);
  if (log) (*log) << format_cv_result(result);
  return result;
}

GradCheckReport cmd_gradcheck(const RunConfig& cfg) {
  // Small fixed-size check; independent of any dataset on disk.
  ModelConfig mcfg = cfg.model;
  mcfg.num_layers = std::min(mcfg.num_layers, 2);
  mcfg.state_dim = std::min(mcfg.state_dim, 8);
  mcfg.channels = std::min(mcfg.channels, 2);
  mcfg.diffusion_steps = std::min(mcfg.diffusion_steps, 1);
  mcfg.dropout = 0.0;
  if (mcfg.num_nodes == 0 || mcfg.num_nodes > 4) mcfg.num_nodes = 4;
  mcfg.emb_dim = std::min(mcfg.emb_dim, 3);
  mcfg.validate();

  const int v = mcfg.num_nodes, t = 32;
  GraphS4Model model = init_model(mcfg, cfg.seed);

  auto rng = make_rng(mix_seed(cfg.seed, 0x9c));
  std::normal_distribution<double> nd;
  Mat x(v, t);
  for (int i = 0; i < v; i++)
    for (int j = 0; j < t; j++) x(i, j) = nd(rng);

  NetworkPartition part;
  part.num_nodes = v;
  part.networks = {{"A", {0, 1}}, {"B", {2, 3}}};
  Sample s;
  s.id = "gradcheck";
  s.x = x;
  TaskSpec spec;
  spec.kind = TaskKind::NetworkMask;
  spec.target_network = "A";
  TaskInstance inst =
      build_instance(s, spec, part, mix_seed(cfg.seed, 0x11));
  return gradcheck_model(model, inst, cfg.loss, 1e-5, 1e-3, 4);
}

}  // namespace gs4

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "evalx.hpp"
#include "train.hpp"

namespace gs4 {

struct EvalConfig {
  int folds = 5;
  int repeats = 10;
  bool pretrained = true;      // fine-tune from the pretrained checkpoint
  bool full_finetune = false;  // unfreeze everything during fine-tuning
};

// One JSON document drives every pipeline command; the only CLI overrides
// are the config path, output directory, and seed.
struct RunConfig {
  std::filesystem::path output_dir;
  uint64_t seed = 0;

  std::optional<SynthConfig> synth;
  std::filesystem::path dataset_manifest;  // default: <output>/data/manifest.json
  std::filesystem::path partition_path;    // default: <output>/partition.json
  bool manifest_explicit = false;   // set when the config named the path
  bool partition_explicit = false;

  ModelConfig model;
  TrainConfig train;
  LossConfig loss;
  EvalConfig eval;
  std::vector<TaskSpec> tasks;

  std::filesystem::path checkpoint_dir() const {
    return output_dir / "checkpoints";
  }
  std::filesystem::path checkpoint_path(const TaskSpec& spec) const {
    return checkpoint_dir() / (spec.name() + ".gs4m");
  }
};

// Parses and validates; error messages name the offending field path.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

// Validation that needs the filesystem (referenced paths, writable output).
// `need_dataset` commands require the manifest and partition to exist.
void validate_run_config_paths(const RunConfig& cfg, bool need_dataset);

// Held for the duration of a command; a second concurrent invocation on the
// same output directory fails instead of corrupting artifacts.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& output_dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Pipeline commands; each throws on failure (std::invalid_argument /
// ParseError for validation problems, other exceptions for runtime
// failures) and is idempotent for identical inputs and seed.
void cmd_synth(const RunConfig& cfg);
void cmd_pretrain(const RunConfig& cfg, std::ostream* log);
ScreenReport cmd_screen(const RunConfig& cfg);
double cmd_score(const RunConfig& cfg, const std::filesystem::path& sample_path,
                 const std::string& task_name);
void cmd_finetune(const RunConfig& cfg, std::ostream* log);
CVResult cmd_eval(const RunConfig& cfg, std::ostream* log);
GradCheckReport cmd_gradcheck(const RunConfig& cfg);

}  // namespace gs4

// Batch pipeline driver. Links only the public C interface of the shared
// library; everything interesting lives behind gs4/gs4.h.
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "gs4/gs4.h"

namespace {

struct CommonOpts {
  std::string config;
  std::string output;
  uint64_t seed = 0;
  bool has_seed = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config, "Run configuration (JSON)")
      ->required();
  cmd->add_option("--output", opts.output,
                  "Override the configured output directory");
  cmd->add_option("--seed", opts.seed, "Override the configured seed")
      ->each([&opts](const std::string&) { opts.has_seed = true; });
}

gs4_run_options run_options(const CommonOpts& opts) {
  gs4_run_options ro{};
  ro.output_dir = opts.output.empty() ? nullptr : opts.output.c_str();
  ro.seed = opts.seed;
  ro.has_seed_override = opts.has_seed ? 1 : 0;
  return ro;
}

int finish(gs4_status status) {
  if (status == GS4_OK) return 0;
  std::fprintf(stderr, "error: %s\n", gs4_last_error());
  return status == GS4_ERR_INVALID ? 1 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-S4 pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(gs4_version()));

  CommonOpts synth_o, pre_o, screen_o, score_o, fine_o, eval_o, grad_o;
  std::string sample_path, task_name;

  CLI::App* synth = app.add_subcommand("synth", "Generate the synthetic dataset");
  add_common(synth, synth_o);

  CLI::App* pretrain =
      app.add_subcommand("pretrain", "Self-supervised pretraining, one checkpoint per task");
  add_common(pretrain, pre_o);

  CLI::App* screen =
      app.add_subcommand("screen", "Per-network anomaly screening report");
  add_common(screen, screen_o);

  CLI::App* score = app.add_subcommand("score", "Anomaly score for one sample file");
  add_common(score, score_o);
  score->add_option("--sample", sample_path, "Sample matrix (GS4T or .csv)")
      ->required();
  score->add_option("--task", task_name, "Task name (checkpoint base name)")
      ->required();

  CLI::App* finetune =
      app.add_subcommand("finetune", "Supervised fine-tuning of the classifier head");
  add_common(finetune, fine_o);

  CLI::App* eval =
      app.add_subcommand("eval", "Repeated k-fold cross-validation");
  add_common(eval, eval_o);

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  add_common(gradcheck, grad_o);

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) {
    const gs4_run_options ro = run_options(synth_o);
    return finish(gs4_cmd_synth(synth_o.config.c_str(), &ro));
  }
  if (pretrain->parsed()) {
    const gs4_run_options ro = run_options(pre_o);
    return finish(gs4_cmd_pretrain(pre_o.config.c_str(), &ro));
  }
  if (screen->parsed()) {
    const gs4_run_options ro = run_options(screen_o);
    char* report = nullptr;
    const gs4_status status =
        gs4_cmd_screen(screen_o.config.c_str(), &ro, &report);
    if (status == GS4_OK && report != nullptr) std::fputs(report, stdout);
    gs4_string_free(report);
    return finish(status);
  }
  if (score->parsed()) {
    double value = 0.0;
    const gs4_status status = gs4_score(score_o.config.c_str(),
                                        sample_path.c_str(), task_name.c_str(),
                                        &value);
    if (status == GS4_OK) std::printf("%.17g\n", value);
    return finish(status);
  }
  if (finetune->parsed()) {
    const gs4_run_options ro = run_options(fine_o);
    return finish(gs4_cmd_finetune(fine_o.config.c_str(), &ro));
  }
  if (eval->parsed()) {
    const gs4_run_options ro = run_options(eval_o);
    char* result = nullptr;
    const gs4_status status = gs4_cmd_eval(eval_o.config.c_str(), &ro, &result);
    if (status == GS4_OK && result != nullptr) std::fputs(result, stdout);
    gs4_string_free(result);
    return finish(status);
  }
  if (gradcheck->parsed()) {
    const gs4_run_options ro = run_options(grad_o);
    int pass = 0;
    char* report = nullptr;
    const gs4_status status =
        gs4_cmd_gradcheck(grad_o.config.c_str(), &ro, &pass, &report);
    if (report != nullptr) std::fputs(report, stdout);
    gs4_string_free(report);
    if (status != GS4_OK) return finish(status);
    if (!pass) {
      std::fprintf(stderr, "error: gradient check exceeded tolerance\n");
      return 2;
    }
    return 0;
  }
  return 1;
}

#include "gs4/gs4.h"

#include <cstring>
#include <iostream>
#include <sstream>
#include <string>

#include "core/runcfg.hpp"

namespace {

thread_local std::string g_last_error;

template <typename Fn>
gs4_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return GS4_OK;
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return GS4_ERR_INVALID;
  } catch (const gs4::ParseError& e) {
    g_last_error = e.what();
    return GS4_ERR_INVALID;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return GS4_ERR_RUNTIME;
  } catch (...) {
    g_last_error = "unknown error";
    return GS4_ERR_RUNTIME;
  }
}

gs4::RunConfig load_with_overrides(const char* config_path,
                                   const gs4_run_options* opts) {
  if (config_path == nullptr)
    throw std::invalid_argument("config_path is null");
  gs4::RunConfig cfg = gs4::load_run_config(config_path);
  if (opts != nullptr) {
    if (opts->output_dir != nullptr) {
      cfg.output_dir = opts->output_dir;
      // Defaults that hang off the output directory follow the override.
      if (!cfg.manifest_explicit)
        cfg.dataset_manifest = cfg.output_dir / "data" / "manifest.json";
      if (!cfg.partition_explicit)
        cfg.partition_path = cfg.output_dir / "partition.json";
    }
    if (opts->has_seed_override) {
      cfg.seed = opts->seed;
      if (cfg.synth) cfg.synth->seed = opts->seed;
    }
  }
  return cfg;
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

struct gs4_model {
  gs4::GraphS4Model impl;
};

extern "C" {

const char* gs4_last_error(void) { return g_last_error.c_str(); }

const char* gs4_version(void) { return "0.1.0"; }

gs4_status gs4_model_load(const char* path, gs4_model** out) {
  return guarded([&] {
    if (path == nullptr || out == nullptr)
      throw std::invalid_argument("null argument");
    *out = new gs4_model{gs4::load_model(path)};
  });
}

gs4_status gs4_model_save(const gs4_model* model, const char* path) {
  return guarded([&] {
    if (model == nullptr || path == nullptr)
      throw std::invalid_argument("null argument");
    gs4::save_model(path, model->impl);
  });
}

void gs4_model_free(gs4_model* model) { delete model; }

gs4_status gs4_score(const char* config_path, const char* sample_path,
                     const char* task_name, double* out_score) {
  return guarded([&] {
    if (config_path == nullptr || sample_path == nullptr ||
        task_name == nullptr || out_score == nullptr)
      throw std::invalid_argument("null argument");
    gs4::RunConfig cfg = gs4::load_run_config(config_path);
    *out_score = gs4::cmd_score(cfg, sample_path, task_name);
  });
}

gs4_status gs4_cmd_synth(const char* config_path, const gs4_run_options* opts) {
  return guarded([&] { gs4::cmd_synth(load_with_overrides(config_path, opts)); });
}

gs4_status gs4_cmd_pretrain(const char* config_path,
                            const gs4_run_options* opts) {
  return guarded([&] {
    gs4::cmd_pretrain(load_with_overrides(config_path, opts), &std::cerr);
  });
}

gs4_status gs4_cmd_screen(const char* config_path, const gs4_run_options* opts,
                          char** out_report_json) {
  return guarded([&] {
    gs4::ScreenReport report =
        gs4::cmd_screen(load_with_overrides(config_path, opts));
    if (out_report_json != nullptr)
      *out_report_json = dup_string(gs4::screen_report_json(report));
  });
}

gs4_status gs4_cmd_finetune(const char* config_path,
                            const gs4_run_options* opts) {
  return guarded([&] {
    gs4::cmd_finetune(load_with_overrides(config_path, opts), &std::cerr);
  });
}

gs4_status gs4_cmd_eval(const char* config_path, const gs4_run_options* opts,
                        char** out_result_json) {
  return guarded([&] {
    gs4::CVResult result =
        gs4::cmd_eval(load_with_overrides(config_path, opts), &std::cerr);
    if (out_result_json != nullptr)
      *out_result_json = dup_string(gs4::cv_result_json(result));
  });
}

gs4_status gs4_cmd_gradcheck(const char* config_path,
                             const gs4_run_options* opts, int* out_pass,
                             char** out_report_text) {
  return guarded([&] {
    if (out_pass == nullptr) throw std::invalid_argument("out_pass is null");
    gs4::GradCheckReport report =
        gs4::cmd_gradcheck(load_with_overrides(config_path, opts));
    *out_pass = report.pass ? 1 : 0;
    if (out_report_text != nullptr) {
      std::ostringstream os;
      for (const auto& entry : report.per_tensor)
        os << entry.tensor << "\t" << entry.rel_err << "\n";
      os << "max_rel_err\t" << report.max_rel_err << "\n";
      *out_report_text = dup_string(os.str());
    }
  });
}

void gs4_string_free(char* s) { delete[] s; }

}  // extern "C"

#include "fedsim/fedsim.h"

#include <cstring>
#include <string>

#include <json.hpp>

#include "fedsim/dataset.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/experiment.hpp"

namespace {

thread_local std::string g_last_error;

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

fedsim_status fail(fedsim_status code, const std::string& message) {
  g_last_error = message;
  return code;
}

template <typename Fn>
fedsim_status guard(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return FEDSIM_OK;
  } catch (const fedsim::ValidationError& e) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, e.what());
  } catch (const fedsim::FormatError& e) {
    return fail(FEDSIM_ERR_FORMAT, e.what());
  } catch (const fedsim::IoError& e) {
    return fail(FEDSIM_ERR_IO, e.what());
  } catch (const fedsim::NumericError& e) {
    return fail(FEDSIM_ERR_NUMERIC, e.what());
  } catch (const std::exception& e) {
    return fail(FEDSIM_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(FEDSIM_ERR_INTERNAL, "unknown error");
  }
}

}  // namespace

struct fedsim_dataset {
  fedsim::FederatedDataset data;
};

struct fedsim_result {
  fedsim::RunArtifacts artifacts;
};

extern "C" {

const char* fedsim_version(void) { return "1.0.0"; }

const char* fedsim_last_error(void) { return g_last_error.c_str(); }

void fedsim_string_free(char* s) { std::free(s); }

fedsim_status fedsim_dataset_build(const char* dataset_json,
                                   fedsim_dataset** out) {
  if (dataset_json == nullptr || out == nullptr) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  return guard([&]() {
    const std::string wrapped =
        std::string("{\"dataset\":") + dataset_json + "}";
    fedsim::ExperimentConfig cfg = fedsim::parse_config(wrapped);
    auto handle = std::make_unique<fedsim_dataset>();
    handle->data = fedsim::build_dataset(cfg.dataset);
    *out = handle.release();
  });
}

fedsim_status fedsim_dataset_load(const char* path, fedsim_dataset** out) {
  if (path == nullptr || out == nullptr) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  return guard([&]() {
    auto handle = std::make_unique<fedsim_dataset>();
    handle->data = fedsim::load_dataset(path);
    *out = handle.release();
  });
}

fedsim_status fedsim_dataset_save(const fedsim_dataset* dataset,
                                  const char* path) {
  if (dataset == nullptr || path == nullptr) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  return guard([&]() { fedsim::save_dataset(dataset->data, path); });
}

fedsim_status fedsim_dataset_info(const fedsim_dataset* dataset,
                                  char** json_out) {
  if (dataset == nullptr || json_out == nullptr) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  return guard([&]() {
    const auto& data = dataset->data;
    std::size_t total_rows = 0;
    for (const auto& s : data.shards) total_rows += s.rows;
    nlohmann::json info{
        {"num_devices", data.num_devices()},
        {"input_dim", data.input_dim},
        {"num_classes", data.num_classes},
        {"total_samples", total_rows},
        {"total_train_samples", data.total_train_samples()},
        {"provenance", nlohmann::json::parse(data.provenance)}};
    *json_out = copy_string(info.dump(2) + "\n");
  });
}

void fedsim_dataset_free(fedsim_dataset* dataset) { delete dataset; }

fedsim_status fedsim_run(const char* config_json,
                         const fedsim_dataset* dataset, int64_t seed_override,
                         int64_t telemetry_every, int64_t threads,
                         fedsim_result** out) {
  if (config_json == nullptr || out == nullptr) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  return guard([&]() {
    fedsim::ExperimentConfig cfg = fedsim::parse_config(config_json);
    if (seed_override >= 0) {
      cfg.runs = {static_cast<std::uint64_t>(seed_override)};
    }
    if (telemetry_every > 0) {
      cfg.federation.telemetry_every =
          static_cast<std::size_t>(telemetry_every);
    }
    if (threads > 0) {
      cfg.federation.threads = static_cast<std::size_t>(threads);
    }
    auto handle = std::make_unique<fedsim_result>();
    if (dataset != nullptr) {
      handle->artifacts = fedsim::run_all(cfg, dataset->data);
    } else {
      const fedsim::FederatedDataset built =
          fedsim::build_dataset(cfg.dataset);
      handle->artifacts = fedsim::run_all(cfg, built);
    }
    *out = handle.release();
  });
}

fedsim_status fedsim_result_csv(const fedsim_result* result, char** out) {
  if (result == nullptr || out == nullptr) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  *out = copy_string(result->artifacts.results_csv);
  return FEDSIM_OK;
}

fedsim_status fedsim_result_rounds_jsonl(const fedsim_result* result,
                                         char** out) {
  if (result == nullptr || out == nullptr) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  *out = copy_string(result->artifacts.rounds_jsonl);
  return FEDSIM_OK;
}

fedsim_status fedsim_result_summary_json(const fedsim_result* result,
                                         char** out) {
  if (result == nullptr || out == nullptr) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  *out = copy_string(result->artifacts.summary_json);
  return FEDSIM_OK;
}

fedsim_status fedsim_result_run_count(const fedsim_result* result,
                                      size_t* out) {
  if (result == nullptr || out == nullptr) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  *out = result->artifacts.run_seeds.size();
  return FEDSIM_OK;
}

fedsim_status fedsim_result_run_seed(const fedsim_result* result,
                                     size_t run_index, uint64_t* out) {
  if (result == nullptr || out == nullptr) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  if (run_index >= result->artifacts.run_seeds.size()) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "run index out of range");
  }
  *out = result->artifacts.run_seeds[run_index];
  return FEDSIM_OK;
}

fedsim_status fedsim_result_final_params(const fedsim_result* result,
                                         size_t run_index,
                                         const double** data, size_t* len) {
  if (result == nullptr || data == nullptr || len == nullptr) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  if (run_index >= result->artifacts.final_params.size()) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "run index out of range");
  }
  const auto& params = result->artifacts.final_params[run_index];
  *data = params.data();
  *len = params.size();
  return FEDSIM_OK;
}

void fedsim_result_free(fedsim_result* result) { delete result; }

fedsim_status fedsim_metrics_dissimilarity(const fedsim_dataset* dataset,
                                           const char* model_json,
                                           const double* params, size_t len,
                                           double epsilon, char** json_out) {
  if (dataset == nullptr || model_json == nullptr || params == nullptr ||
      json_out == nullptr) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  return guard([&]() {
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(model_json);
    } catch (const nlohmann::json::exception& e) {
      throw fedsim::ValidationError(std::string("bad model JSON: ") +
                                    e.what());
    }
    fedsim::ModelSpec spec;
    spec.kind = fedsim::model_kind_from_string(m.value("kind", "logistic"));
    spec.input_dim = dataset->data.input_dim;
    spec.num_classes = dataset->data.num_classes;
    spec.hidden_dim = spec.kind == fedsim::ModelKind::mlp
                          ? m.value("hidden_dim", std::size_t{32})
                          : 0;
    spec.validate();
    fedsim::ParamVector w(std::vector<double>(params, params + len));
    *json_out = copy_string(
        fedsim::dissimilarity_json(dataset->data, spec, w, epsilon));
  });
}

fedsim_status fedsim_params_save(const double* params, size_t len,
                                 const char* path) {
  if (params == nullptr || path == nullptr) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  return guard([&]() {
    fedsim::ParamVector w(std::vector<double>(params, params + len));
    fedsim::save_params(w, path);
  });
}

fedsim_status fedsim_params_load(const char* path, double** params,
                                 size_t* len) {
  if (path == nullptr || params == nullptr || len == nullptr) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  return guard([&]() {
    fedsim::ParamVector w = fedsim::load_params(path);
    double* out =
        static_cast<double*>(std::malloc(sizeof(double) * w.size()));
    std::memcpy(out, w.data(), sizeof(double) * w.size());
    *params = out;
    *len = w.size();
  });
}

void fedsim_params_free(double* params) { std::free(params); }

fedsim_status fedsim_theory_eval(const char* params_json, char** json_out) {
  if (params_json == nullptr || json_out == nullptr) {
    return fail(FEDSIM_ERR_INVALID_ARGUMENT, "null argument");
  }
  return guard([&]() {
    *json_out = copy_string(fedsim::theory_eval_json(params_json));
  });
}

}  // extern "C"

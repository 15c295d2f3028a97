#include "fedsim/experiment.hpp"

#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fedsim/errors.hpp"
#include "fedsim/log.hpp"
#include "fedsim/metrics.hpp"

namespace fedsim {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw ValidationError(path + ": " + message);
}

void check_keys(const json& obj, const std::string& path,
                const std::set<std::string>& allowed) {
  if (!obj.is_object()) fail(path, "must be a JSON object");
  for (const auto& item : obj.items()) {
    if (!allowed.contains(item.key())) {
      fail(path + "." + item.key(), "unknown key");
    }
  }
}

double get_number(const json& obj, const std::string& path,
                  const std::string& key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_number()) fail(path + "." + key, "must be a number");
  return obj.at(key).get<double>();
}

std::uint64_t get_uint(const json& obj, const std::string& path,
                       const std::string& key, std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0)) {
    fail(path + "." + key, "must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

bool get_bool(const json& obj, const std::string& path, const std::string& key,
              bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_boolean()) fail(path + "." + key, "must be a boolean");
  return obj.at(key).get<bool>();
}

std::string get_string(const json& obj, const std::string& path,
                       const std::string& key, const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_string()) fail(path + "." + key, "must be a string");
  return obj.at(key).get<std::string>();
}

std::vector<std::string> get_string_list(const json& obj,
                                         const std::string& path,
                                         const std::string& key) {
  std::vector<std::string> out;
  if (!obj.contains(key)) return out;
  const json& v = obj.at(key);
  if (v.is_string()) {
    out.push_back(v.get<std::string>());
    return out;
  }
  if (!v.is_array()) fail(path + "." + key, "must be a string or array");
  for (const auto& item : v) {
    if (!item.is_string()) fail(path + "." + key, "entries must be strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

DatasetConfig parse_dataset_block(const json& block) {
  const std::string path = "dataset";
  check_keys(block, path,
             {"generator", "alpha", "beta", "num_devices", "seed", "input_dim",
              "num_classes", "power_law_exponent", "min_samples",
              "max_samples", "images", "labels", "classes_per_device", "path",
              "split_fraction", "split_seed"});
  DatasetConfig cfg;
  const std::string generator = get_string(block, path, "generator", "");
  if (generator == "synthetic" || generator == "synthetic_iid") {
    cfg.kind = DatasetConfig::Kind::synthetic;
    SyntheticSpec& s = cfg.synthetic;
    s.iid = generator == "synthetic_iid";
    s.alpha = get_number(block, path, "alpha", s.iid ? 0.0 : s.alpha);
    s.beta = get_number(block, path, "beta", s.iid ? 0.0 : s.beta);
    s.num_devices = get_uint(block, path, "num_devices", 30);
    s.input_dim = get_uint(block, path, "input_dim", 60);
    s.num_classes = get_uint(block, path, "num_classes", 10);
    s.power_law_exponent =
        get_number(block, path, "power_law_exponent", 1.5);
    s.min_samples = static_cast<std::uint32_t>(
        get_uint(block, path, "min_samples", 10));
    s.max_samples = static_cast<std::uint32_t>(
        get_uint(block, path, "max_samples", 1000));
    s.seed = get_uint(block, path, "seed", 0);
    try {
      s.validate();
    } catch (const ValidationError& e) {
      fail(path, e.what());
    }
  } else if (generator == "mnist") {
    cfg.kind = DatasetConfig::Kind::mnist;
    MnistPartitionSpec& m = cfg.mnist;
    m.num_devices = get_uint(block, path, "num_devices", 1000);
    m.classes_per_device = get_uint(block, path, "classes_per_device", 2);
    m.num_classes = get_uint(block, path, "num_classes", 10);
    m.power_law_exponent =
        get_number(block, path, "power_law_exponent", 1.6);
    m.min_samples = static_cast<std::uint32_t>(
        get_uint(block, path, "min_samples", 30));
    m.max_samples = static_cast<std::uint32_t>(
        get_uint(block, path, "max_samples", 500));
    m.seed = get_uint(block, path, "seed", 0);
    cfg.image_paths = get_string_list(block, path, "images");
    cfg.label_paths = get_string_list(block, path, "labels");
    if (cfg.image_paths.empty() || cfg.label_paths.empty()) {
      fail(path, "mnist generator requires images and labels paths");
    }
    if (cfg.image_paths.size() != cfg.label_paths.size()) {
      fail(path, "images and labels lists must have equal length");
    }
    try {
      m.validate();
    } catch (const ValidationError& e) {
      fail(path, e.what());
    }
  } else if (generator == "file" ||
             (generator.empty() && block.contains("path"))) {
    cfg.kind = DatasetConfig::Kind::file;
    cfg.file_path = get_string(block, path, "path", "");
    if (cfg.file_path.empty()) fail(path + ".path", "required for file datasets");
  } else {
    fail(path + ".generator",
         "must be one of synthetic, synthetic_iid, mnist, file");
  }

  cfg.split_fraction = get_number(block, path, "split_fraction", 0.8);
  if (!(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0)) {
    fail(path + ".split_fraction", "must be in (0, 1)");
  }
  if (block.contains("split_seed")) {
    cfg.split_seed = get_uint(block, path, "split_seed", 0);
  }
  return cfg;
}

bool is_mnist(const DatasetConfig& cfg) {
  return cfg.kind == DatasetConfig::Kind::mnist;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config is not valid JSON: ") +
                          e.what());
  }
  check_keys(root, "config",
             {"dataset", "model", "federation", "telemetry", "runs", "sweep"});
  if (!root.contains("dataset")) fail("config.dataset", "required");

  ExperimentConfig cfg;
  cfg.dataset = parse_dataset_block(root.at("dataset"));

  if (root.contains("model")) {
    const json& m = root.at("model");
    check_keys(m, "model", {"kind", "hidden_dim"});
    const std::string kind = get_string(m, "model", "kind", "logistic");
    try {
      cfg.model_kind = model_kind_from_string(kind);
    } catch (const ValidationError& e) {
      fail("model.kind", e.what());
    }
    cfg.hidden_dim = get_uint(m, "model", "hidden_dim", 32);
    if (cfg.model_kind == ModelKind::mlp && cfg.hidden_dim < 1) {
      fail("model.hidden_dim", "must be >= 1 for mlp");
    }
  }

  FederationConfig& fed = cfg.federation;
  const json fed_block =
      root.contains("federation") ? root.at("federation") : json::object();
  check_keys(fed_block, "federation",
             {"algorithm", "rounds", "devices_per_round", "epochs", "mu",
              "learning_rate", "batch_size", "straggler_fraction",
              "sampling_scheme", "adaptive_mu", "master_seed",
              "feddane_full_grad", "threads"});
  try {
    fed.algorithm = algorithm_from_string(
        get_string(fed_block, "federation", "algorithm", "fedavg"));
  } catch (const ValidationError& e) {
    fail("federation.algorithm", e.what());
  }
  fed.rounds = get_uint(fed_block, "federation", "rounds", 100);
  fed.devices_per_round =
      get_uint(fed_block, "federation", "devices_per_round", 10);
  fed.epochs = get_uint(fed_block, "federation", "epochs", 20);
  fed.mu = get_number(fed_block, "federation", "mu", 0.0);
  fed.learning_rate = get_number(fed_block, "federation", "learning_rate",
                                 is_mnist(cfg.dataset) ? 0.03 : 0.01);
  fed.batch_size = get_uint(fed_block, "federation", "batch_size", 10);
  fed.straggler_fraction =
      get_number(fed_block, "federation", "straggler_fraction", 0.0);
  try {
    fed.sampling_scheme = sampling_scheme_from_string(
        get_string(fed_block, "federation", "sampling_scheme",
                   "uniform_sample_weighted_avg"));
  } catch (const ValidationError& e) {
    fail("federation.sampling_scheme", e.what());
  }
  fed.master_seed = get_uint(fed_block, "federation", "master_seed", 1);
  fed.feddane_full_grad =
      get_bool(fed_block, "federation", "feddane_full_grad", false);
  fed.threads = get_uint(fed_block, "federation", "threads", 1);

  if (fed_block.contains("adaptive_mu")) {
    const json& a = fed_block.at("adaptive_mu");
    check_keys(a, "federation.adaptive_mu",
               {"enabled", "mu0", "step", "patience"});
    fed.adaptive_mu.enabled =
        get_bool(a, "federation.adaptive_mu", "enabled", true);
    fed.adaptive_mu.mu0 =
        get_number(a, "federation.adaptive_mu", "mu0", fed.mu);
    fed.adaptive_mu.step =
        get_number(a, "federation.adaptive_mu", "step", 0.1);
    fed.adaptive_mu.patience = static_cast<int>(
        get_uint(a, "federation.adaptive_mu", "patience", 5));
  }

  if (fed.mu < 0.0) fail("federation.mu", "must be >= 0");
  if (fed.algorithm == Algorithm::fedavg && fed.mu != 0.0) {
    fail("federation.mu", "fedavg requires mu = 0");
  }
  if (!(fed.straggler_fraction >= 0.0 && fed.straggler_fraction < 1.0)) {
    fail("federation.straggler_fraction", "must be in [0, 1)");
  }
  if (fed.rounds > 1000000) fail("federation.rounds", "unreasonably large");
  if (fed.devices_per_round < 1) {
    fail("federation.devices_per_round", "must be >= 1");
  }
  if (fed.epochs < 1) fail("federation.epochs", "must be >= 1");
  if (fed.learning_rate <= 0.0) {
    fail("federation.learning_rate", "must be > 0");
  }
  if (fed.batch_size < 1) fail("federation.batch_size", "must be >= 1");

  fed.telemetry_every = is_mnist(cfg.dataset) ? 5 : 1;
  if (root.contains("telemetry")) {
    const json& t = root.at("telemetry");
    check_keys(t, "telemetry", {"every", "epsilon"});
    fed.telemetry_every = get_uint(t, "telemetry", "every",
                                   fed.telemetry_every);
    if (fed.telemetry_every < 1) fail("telemetry.every", "must be >= 1");
    cfg.dissim_epsilon = get_number(t, "telemetry", "epsilon", 1e-10);
    if (cfg.dissim_epsilon <= 0.0) fail("telemetry.epsilon", "must be > 0");
  }

  if (root.contains("runs")) {
    const json& runs = root.at("runs");
    if (!runs.is_array() || runs.empty()) {
      fail("runs", "must be a non-empty array of seeds");
    }
    for (const auto& r : runs) {
      if (!r.is_number_integer() || r.get<std::int64_t>() < 0) {
        fail("runs", "seeds must be non-negative integers");
      }
      cfg.runs.push_back(r.get<std::uint64_t>());
    }
  } else {
    cfg.runs.push_back(fed.master_seed);
  }

  if (root.contains("sweep")) {
    const json& s = root.at("sweep");
    check_keys(s, "sweep", {"mu", "straggler_fractions"});
    if (s.contains("mu")) {
      cfg.sweep_mu.clear();
      for (const auto& v : s.at("mu")) {
        if (!v.is_number()) fail("sweep.mu", "entries must be numbers");
        cfg.sweep_mu.push_back(v.get<double>());
      }
      if (cfg.sweep_mu.empty()) fail("sweep.mu", "must be non-empty");
    }
    if (s.contains("straggler_fractions")) {
      for (const auto& v : s.at("straggler_fractions")) {
        if (!v.is_number()) {
          fail("sweep.straggler_fractions", "entries must be numbers");
        }
        cfg.sweep_straggler_fractions.push_back(v.get<double>());
      }
    }
  }
  return cfg;
}

FederatedDataset build_dataset(const DatasetConfig& cfg) {
  switch (cfg.kind) {
    case DatasetConfig::Kind::synthetic: {
      FederatedDataset ds = generate_synthetic(cfg.synthetic);
      return split_train_test(ds, cfg.split_fraction,
                              cfg.split_seed.value_or(cfg.synthetic.seed));
    }
    case DatasetConfig::Kind::mnist: {
      IdxImages pooled;
      std::vector<std::uint8_t> labels;
      for (std::size_t i = 0; i < cfg.image_paths.size(); ++i) {
        IdxImages part = load_idx_images(cfg.image_paths[i]);
        std::vector<std::uint8_t> part_labels =
            load_idx_labels(cfg.label_paths[i]);
        if (part.count != part_labels.size()) {
          throw ValidationError("image/label counts differ in " +
                                cfg.image_paths[i]);
        }
        if (pooled.count == 0) {
          pooled = std::move(part);
        } else {
          if (part.rows != pooled.rows || part.cols != pooled.cols) {
            throw ValidationError("image dimensions differ across files");
          }
          pooled.count += part.count;
          pooled.pixels.insert(pooled.pixels.end(), part.pixels.begin(),
                               part.pixels.end());
        }
        labels.insert(labels.end(), part_labels.begin(), part_labels.end());
      }
      FederatedDataset ds = partition_mnist(pooled, labels, cfg.mnist);
      return split_train_test(ds, cfg.split_fraction,
                              cfg.split_seed.value_or(cfg.mnist.seed));
    }
    case DatasetConfig::Kind::file:
      return load_dataset(cfg.file_path);
  }
  throw ValidationError("unreachable dataset kind");
}

ModelSpec resolve_model(const ExperimentConfig& cfg,
                        const FederatedDataset& dataset) {
  ModelSpec spec;
  spec.kind = cfg.model_kind;
  spec.input_dim = dataset.input_dim;
  spec.num_classes = dataset.num_classes;
  spec.hidden_dim = cfg.model_kind == ModelKind::mlp ? cfg.hidden_dim : 0;
  spec.validate();
  return spec;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

namespace {

json reading_to_json(const DissimilarityReading& r) {
  return json{{"B", r.B},
              {"grad_variance", r.grad_variance},
              {"global_grad_norm_sq", r.global_grad_norm_sq},
              {"expected_local_grad_norm_sq", r.expected_local_grad_norm_sq},
              {"exception_triggered", r.exception_triggered},
              {"below_epsilon", r.below_epsilon}};
}

json number_or_null(double v) {
  if (std::isfinite(v)) return json(v);
  return json();
}

}  // namespace

RunArtifacts run_all(const ExperimentConfig& cfg,
                     const FederatedDataset& dataset) {
  const ModelSpec spec = resolve_model(cfg, dataset);

  RunArtifacts artifacts;
  std::ostringstream csv;
  std::ostringstream jsonl;
  csv << "run_seed,round,algorithm,mu,straggler_fraction,train_loss,"
         "test_accuracy,B,grad_variance,mean_gamma,dropped_count,status\n";

  json summary{{"schema_version", 1}, {"runs", json::array()}};

  for (std::uint64_t seed : cfg.runs) {
    FederationConfig fed = cfg.federation;
    fed.master_seed = seed;
    const ExperimentResult result =
        run_experiment(fed, spec, dataset, cfg.dissim_epsilon);

    std::vector<double> history;
    for (const auto& rec : result.records) {
      json line{{"run_seed", seed},
                {"round", rec.round},
                {"algorithm", to_string(fed.algorithm)},
                {"mu", rec.mu},
                {"aborted", rec.aborted},
                {"dropped", rec.dropped},
                {"mean_gamma", number_or_null(rec.mean_gamma)}};
      json devices = json::array();
      for (const auto& d : rec.devices) {
        devices.push_back(json{{"device_id", d.device_id},
                               {"epochs", d.epochs_assigned},
                               {"straggler", d.straggler},
                               {"gamma", number_or_null(d.gamma)},
                               {"dropped", d.dropped},
                               {"diverged", d.diverged}});
      }
      line["devices"] = std::move(devices);
      if (rec.has_telemetry) {
        history.push_back(rec.train_loss);
        line["train_loss"] = number_or_null(rec.train_loss);
        line["test_accuracy"] = number_or_null(rec.test_accuracy);
        line["dissimilarity"] = reading_to_json(*rec.dissimilarity);

        const ConvergenceStatus status = detect_convergence(history);
        csv << seed << ',' << rec.round << ',' << to_string(fed.algorithm)
            << ',' << format_double(rec.mu) << ','
            << format_double(fed.straggler_fraction) << ','
            << format_double(rec.train_loss) << ','
            << format_double(rec.test_accuracy) << ','
            << format_double(rec.dissimilarity->B) << ','
            << format_double(rec.dissimilarity->grad_variance) << ','
            << format_double(rec.mean_gamma) << ',' << rec.dropped.size()
            << ',' << to_string(status) << '\n';
      } else {
        line["train_loss"] = json();
        line["test_accuracy"] = json();
        line["dissimilarity"] = json();
      }
      jsonl << line.dump() << '\n';
    }

    json run_summary{
        {"run_seed", seed},
        {"rounds_completed", result.records.size()},
        {"status", to_string(result.final_status)},
        {"aborted_nonfinite", result.aborted_nonfinite},
        {"final_mu", result.final_mu}};
    run_summary["final_train_loss"] =
        history.empty() ? json() : number_or_null(history.back());
    if (!result.records.empty() && result.records.back().has_telemetry) {
      run_summary["final_test_accuracy"] =
          number_or_null(result.records.back().test_accuracy);
    } else {
      run_summary["final_test_accuracy"] = json();
    }
    summary["runs"].push_back(std::move(run_summary));

    artifacts.run_seeds.push_back(seed);
    artifacts.final_params.push_back(result.final_params);
  }

  artifacts.results_csv = csv.str();
  artifacts.rounds_jsonl = jsonl.str();
  artifacts.summary_json = summary.dump(2) + "\n";
  return artifacts;
}

std::string theory_eval_json(const std::string& params_json) {
  json root;
  try {
    root = json::parse(params_json);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("theory params are not valid JSON: ") +
                          e.what());
  }
  check_keys(root, "theory",
             {"L", "L_minus", "mu", "gamma", "B", "K", "epsilon", "delta"});
  TheoryParams p;
  p.L = get_number(root, "theory", "L", 0.0);
  p.L_minus = get_number(root, "theory", "L_minus", 0.0);
  p.mu = get_number(root, "theory", "mu", 0.0);
  p.gamma = get_number(root, "theory", "gamma", 0.0);
  p.B = get_number(root, "theory", "B", 1.0);
  p.K = get_number(root, "theory", "K", 1.0);
  p.epsilon = get_number(root, "theory", "epsilon", 0.0);
  p.delta = get_number(root, "theory", "delta", 0.0);

  const RhoReport report = rho_bound(p);
  json out{{"rho", report.rho},
           {"mu_bar", p.mu_bar()},
           {"gamma_B_lt_1", report.gamma_B_lt_1},
           {"B_lt_sqrt_K", report.B_lt_sqrt_K}};
  if (report.rho > 0.0 && p.epsilon > 0.0) {
    out["iteration_estimate"] = iteration_estimate(p);
  } else {
    out["iteration_estimate"] = json();
  }
  return out.dump(2) + "\n";
}

std::string dissimilarity_json(const FederatedDataset& dataset,
                               const ModelSpec& spec, const ParamVector& w,
                               double epsilon) {
  if (w.size() != spec.param_dim()) {
    throw ValidationError("checkpoint length does not match the model");
  }
  DissimilarityReading r = dissimilarity(dataset, spec, w, epsilon);
  json out = reading_to_json(r);
  out["epsilon"] = epsilon;
  out["bounded_variance_cap"] = bounded_variance_bound(r.grad_variance,
                                                       epsilon);
  return out.dump(2) + "\n";
}

}  // namespace fedsim

// Command-line harness over the fedsim C API: dataset generation, experiment
// runs, mu/straggler sweeps, dissimilarity diagnostics, and the
// sufficient-decrease calculator.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedsim/fedsim.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct StringHolder {
  char* value = nullptr;
  ~StringHolder() { fedsim_string_free(value); }
};

struct DatasetHolder {
  fedsim_dataset* value = nullptr;
  ~DatasetHolder() { fedsim_dataset_free(value); }
};

struct ResultHolder {
  fedsim_result* value = nullptr;
  ~ResultHolder() { fedsim_result_free(value); }
};

[[noreturn]] void die(const std::string& message) {
  std::cerr << "fedsim: " << message << "\n";
  std::exit(1);
}

void check(fedsim_status status, const std::string& context) {
  if (status != FEDSIM_OK) {
    die(context + ": " + fedsim_last_error());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) die("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) die("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) die("write failed for " + path.string());
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

std::string dataset_block(const std::string& config_text) {
  json root;
  try {
    root = json::parse(config_text);
  } catch (const json::exception& e) {
    die(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.contains("dataset")) die("config has no dataset block");
  return root.at("dataset").dump();
}

void write_run_outputs(const fs::path& out_dir, fedsim_result* result,
                       const std::string& csv_name) {
  StringHolder csv, jsonl, summary;
  check(fedsim_result_csv(result, &csv.value), "results");
  check(fedsim_result_rounds_jsonl(result, &jsonl.value), "rounds");
  check(fedsim_result_summary_json(result, &summary.value), "summary");
  write_file(out_dir / csv_name, csv.value);
  const std::string stem =
      csv_name.size() > 4 ? csv_name.substr(0, csv_name.size() - 4)
                          : csv_name;
  write_file(out_dir / (stem == "results" ? "rounds.jsonl"
                                          : stem + "_rounds.jsonl"),
             jsonl.value);
  write_file(out_dir / (stem == "results" ? "summary.json"
                                          : stem + "_summary.json"),
             summary.value);

  size_t run_count = 0;
  check(fedsim_result_run_count(result, &run_count), "run count");
  for (size_t i = 0; i < run_count; ++i) {
    uint64_t seed = 0;
    const double* params = nullptr;
    size_t len = 0;
    check(fedsim_result_run_seed(result, i, &seed), "run seed");
    check(fedsim_result_final_params(result, i, &params, &len),
          "final params");
    const std::string name = stem == "results"
                                 ? "final_params_seed" + std::to_string(seed) +
                                       ".bin"
                                 : stem + "_final_params_seed" +
                                       std::to_string(seed) + ".bin";
    check(fedsim_params_save(params, len, (out_dir / name).string().c_str()),
          "checkpoint save");
  }
}

int cmd_generate(const std::string& config_path, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::string block = dataset_block(read_file(config_path));
  DatasetHolder dataset;
  check(fedsim_dataset_build(block.c_str(), &dataset.value), "generate");
  const fs::path target = fs::path(out_dir) / "dataset.fsim";
  check(fedsim_dataset_save(dataset.value, target.string().c_str()), "save");
  StringHolder info;
  check(fedsim_dataset_info(dataset.value, &info.value), "info");
  write_file(fs::path(out_dir) / "dataset_info.json", info.value);
  std::cout << info.value;
  std::cout << "wrote " << target.string() << "\n";
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            int64_t seed, int64_t telemetry_every, int64_t threads) {
  fs::create_directories(out_dir);
  const std::string config = read_file(config_path);
  ResultHolder result;
  check(fedsim_run(config.c_str(), nullptr, seed, telemetry_every, threads,
                   &result.value),
        "run");
  write_run_outputs(out_dir, result.value, "results.csv");
  std::cout << "wrote " << (fs::path(out_dir) / "results.csv").string()
            << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir,
              int64_t seed, int64_t threads) {
  fs::create_directories(out_dir);
  json root;
  try {
    root = json::parse(read_file(config_path));
  } catch (const json::exception& e) {
    die(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.contains("dataset")) die("config has no dataset block");

  std::vector<double> mu_values = {0.001, 0.01, 0.1, 1.0};
  std::vector<double> fractions;
  if (root.contains("sweep")) {
    const json& sweep = root.at("sweep");
    if (sweep.contains("mu")) {
      mu_values = sweep.at("mu").get<std::vector<double>>();
    }
    if (sweep.contains("straggler_fractions")) {
      fractions = sweep.at("straggler_fractions").get<std::vector<double>>();
    }
  }
  if (fractions.empty()) {
    double f = 0.0;
    if (root.contains("federation") &&
        root.at("federation").contains("straggler_fraction")) {
      f = root.at("federation").at("straggler_fraction").get<double>();
    }
    fractions.push_back(f);
  }

  const std::string block = root.at("dataset").dump();
  DatasetHolder dataset;
  check(fedsim_dataset_build(block.c_str(), &dataset.value), "dataset");

  json cell = root;
  cell.erase("sweep");
  for (double mu : mu_values) {
    for (double fraction : fractions) {
      cell["federation"]["mu"] = mu;
      cell["federation"]["straggler_fraction"] = fraction;
      const std::string cell_config = cell.dump();
      ResultHolder result;
      check(fedsim_run(cell_config.c_str(), dataset.value, seed, -1, threads,
                       &result.value),
            "sweep cell mu=" + format_number(mu));
      const std::string name = "results_mu" + format_number(mu) + "_frac" +
                               format_number(fraction) + ".csv";
      write_run_outputs(out_dir, result.value, name);
      std::cout << "wrote " << (fs::path(out_dir) / name).string() << "\n";
    }
  }
  return 0;
}

int cmd_metrics(const std::string& dataset_path,
                const std::string& checkpoint_path, const std::string& kind,
                int64_t hidden_dim, double epsilon,
                const std::string& out_path) {
  DatasetHolder dataset;
  check(fedsim_dataset_load(dataset_path.c_str(), &dataset.value), "dataset");
  double* params = nullptr;
  size_t len = 0;
  check(fedsim_params_load(checkpoint_path.c_str(), &params, &len),
        "checkpoint");
  json model{{"kind", kind}};
  if (kind == "mlp") model["hidden_dim"] = hidden_dim;
  StringHolder out;
  const fedsim_status status = fedsim_metrics_dissimilarity(
      dataset.value, model.dump().c_str(), params, len, epsilon, &out.value);
  fedsim_params_free(params);
  check(status, "dissimilarity");
  if (!out_path.empty()) {
    write_file(out_path, out.value);
  }
  std::cout << out.value;
  return 0;
}

int cmd_theory(const std::string& params_path, const std::string& out_path) {
  StringHolder out;
  check(fedsim_theory_eval(read_file(params_path).c_str(), &out.value),
        "theory");
  if (!out_path.empty()) {
    write_file(out_path, out.value);
  }
  std::cout << out.value;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated optimization simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".";
  std::string dataset_path, checkpoint_path, params_path, out_path;
  std::string model_kind = "logistic";
  int64_t seed = -1, telemetry_every = -1, threads = -1, hidden_dim = 32;
  double epsilon = 1e-10;

  auto* generate = app.add_subcommand(
      "generate", "Build a dataset from a config's dataset block");
  generate->add_option("--config", config_path, "config JSON path")
      ->required();
  generate->add_option("--out", out_dir, "output directory");

  auto* run = app.add_subcommand("run", "Execute one experiment config");
  run->add_option("--config", config_path, "config JSON path")->required();
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--seed", seed, "override the config's run seeds");
  run->add_option("--telemetry-every", telemetry_every,
                  "telemetry cadence in rounds");
  run->add_option("--threads", threads, "parallel device solves per round");

  auto* sweep = app.add_subcommand(
      "sweep", "Cross-product over mu values and straggler fractions");
  sweep->add_option("--config", config_path, "config JSON path")->required();
  sweep->add_option("--out", out_dir, "output directory");
  sweep->add_option("--seed", seed, "override the config's run seeds");
  sweep->add_option("--threads", threads, "parallel device solves per round");

  auto* metrics = app.add_subcommand(
      "metrics", "Dissimilarity diagnostics for a saved checkpoint");
  metrics->add_option("--dataset", dataset_path, "dataset file")->required();
  metrics->add_option("--checkpoint", checkpoint_path, "parameter checkpoint")
      ->required();
  metrics->add_option("--model", model_kind, "logistic | mlp");
  metrics->add_option("--hidden-dim", hidden_dim, "mlp hidden width");
  metrics->add_option("--epsilon", epsilon, "stationarity threshold");
  metrics->add_option("--out", out_path, "also write the JSON here");

  auto* theory = app.add_subcommand(
      "theory", "Evaluate the sufficient-decrease constant");
  theory->add_option("--params", params_path, "theory params JSON")
      ->required();
  theory->add_option("--out", out_path, "also write the JSON here");

  CLI11_PARSE(app, argc, argv);

  if (generate->parsed()) return cmd_generate(config_path, out_dir);
  if (run->parsed()) {
    return cmd_run(config_path, out_dir, seed, telemetry_every, threads);
  }
  if (sweep->parsed()) return cmd_sweep(config_path, out_dir, seed, threads);
  if (metrics->parsed()) {
    return cmd_metrics(dataset_path, checkpoint_path, model_kind, hidden_dim,
                       epsilon, out_path);
  }
  if (theory->parsed()) return cmd_theory(params_path, out_path);
  return 1;
}

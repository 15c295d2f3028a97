#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/federation.hpp"

namespace fedsim {

struct DatasetConfig {
  enum class Kind { synthetic, mnist, file };
  Kind kind = Kind::synthetic;
  SyntheticSpec synthetic;
  MnistPartitionSpec mnist;
  std::vector<std::string> image_paths;
  std::vector<std::string> label_paths;
  std::string file_path;
  double split_fraction = 0.8;
  std::optional<std::uint64_t> split_seed;  // default: the dataset seed
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelKind model_kind = ModelKind::logistic;
  std::size_t hidden_dim = 32;
  FederationConfig federation;
  double dissim_epsilon = 1e-10;
  std::vector<std::uint64_t> runs;  // master seeds; never empty after parse
  std::vector<double> sweep_mu = {0.001, 0.01, 0.1, 1.0};
  std::vector<double> sweep_straggler_fractions = {};  // empty: reuse config
};

// Parses and validates a config document. Unknown keys are rejected;
// messages carry the offending field path. Defaults: devices_per_round 10,
// batch_size 10, learning rate 0.01 (0.03 for mnist), telemetry every round
// (every 5 for mnist).
ExperimentConfig parse_config(const std::string& text);

// Generates / loads / partitions per the dataset block, then applies the
// train/test split (file datasets are used as stored).
FederatedDataset build_dataset(const DatasetConfig& cfg);

ModelSpec resolve_model(const ExperimentConfig& cfg,
                        const FederatedDataset& dataset);

struct RunArtifacts {
  std::string results_csv;
  std::string rounds_jsonl;
  std::string summary_json;
  std::vector<std::uint64_t> run_seeds;
  std::vector<ParamVector> final_params;  // parallel to run_seeds
};

// Executes every configured run against the dataset and renders the outputs.
// Byte-deterministic for a fixed (config, dataset).
RunArtifacts run_all(const ExperimentConfig& cfg,
                     const FederatedDataset& dataset);

// Shortest round-trip decimal rendering used for all CSV floats.
std::string format_double(double v);

// {"L":..,"L_minus":..,"mu":..,"gamma":..,"B":..,"K":..,"epsilon":..,
//  "delta":..} -> rho, the positivity-condition flags, and the iteration
// estimate (null unless rho > 0 and epsilon > 0).
std::string theory_eval_json(const std::string& params_json);

// Dissimilarity reading for a saved model over a dataset, as JSON.
std::string dissimilarity_json(const FederatedDataset& dataset,
                               const ModelSpec& spec, const ParamVector& w,
                               double epsilon);

}  // namespace fedsim

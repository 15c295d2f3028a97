#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/model.hpp"

namespace fedsim {

// One device's local data. Feature rows are row-major; train/test index sets
// are sorted, disjoint, and together cover every row exactly once.
struct DeviceShard {
  std::uint32_t device_id = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> features;
  std::vector<std::uint32_t> labels;
  std::vector<std::uint32_t> train_index;
  std::vector<std::uint32_t> test_index;

  // n_k: training sample count.
  std::size_t train_count() const { return train_index.size(); }

  Batch train_batch() const;
  Batch test_batch() const;
  Batch batch_of(std::span<const std::uint32_t> row_ids) const;

  friend bool operator==(const DeviceShard&, const DeviceShard&) = default;
};

struct FederatedDataset {
  std::vector<DeviceShard> shards;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<double> weights;  // p_k = n_k / sum_j n_j
  std::string provenance;       // JSON: generator name, parameters, seed

  std::size_t num_devices() const { return shards.size(); }
  std::size_t total_train_samples() const;

  // p_k from current train counts.
  void recompute_weights();

  // Throws ValidationError if any structural invariant is broken.
  void check_invariants() const;

  friend bool operator==(const FederatedDataset&,
                         const FederatedDataset&) = default;
};

struct SyntheticSpec {
  double alpha = 0.0;
  double beta = 0.0;
  bool iid = false;
  std::size_t num_devices = 30;
  std::size_t input_dim = 60;
  std::size_t num_classes = 10;
  double power_law_exponent = 1.5;
  std::uint32_t min_samples = 10;
  std::uint32_t max_samples = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

// Generating model per device, exposed so tests can verify stored labels
// against the process that produced them.
struct SyntheticGroundTruth {
  std::vector<ParamVector> device_models;      // logistic layout (W | b)
  std::vector<std::vector<double>> feature_means;  // v_k
};

// Draws each device's generating model and features, labels by
// argmax(softmax(W x + b)). All rows land in the train index; apply
// split_train_test afterwards. Deterministic given spec.seed.
FederatedDataset generate_synthetic(const SyntheticSpec& spec,
                                    SyntheticGroundTruth* truth = nullptr);

SyntheticSpec synthetic_spec_from_provenance(const std::string& provenance);

struct MnistPartitionSpec {
  std::size_t num_devices = 1000;
  std::size_t classes_per_device = 2;
  std::size_t num_classes = 10;
  double power_law_exponent = 1.6;
  std::uint32_t min_samples = 30;
  std::uint32_t max_samples = 500;
  std::uint64_t seed = 0;

  void validate() const;
};

// Raw image set parsed from the IDX format.
struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols
};

IdxImages load_idx_images(const std::string& path);
std::vector<std::uint8_t> load_idx_labels(const std::string& path);

// Assigns each device samples of exactly classes_per_device distinct classes,
// with per-device counts following the configured power law. Pixels are
// flattened and scaled to [0,1]. Throws ValidationError with a shortfall
// report when the class inventories cannot cover one sample per assigned
// (device, class) slot.
FederatedDataset partition_mnist(const IdxImages& images,
                                 const std::vector<std::uint8_t>& labels,
                                 const MnistPartitionSpec& spec);

// Per-shard random train/test split; train count = round(fraction * rows).
// Shards with fewer than 2 rows go entirely to train (warning logged).
FederatedDataset split_train_test(const FederatedDataset& dataset,
                                  double fraction, std::uint64_t seed);

void save_dataset(const FederatedDataset& dataset, const std::string& path);
FederatedDataset load_dataset(const std::string& path);

// Checkpoint format shared with tools: u64 count + little-endian f64 values.
void save_params(const ParamVector& w, const std::string& path);
ParamVector load_params(const std::string& path);

}  // namespace fedsim

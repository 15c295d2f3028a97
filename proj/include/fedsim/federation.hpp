#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/model.hpp"
#include "fedsim/solver.hpp"

namespace fedsim {

enum class Algorithm { fedavg, fedprox, feddane };

std::string to_string(Algorithm algorithm);
Algorithm algorithm_from_string(const std::string& name);

enum class SamplingScheme {
  // K independent draws with probability p_k (duplicates allowed); updates
  // are combined by an unweighted mean.
  weighted_sample_simple_avg,
  // K uniform draws without replacement; updates are combined weighted by
  // n_k.
  uniform_sample_weighted_avg,
};

std::string to_string(SamplingScheme scheme);
SamplingScheme sampling_scheme_from_string(const std::string& name);

struct AdaptiveMuConfig {
  bool enabled = false;
  double mu0 = 0.0;
  double step = 0.1;
  int patience = 5;
};

struct FederationConfig {
  Algorithm algorithm = Algorithm::fedprox;
  std::size_t devices_per_round = 10;  // K
  std::size_t rounds = 100;            // T
  std::uint64_t epochs = 20;           // E, the full per-round workload
  double mu = 0.0;
  double learning_rate = 0.01;
  std::size_t batch_size = 10;
  double straggler_fraction = 0.0;  // in [0, 1)
  SamplingScheme sampling_scheme = SamplingScheme::uniform_sample_weighted_avg;
  AdaptiveMuConfig adaptive_mu;
  std::uint64_t master_seed = 1;
  // Estimate the DANE-style mean gradient over all devices instead of the
  // sampled subset.
  bool feddane_full_grad = false;
  std::size_t threads = 1;
  std::size_t telemetry_every = 1;

  void validate(std::size_t num_devices) const;
};

// Loss-driven proximal-weight controller: +step on any loss increase,
// -step (floored at 0) after `patience` consecutive decreases.
class MuController {
 public:
  MuController(double mu0, double step, int patience)
      : mu_(mu0), step_(step), patience_(patience) {}

  double mu() const { return mu_; }
  double update(double loss, double prev_loss);

 private:
  double mu_;
  double step_;
  int patience_;
  int decrease_streak_ = 0;
};

// One slot of the round's selection. Duplicate devices (weighted sampling)
// occupy several slots; the solve runs once per device using the first
// slot's epoch assignment, and each slot carries the shared update.
struct DeviceRoundInfo {
  std::uint32_t device_id = 0;
  std::uint64_t epochs_assigned = 0;
  bool straggler = false;
  double gamma = 0.0;
  bool dropped = false;
  bool diverged = false;
};

struct RoundRecord {
  std::size_t round = 0;
  std::vector<DeviceRoundInfo> devices;  // exactly K slots
  std::vector<std::uint32_t> dropped;    // device ids of dropped slots
  double mu = 0.0;                       // value in effect this round
  bool aborted = false;                  // no update survived; w unchanged
  bool has_telemetry = false;
  // Telemetry below is evaluated at the post-aggregation parameters.
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double mean_gamma = 0.0;
  std::optional<DissimilarityReading> dissimilarity;
};

struct ExperimentResult {
  std::vector<RoundRecord> records;
  ParamVector final_params;
  std::vector<double> loss_history;  // telemetry losses in round order
  ConvergenceStatus final_status = ConvergenceStatus::running;
  bool aborted_nonfinite = false;
  double final_mu = 0.0;
};

// Device ids for one round under the given scheme (see SamplingScheme).
std::vector<std::uint32_t> sample_devices(SamplingScheme scheme,
                                          const FederatedDataset& dataset,
                                          std::size_t k, RngStream& rng);

struct EpochAssignment {
  std::uint64_t epochs = 0;
  bool straggler = false;
};

// Exactly round(fraction * K) of the K slots become stragglers with epochs
// drawn uniformly from {1, ..., E}; the rest get E. Consumes only `rng`, so
// the assignment is identical across algorithms for a fixed (seed, round).
std::vector<EpochAssignment> assign_stragglers(std::size_t k, double fraction,
                                               std::uint64_t max_epochs,
                                               RngStream& rng);

struct DeviceUpdate {
  std::uint32_t device_id = 0;
  ParamVector params;
  std::size_t n_k = 0;
};

// Combines received updates per the scheme. Throws ValidationError on an
// empty list (callers treat that as an aborted round).
ParamVector aggregate(const std::vector<DeviceUpdate>& updates,
                      SamplingScheme scheme);

struct RoundOutcome {
  ParamVector params;
  RoundRecord record;
};

// One communication round: sample, assign work, solve locally, aggregate.
// `mu` is the proximal weight in effect (already 0 for FedAvg by config
// validation). Telemetry fields are left empty; run_experiment fills them.
RoundOutcome run_round(const ParamVector& w, const FederationConfig& cfg,
                       double mu, const ModelSpec& spec,
                       const FederatedDataset& dataset, std::size_t round);

// Full experiment: T rounds with telemetry, adaptive mu, and divergence
// handling. Deterministic given cfg.master_seed.
ExperimentResult run_experiment(const FederationConfig& cfg,
                                const ModelSpec& spec,
                                const FederatedDataset& dataset,
                                double dissim_epsilon = 1e-10);

}  // namespace fedsim

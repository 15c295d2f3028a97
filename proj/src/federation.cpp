#include "fedsim/federation.hpp"

#include <atomic>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>
#include <unordered_map>

#include "fedsim/errors.hpp"
#include "fedsim/log.hpp"

namespace fedsim {

std::string to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::fedavg: return "fedavg";
    case Algorithm::fedprox: return "fedprox";
    case Algorithm::feddane: return "feddane";
  }
  return "?";
}

Algorithm algorithm_from_string(const std::string& name) {
  if (name == "fedavg") return Algorithm::fedavg;
  if (name == "fedprox") return Algorithm::fedprox;
  if (name == "feddane") return Algorithm::feddane;
  throw ValidationError("unknown algorithm: " + name);
}

std::string to_string(SamplingScheme scheme) {
  return scheme == SamplingScheme::weighted_sample_simple_avg
             ? "weighted_sample_simple_avg"
             : "uniform_sample_weighted_avg";
}

SamplingScheme sampling_scheme_from_string(const std::string& name) {
  if (name == "weighted_sample_simple_avg") {
    return SamplingScheme::weighted_sample_simple_avg;
  }
  if (name == "uniform_sample_weighted_avg") {
    return SamplingScheme::uniform_sample_weighted_avg;
  }
  throw ValidationError("unknown sampling scheme: " + name);
}

void FederationConfig::validate(std::size_t num_devices) const {
  if (devices_per_round < 1 || devices_per_round > num_devices) {
    throw ValidationError("need 1 <= devices_per_round <= num_devices");
  }
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (mu < 0.0) throw ValidationError("mu must be >= 0");
  if (algorithm == Algorithm::fedavg && mu != 0.0) {
    throw ValidationError("fedavg requires mu = 0");
  }
  if (learning_rate <= 0.0) throw ValidationError("learning_rate must be > 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(straggler_fraction >= 0.0 && straggler_fraction < 1.0)) {
    throw ValidationError("straggler_fraction must be in [0, 1)");
  }
  if (adaptive_mu.enabled) {
    if (algorithm == Algorithm::fedavg) {
      throw ValidationError("adaptive mu has no effect on fedavg");
    }
    if (adaptive_mu.step <= 0.0 || adaptive_mu.patience < 1 ||
        adaptive_mu.mu0 < 0.0) {
      throw ValidationError("bad adaptive mu controller parameters");
    }
  }
  if (threads < 1) throw ValidationError("threads must be >= 1");
  if (telemetry_every < 1) throw ValidationError("telemetry_every must be >= 1");
}

double MuController::update(double loss, double prev_loss) {
  if (loss > prev_loss) {
    mu_ += step_;
    decrease_streak_ = 0;
  } else if (loss < prev_loss) {
    ++decrease_streak_;
    if (decrease_streak_ >= patience_) {
      mu_ = std::max(0.0, mu_ - step_);
      decrease_streak_ = 0;
    }
  } else {
    decrease_streak_ = 0;
  }
  return mu_;
}

std::vector<std::uint32_t> sample_devices(SamplingScheme scheme,
                                          const FederatedDataset& dataset,
                                          std::size_t k, RngStream& rng) {
  const std::size_t n = dataset.num_devices();
  if (k > n) throw ValidationError("cannot sample more devices than exist");
  std::vector<std::uint32_t> selected;
  selected.reserve(k);
  if (scheme == SamplingScheme::weighted_sample_simple_avg) {
    // Inverse-CDF draws over the p_k masses, with replacement.
    std::vector<double> cdf(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += dataset.weights[i];
      cdf[i] = acc;
    }
    cdf[n - 1] = std::max(cdf[n - 1], 1.0);
    for (std::size_t draw = 0; draw < k; ++draw) {
      const double u = rng.next_double();
      const auto it = std::lower_bound(cdf.begin(), cdf.end(), u,
                                       [](double c, double v) { return c <= v; });
      selected.push_back(static_cast<std::uint32_t>(
          std::min<std::size_t>(it - cdf.begin(), n - 1)));
    }
    return selected;
  }
  // Uniform without replacement: seeded partial Fisher-Yates.
  std::vector<std::uint32_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0u);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next_below(n - i));
    std::swap(pool[i], pool[j]);
    selected.push_back(pool[i]);
  }
  return selected;
}

std::vector<EpochAssignment> assign_stragglers(std::size_t k, double fraction,
                                               std::uint64_t max_epochs,
                                               RngStream& rng) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw ValidationError("straggler_fraction must be in [0, 1)");
  }
  if (max_epochs < 1) throw ValidationError("epochs must be >= 1");
  const auto straggler_count = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(k)));

  std::vector<std::uint32_t> slots(k);
  std::iota(slots.begin(), slots.end(), 0u);
  rng.shuffle(slots);

  std::vector<EpochAssignment> out(k, {max_epochs, false});
  for (std::size_t i = 0; i < straggler_count && i < k; ++i) {
    out[slots[i]].straggler = true;
  }
  // Epoch draws in ascending slot order, so consumption is order-independent
  // of the shuffle above.
  for (std::size_t slot = 0; slot < k; ++slot) {
    if (out[slot].straggler) {
      out[slot].epochs = 1 + rng.next_below(max_epochs);
    }
  }
  return out;
}

ParamVector aggregate(const std::vector<DeviceUpdate>& updates,
                      SamplingScheme scheme) {
  if (updates.empty()) {
    throw ValidationError("no updates to aggregate");
  }
  const std::size_t dim = updates.front().params.size();
  ParamVector out(dim);
  if (scheme == SamplingScheme::weighted_sample_simple_avg) {
    const double w = 1.0 / static_cast<double>(updates.size());
    for (const auto& u : updates) out.axpy(w, u.params);
  } else {
    double total = 0.0;
    for (const auto& u : updates) total += static_cast<double>(u.n_k);
    for (const auto& u : updates) {
      out.axpy(static_cast<double>(u.n_k) / total, u.params);
    }
  }
  if (!out.all_finite()) throw NumericError("non-finite aggregate");
  return out;
}

namespace {

struct SolveTask {
  std::uint32_t device_id = 0;
  std::uint64_t epochs = 0;
  ParamVector correction;  // empty when unused
  ParamVector result;
  SolverReport report;
};

void run_solves(std::vector<SolveTask>& tasks, const FederationConfig& cfg,
                double mu, const ModelSpec& spec,
                const FederatedDataset& dataset, const ParamVector& w,
                std::size_t round) {
  auto solve_one = [&](SolveTask& task) {
    SolverConfig scfg;
    scfg.epochs = task.epochs;
    scfg.learning_rate = cfg.learning_rate;
    scfg.batch_size = cfg.batch_size;
    scfg.mu = mu;
    scfg.rng = RngStream(cfg.master_seed, StreamPurpose::minibatch_order,
                         round, task.device_id);
    scfg.correction = task.correction.size() > 0 ? &task.correction : nullptr;
    auto [params, report] =
        solve_local(spec, dataset.shards[task.device_id], w, scfg);
    task.result = std::move(params);
    task.report = report;
  };

  const std::size_t workers = std::min(cfg.threads, tasks.size());
  if (workers <= 1) {
    for (auto& task : tasks) solve_one(task);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<std::size_t> next{0};
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&]() {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= tasks.size()) return;
        solve_one(tasks[i]);
      }
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

RoundOutcome run_round(const ParamVector& w, const FederationConfig& cfg,
                       double mu, const ModelSpec& spec,
                       const FederatedDataset& dataset, std::size_t round) {
  RoundOutcome outcome;
  RoundRecord& record = outcome.record;
  record.round = round;
  record.mu = mu;

  RngStream selection_rng(cfg.master_seed, StreamPurpose::device_selection,
                          round);
  const auto selected = sample_devices(cfg.sampling_scheme, dataset,
                                       cfg.devices_per_round, selection_rng);

  RngStream straggler_rng(cfg.master_seed, StreamPurpose::straggler_assignment,
                          round);
  const auto assignments = assign_stragglers(
      selected.size(), cfg.straggler_fraction, cfg.epochs, straggler_rng);

  // One solve per unique device; duplicates reuse the first slot's
  // assignment so "solved once, counted with multiplicity" holds.
  std::unordered_map<std::uint32_t, std::size_t> task_of_device;
  std::vector<SolveTask> tasks;
  std::vector<std::size_t> slot_task(selected.size());
  for (std::size_t slot = 0; slot < selected.size(); ++slot) {
    const std::uint32_t dev = selected[slot];
    auto [it, inserted] = task_of_device.try_emplace(dev, tasks.size());
    if (inserted) {
      SolveTask task;
      task.device_id = dev;
      task.epochs = assignments[slot].epochs;
      tasks.push_back(std::move(task));
    }
    slot_task[slot] = it->second;
  }

  if (cfg.algorithm == Algorithm::feddane) {
    // DANE-style correction: each device offsets its gradient by
    // grad F_k(w^t) - g_bar, with g_bar the n_k-weighted mean over either
    // the sampled devices or (optionally) the whole population.
    std::vector<std::uint32_t> grad_devices;
    if (cfg.feddane_full_grad) {
      grad_devices.resize(dataset.num_devices());
      std::iota(grad_devices.begin(), grad_devices.end(), 0u);
    } else {
      for (const auto& task : tasks) grad_devices.push_back(task.device_id);
    }
    std::unordered_map<std::uint32_t, ParamVector> local_grads;
    ParamVector mean_grad(spec.param_dim());
    double total_n = 0.0;
    for (std::uint32_t dev : grad_devices) {
      total_n += static_cast<double>(dataset.shards[dev].train_count());
    }
    for (std::uint32_t dev : grad_devices) {
      ParamVector g =
          local_gradient(spec, w, dataset.shards[dev].train_batch());
      mean_grad.axpy(
          static_cast<double>(dataset.shards[dev].train_count()) / total_n, g);
      local_grads.emplace(dev, std::move(g));
    }
    for (auto& task : tasks) {
      auto it = local_grads.find(task.device_id);
      ParamVector g = it != local_grads.end()
                          ? it->second
                          : local_gradient(spec, w,
                                           dataset.shards[task.device_id]
                                               .train_batch());
      g.axpy(-1.0, mean_grad);
      task.correction = std::move(g);
    }
  }

  run_solves(tasks, cfg, mu, spec, dataset, w, round);

  record.devices.resize(selected.size());
  std::vector<DeviceUpdate> received;
  double gamma_sum = 0.0;
  std::size_t gamma_count = 0;
  for (std::size_t slot = 0; slot < selected.size(); ++slot) {
    const SolveTask& task = tasks[slot_task[slot]];
    DeviceRoundInfo& info = record.devices[slot];
    info.device_id = selected[slot];
    info.epochs_assigned = task.epochs;
    info.straggler = assignments[slot].straggler;
    info.gamma = task.report.attained_gamma;
    info.diverged = task.report.diverged;

    const bool drop_straggler =
        cfg.algorithm == Algorithm::fedavg && info.straggler;
    info.dropped = info.diverged || drop_straggler;
    if (info.dropped) {
      record.dropped.push_back(info.device_id);
      continue;
    }
    received.push_back({info.device_id, task.result,
                        dataset.shards[info.device_id].train_count()});
    gamma_sum += info.gamma;
    ++gamma_count;
  }
  record.mean_gamma = gamma_count > 0
                          ? gamma_sum / static_cast<double>(gamma_count)
                          : std::numeric_limits<double>::quiet_NaN();

  if (received.empty()) {
    record.aborted = true;
    outcome.params = w;
    FEDSIM_LOG_INFO("round ", round, ": no updates received, keeping w");
    return outcome;
  }
  outcome.params = aggregate(received, cfg.sampling_scheme);
  return outcome;
}

ExperimentResult run_experiment(const FederationConfig& cfg,
                                const ModelSpec& spec,
                                const FederatedDataset& dataset,
                                double dissim_epsilon) {
  cfg.validate(dataset.num_devices());
  spec.validate();

  ExperimentResult result;
  ParamVector w = initial_params(spec, cfg.master_seed);

  MuController controller(cfg.adaptive_mu.mu0, cfg.adaptive_mu.step,
                          cfg.adaptive_mu.patience);
  double mu = cfg.adaptive_mu.enabled ? cfg.adaptive_mu.mu0 : cfg.mu;
  double prev_loss = cfg.adaptive_mu.enabled
                         ? global_loss(dataset, spec, w)
                         : 0.0;

  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    RoundOutcome outcome = run_round(w, cfg, mu, spec, dataset, t);
    w = std::move(outcome.params);

    if (!w.all_finite()) {
      outcome.record.aborted = true;
      result.records.push_back(std::move(outcome.record));
      result.aborted_nonfinite = true;
      FEDSIM_LOG_WARN("round ", t, ": global parameters non-finite, stopping");
      break;
    }

    const bool telemetry = cfg.adaptive_mu.enabled ||
                           (t % cfg.telemetry_every == 0) ||
                           (t + 1 == cfg.rounds);
    if (telemetry) {
      outcome.record.has_telemetry = true;
      // Overflowed-but-finite parameters can push the loss or the gradients
      // past the double range; record the telemetry as inf/NaN and let the
      // convergence detector flag the run instead of failing it.
      try {
        outcome.record.train_loss = global_loss(dataset, spec, w);
      } catch (const NumericError&) {
        outcome.record.train_loss = std::numeric_limits<double>::infinity();
      }
      outcome.record.test_accuracy = global_test_accuracy(dataset, spec, w);
      try {
        outcome.record.dissimilarity =
            dissimilarity(dataset, spec, w, dissim_epsilon);
      } catch (const NumericError&) {
        outcome.record.dissimilarity = DissimilarityReading{
            std::numeric_limits<double>::quiet_NaN(),
            std::numeric_limits<double>::quiet_NaN(),
            std::numeric_limits<double>::quiet_NaN(),
            std::numeric_limits<double>::quiet_NaN(), false, false};
      }
      result.loss_history.push_back(outcome.record.train_loss);
      if (cfg.adaptive_mu.enabled) {
        mu = controller.update(outcome.record.train_loss, prev_loss);
        prev_loss = outcome.record.train_loss;
      }
    }
    result.records.push_back(std::move(outcome.record));
  }

  result.final_params = std::move(w);
  result.final_mu = mu;
  result.final_status = result.loss_history.empty()
                            ? ConvergenceStatus::running
                            : detect_convergence(result.loss_history);
  return result;
}

}  // namespace fedsim

#include "fedsim/solver.hpp"

#include <cmath>
#include <numeric>

#include "fedsim/errors.hpp"
#include "fedsim/log.hpp"

namespace fedsim {

namespace {

constexpr double kStationaryThreshold = 1e-12;

// grad h(w) = grad F(w) - correction + mu (w - anchor), with grad F supplied.
ParamVector prox_grad_from(const ParamVector& grad_f, const ParamVector& w,
                           const ParamVector& anchor, double mu,
                           const ParamVector* correction) {
  ParamVector g = grad_f;
  if (correction != nullptr) g.axpy(-1.0, *correction);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] += mu * (w[i] - anchor[i]);
  }
  return g;
}

}  // namespace

void SolverConfig::validate() const {
  if (learning_rate <= 0.0) throw ValidationError("learning_rate must be > 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (mu < 0.0) throw ValidationError("mu must be >= 0");
}

ParamVector proximal_gradient(const ModelSpec& spec, const ParamVector& w,
                              const ParamVector& w_anchor, double mu,
                              const DeviceShard& shard) {
  if (w.size() != w_anchor.size()) {
    throw ValidationError("anchor dimension mismatch");
  }
  ParamVector g = local_gradient(spec, w, shard.train_batch());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] += mu * (w[i] - w_anchor[i]);
  }
  if (!g.all_finite()) throw NumericError("non-finite proximal gradient");
  return g;
}

double measure_inexactness(const GradientFn& grad_f,
                           const ParamVector& w_candidate,
                           const ParamVector& w_anchor, double mu,
                           const ParamVector* correction) {
  if (!w_candidate.all_finite()) {
    throw NumericError("non-finite candidate parameters");
  }
  const ParamVector at_anchor =
      prox_grad_from(grad_f(w_anchor), w_anchor, w_anchor, mu, correction);
  const double denom = at_anchor.norm();
  if (denom < kStationaryThreshold) {
    FEDSIM_LOG_DEBUG("inexactness: anchor stationary, reporting gamma = 0");
    return 0.0;
  }
  const ParamVector at_candidate = prox_grad_from(
      grad_f(w_candidate), w_candidate, w_anchor, mu, correction);
  return at_candidate.norm() / denom;
}

double measure_inexactness(const ModelSpec& spec, const DeviceShard& shard,
                           const ParamVector& w_candidate,
                           const ParamVector& w_anchor, double mu) {
  GradientFn grad = [&](const ParamVector& w) {
    return local_gradient(spec, w, shard.train_batch());
  };
  return measure_inexactness(grad, w_candidate, w_anchor, mu, nullptr);
}

std::pair<ParamVector, SolverReport> solve_local(const ModelSpec& spec,
                                                 const DeviceShard& shard,
                                                 const ParamVector& w_anchor,
                                                 SolverConfig cfg) {
  cfg.validate();
  if (shard.train_count() == 0) {
    throw ValidationError("shard has no training samples");
  }
  if (w_anchor.size() != spec.param_dim()) {
    throw ValidationError("anchor dimension mismatch");
  }

  SolverReport report;
  const Batch full_train = shard.train_batch();
  {
    const ParamVector g0 = prox_grad_from(
        local_gradient(spec, w_anchor, full_train), w_anchor, w_anchor,
        cfg.mu, cfg.correction);
    report.initial_prox_grad_norm = g0.norm();
  }

  ParamVector w = w_anchor;
  std::vector<std::uint32_t> order(shard.train_index);
  ParamVector step(w.size());
  for (std::uint64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    cfg.rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const Batch minibatch = shard.batch_of(
          std::span<const std::uint32_t>(order.data() + start, stop - start));
      std::fill(step.data(), step.data() + step.size(), 0.0);
      try {
        accumulate_gradient(spec, w, minibatch, 1.0, step);
      } catch (const NumericError&) {
        report.diverged = true;
      }
      if (!report.diverged) {
        if (cfg.correction != nullptr) step.axpy(-1.0, *cfg.correction);
        for (std::size_t i = 0; i < w.size(); ++i) {
          step[i] += cfg.mu * (w[i] - w_anchor[i]);
          w[i] -= cfg.learning_rate * step[i];
        }
        ++report.steps_run;
        if (!w.all_finite()) report.diverged = true;
      }
      if (report.diverged) {
        FEDSIM_LOG_WARN("device ", shard.device_id,
                        ": local solve diverged at step ", report.steps_run);
        return {w_anchor, report};
      }
    }
    ++report.epochs_run;
  }

  try {
    const ParamVector g_final = prox_grad_from(
        local_gradient(spec, w, full_train), w, w_anchor, cfg.mu,
        cfg.correction);
    report.final_prox_grad_norm = g_final.norm();
    report.final_local_loss = local_loss(spec, w, full_train);
  } catch (const NumericError&) {
    report.diverged = true;
    FEDSIM_LOG_WARN("device ", shard.device_id,
                    ": local objective overflowed after the solve");
    return {w_anchor, report};
  }
  if (report.initial_prox_grad_norm < kStationaryThreshold) {
    report.attained_gamma = 0.0;
    report.stationary_anchor = true;
    FEDSIM_LOG_DEBUG("device ", shard.device_id,
                     ": anchor stationary, gamma reported as 0");
  } else {
    report.attained_gamma =
        report.final_prox_grad_norm / report.initial_prox_grad_norm;
  }
  return {std::move(w), report};
}

}  // namespace fedsim

#include "fedsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <numbers>
#include <limits>

#include "fedsim/errors.hpp"
#include "fedsim/log.hpp"

namespace fedsim {

namespace {

constexpr double kExceptionTolerance = 1e-12;

std::vector<ParamVector> device_gradients(const FederatedDataset& dataset,
                                          const ModelSpec& spec,
                                          const ParamVector& w) {
  std::vector<ParamVector> grads;
  grads.reserve(dataset.shards.size());
  for (const auto& shard : dataset.shards) {
    grads.push_back(local_gradient(spec, w, shard.train_batch()));
  }
  return grads;
}

}  // namespace

double global_loss(const FederatedDataset& dataset, const ModelSpec& spec,
                   const ParamVector& w) {
  double f = 0.0;
  for (std::size_t k = 0; k < dataset.shards.size(); ++k) {
    f += dataset.weights[k] *
         local_loss(spec, w, dataset.shards[k].train_batch());
  }
  if (!std::isfinite(f)) throw NumericError("non-finite global loss");
  return f;
}

ParamVector global_gradient(const FederatedDataset& dataset,
                            const ModelSpec& spec, const ParamVector& w) {
  ParamVector g(spec.param_dim());
  for (std::size_t k = 0; k < dataset.shards.size(); ++k) {
    accumulate_gradient(spec, w, dataset.shards[k].train_batch(),
                        dataset.weights[k], g);
  }
  if (!g.all_finite()) throw NumericError("non-finite global gradient");
  return g;
}

double global_test_accuracy(const FederatedDataset& dataset,
                            const ModelSpec& spec, const ParamVector& w) {
  std::size_t total = 0;
  double correct = 0.0;
  for (const auto& shard : dataset.shards) {
    if (shard.test_index.empty()) continue;
    const Batch b = shard.test_batch();
    correct += accuracy(spec, w, b) * static_cast<double>(b.size());
    total += b.size();
  }
  if (total == 0) return std::numeric_limits<double>::quiet_NaN();
  return correct / static_cast<double>(total);
}

DissimilarityReading dissimilarity(const FederatedDataset& dataset,
                                   const ModelSpec& spec, const ParamVector& w,
                                   double epsilon) {
  const auto grads = device_gradients(dataset, spec, w);

  ParamVector global(spec.param_dim());
  for (std::size_t k = 0; k < grads.size(); ++k) {
    global.axpy(dataset.weights[k], grads[k]);
  }

  DissimilarityReading reading;
  reading.global_grad_norm_sq = global.squared_norm();
  for (std::size_t k = 0; k < grads.size(); ++k) {
    reading.expected_local_grad_norm_sq =
        reading.expected_local_grad_norm_sq +
        dataset.weights[k] * grads[k].squared_norm();
    ParamVector diff = grads[k] - global;
    reading.grad_variance += dataset.weights[k] * diff.squared_norm();
  }

  reading.below_epsilon = reading.global_grad_norm_sq <= epsilon;
  if (std::abs(reading.expected_local_grad_norm_sq -
               reading.global_grad_norm_sq) < kExceptionTolerance) {
    reading.exception_triggered = true;
    reading.B = 1.0;
  } else if (reading.global_grad_norm_sq == 0.0) {
    reading.B = std::numeric_limits<double>::infinity();
  } else {
    reading.B = std::sqrt(reading.expected_local_grad_norm_sq /
                          reading.global_grad_norm_sq);
  }
  return reading;
}

double bounded_variance_bound(double sigma_sq, double epsilon) {
  if (epsilon <= 0.0) throw ValidationError("epsilon must be > 0");
  if (sigma_sq < 0.0) throw ValidationError("sigma_sq must be >= 0");
  return std::sqrt(1.0 + sigma_sq / epsilon);
}

namespace {

// Most negative Hessian eigenvalue at w via power iteration on (c I - H),
// where c dominates lambda_max. Hv is taken by central differences.
double min_hessian_eigenvalue(const GradientFn& grad_fn, const ParamVector& w,
                              double shift, std::uint64_t probe_seed) {
  const std::size_t dim = w.size();
  RngStream rng(probe_seed, StreamPurpose::smoothness_probe);
  ParamVector v(dim);
  for (std::size_t i = 0; i < dim; ++i) v[i] = rng.next_normal(0.0, 1.0);
  v.scale(1.0 / v.norm());

  const double delta = 1e-4 * std::max(1.0, w.norm());
  auto hessian_vec = [&](const ParamVector& dir) {
    ParamVector up = w;
    up.axpy(delta, dir);
    ParamVector down = w;
    down.axpy(-delta, dir);
    ParamVector hv = grad_fn(up) - grad_fn(down);
    hv.scale(1.0 / (2.0 * delta));
    return hv;
  };

  double rayleigh = 0.0;
  for (int iter = 0; iter < 60; ++iter) {
    ParamVector hv = hessian_vec(v);
    rayleigh = v.dot(hv);
    // y = shift * v - H v
    ParamVector y = v;
    y.scale(shift);
    y.axpy(-1.0, hv);
    const double norm = y.norm();
    if (norm < 1e-14) break;  // H v == shift v: flat direction
    y.scale(1.0 / norm);
    v = std::move(y);
  }
  return rayleigh;
}

}  // namespace

SmoothnessEstimate estimate_smoothness(const GradientFn& grad_fn,
                                       std::span<const ParamVector> points,
                                       bool assume_convex,
                                       std::size_t curvature_points,
                                       std::uint64_t probe_seed) {
  if (points.size() < 2) {
    throw ValidationError("need at least 2 sample points");
  }
  std::vector<ParamVector> grads;
  grads.reserve(points.size());
  for (const auto& p : points) grads.push_back(grad_fn(p));

  SmoothnessEstimate est;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      ParamVector dw = points[i] - points[j];
      const double dist = dw.norm();
      if (dist < 1e-12) continue;  // degenerate pair
      ParamVector dg = grads[i] - grads[j];
      est.L = std::max(est.L, dg.norm() / dist);
    }
  }

  if (assume_convex) {
    est.L_minus = 0.0;
    return est;
  }
  const double shift = est.L + 1.0;
  double lambda_min = std::numeric_limits<double>::infinity();
  const std::size_t probes = std::min(curvature_points, points.size());
  for (std::size_t i = 0; i < probes; ++i) {
    lambda_min = std::min(
        lambda_min,
        min_hessian_eigenvalue(grad_fn, points[i], shift, probe_seed + i));
  }
  est.L_minus = std::max(0.0, -lambda_min);
  return est;
}

SmoothnessEstimate estimate_smoothness(const FederatedDataset& dataset,
                                       const ModelSpec& spec,
                                       std::span<const ParamVector> points) {
  GradientFn grad = [&](const ParamVector& w) {
    return global_gradient(dataset, spec, w);
  };
  return estimate_smoothness(grad, points,
                             spec.kind == ModelKind::logistic);
}

std::vector<ParamVector> sample_ball(const ParamVector& center, double radius,
                                     std::size_t count, RngStream& rng) {
  std::vector<ParamVector> points;
  points.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    ParamVector dir(center.size());
    for (std::size_t i = 0; i < dir.size(); ++i) {
      dir[i] = rng.next_normal(0.0, 1.0);
    }
    const double norm = dir.norm();
    const double r = radius * std::pow(rng.next_double(),
                                       1.0 / static_cast<double>(dir.size()));
    ParamVector p = center;
    if (norm > 0.0) p.axpy(r / norm, dir);
    points.push_back(std::move(p));
  }
  return points;
}

RhoReport rho_bound(const TheoryParams& p) {
  if (p.mu <= 0.0) throw ValidationError("mu must be > 0");
  if (p.mu_bar() <= 0.0) {
    throw ValidationError("mu_bar = mu - L_minus must be > 0");
  }
  if (p.K < 1.0) throw ValidationError("K must be >= 1");
  if (p.B < 0.0 || p.gamma < 0.0 || p.L < 0.0) {
    throw ValidationError("L, gamma, B must be >= 0");
  }

  const double mu = p.mu;
  const double mu_bar = p.mu_bar();
  const double one_plus_gamma = 1.0 + p.gamma;
  const double sqrt_k = std::sqrt(p.K);

  RhoReport report;
  report.rho = 1.0 / mu - p.gamma * p.B / mu -
               p.B * one_plus_gamma * std::numbers::sqrt2 / (mu_bar * sqrt_k) -
               p.L * p.B * one_plus_gamma / (mu_bar * mu) -
               p.L * one_plus_gamma * one_plus_gamma * p.B * p.B /
                   (2.0 * mu_bar * mu_bar) -
               p.L * p.B * p.B * one_plus_gamma * one_plus_gamma /
                   (mu_bar * mu_bar * p.K) *
                   (2.0 * std::sqrt(2.0 * p.K) + 2.0);
  report.gamma_B_lt_1 = p.gamma * p.B < 1.0;
  report.B_lt_sqrt_K = p.B / sqrt_k < 1.0;
  return report;
}

double iteration_estimate(const TheoryParams& p) {
  if (p.epsilon <= 0.0) throw ValidationError("epsilon must be > 0");
  const RhoReport r = rho_bound(p);
  if (r.rho <= 0.0) {
    throw ValidationError("rho is not positive; no iteration estimate");
  }
  return p.delta / (r.rho * p.epsilon);
}

std::string to_string(ConvergenceStatus status) {
  switch (status) {
    case ConvergenceStatus::running: return "running";
    case ConvergenceStatus::converged: return "converged";
    case ConvergenceStatus::diverged: return "diverged";
  }
  return "?";
}

ConvergenceStatus detect_convergence(std::span<const double> loss_history) {
  if (loss_history.empty()) {
    throw ValidationError("loss history must be non-empty");
  }
  const std::size_t n = loss_history.size();
  if (n >= 11 && loss_history[n - 1] - loss_history[n - 11] > 1.0) {
    return ConvergenceStatus::diverged;
  }
  if (n >= 2 && std::abs(loss_history[n - 1] - loss_history[n - 2]) < 1e-4) {
    return ConvergenceStatus::converged;
  }
  return ConvergenceStatus::running;
}

}  // namespace fedsim

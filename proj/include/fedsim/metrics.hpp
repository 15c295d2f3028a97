#pragma once

#include <span>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/model.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/solver.hpp"

namespace fedsim {

// Device-dissimilarity diagnostics at one point w. B is the raw ratio
// sqrt(E_k||grad F_k||^2 / ||grad f||^2); the exception value 1 is reported
// when the two agree to 1e-12 (a stationary point all local objectives share).
struct DissimilarityReading {
  double B = 1.0;
  double grad_variance = 0.0;            // sigma^2 = E_k||grad F_k - grad f||^2
  double global_grad_norm_sq = 0.0;      // ||grad f(w)||^2
  double expected_local_grad_norm_sq = 0.0;  // E_k||grad F_k(w)||^2
  bool exception_triggered = false;
  bool below_epsilon = false;            // ||grad f(w)||^2 <= epsilon
};

// Inputs to the sufficient-decrease constant. mu_bar = mu - L_minus must be
// positive.
struct TheoryParams {
  double L = 0.0;
  double L_minus = 0.0;  // 0 for convex losses
  double mu = 0.0;
  double gamma = 0.0;
  double B = 1.0;
  double K = 1.0;
  double epsilon = 0.0;
  double delta = 0.0;  // f(w0) - best observed loss

  double mu_bar() const { return mu - L_minus; }
};

struct RhoReport {
  double rho = 0.0;
  bool gamma_B_lt_1 = false;
  bool B_lt_sqrt_K = false;
};

// f(w) = sum_k p_k F_k(w) over training data.
double global_loss(const FederatedDataset& dataset, const ModelSpec& spec,
                   const ParamVector& w);

// grad f(w), the p_k-weighted mean of the device gradients.
ParamVector global_gradient(const FederatedDataset& dataset,
                            const ModelSpec& spec, const ParamVector& w);

// Pooled test accuracy over every device's held-out rows. Devices without
// test rows are skipped; returns NaN when no test rows exist at all.
double global_test_accuracy(const FederatedDataset& dataset,
                            const ModelSpec& spec, const ParamVector& w);

DissimilarityReading dissimilarity(const FederatedDataset& dataset,
                                   const ModelSpec& spec, const ParamVector& w,
                                   double epsilon);

// sqrt(1 + sigma^2 / epsilon): the dissimilarity cap implied by a bounded
// gradient-variance assumption.
double bounded_variance_bound(double sigma_sq, double epsilon);

struct SmoothnessEstimate {
  double L = 0.0;
  double L_minus = 0.0;
};

// L: max over sampled point pairs of ||grad(u) - grad(v)|| / ||u - v||.
// L_minus: 0 when assume_convex; otherwise the most negative Hessian
// eigenvalue (estimated by power iteration on a shifted Hessian, with
// Hessian-vector products taken by central differences of grad_fn), maxed
// over the first curvature_points sample points and floored at 0.
SmoothnessEstimate estimate_smoothness(const GradientFn& grad_fn,
                                       std::span<const ParamVector> points,
                                       bool assume_convex,
                                       std::size_t curvature_points = 5,
                                       std::uint64_t probe_seed = 0);

SmoothnessEstimate estimate_smoothness(const FederatedDataset& dataset,
                                       const ModelSpec& spec,
                                       std::span<const ParamVector> points);

// Uniform-in-direction Gaussian points within a ball around the center,
// for feeding estimate_smoothness.
std::vector<ParamVector> sample_ball(const ParamVector& center, double radius,
                                     std::size_t count, RngStream& rng);

// The expected-decrease coefficient. May be <= 0; callers check positivity.
// Throws ValidationError when mu_bar <= 0, mu <= 0, or K < 1.
RhoReport rho_bound(const TheoryParams& p);

// delta / (rho * epsilon), an order-of-magnitude round-count estimate.
// Requires rho_bound(p).rho > 0 and epsilon > 0.
double iteration_estimate(const TheoryParams& p);

enum class ConvergenceStatus { running, converged, diverged };

std::string to_string(ConvergenceStatus status);

// Divergence (f_t - f_{t-10} > 1, needs >= 11 entries) is checked before
// convergence (|f_t - f_{t-1}| < 1e-4).
ConvergenceStatus detect_convergence(std::span<const double> loss_history);

}  // namespace fedsim

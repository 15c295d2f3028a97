#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "fedsim/dataset.hpp"
#include "fedsim/model.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// Local subproblem around anchor w_t:
//   h(w) = F(w) - <correction, w - w_t> + (mu/2) ||w - w_t||^2
// FedProx uses correction = 0; the DANE-style variant passes its gradient
// correction term through `correction`.
struct SolverConfig {
  std::uint64_t epochs = 1;  // 0 is a test hook: no steps, output = anchor
  double learning_rate = 0.01;
  std::size_t batch_size = 10;
  double mu = 0.0;
  RngStream rng{0, StreamPurpose::minibatch_order};
  const ParamVector* correction = nullptr;

  void validate() const;
};

struct SolverReport {
  std::uint64_t epochs_run = 0;
  std::uint64_t steps_run = 0;
  double final_local_loss = 0.0;
  double attained_gamma = 0.0;
  double initial_prox_grad_norm = 0.0;
  double final_prox_grad_norm = 0.0;
  bool diverged = false;
  // Anchor already stationary for the subproblem; gamma reported as 0.
  bool stationary_anchor = false;
};

// Full-training-set gradient of the proximal objective at w:
// grad F_k(w) + mu (w - w_anchor).
ParamVector proximal_gradient(const ModelSpec& spec, const ParamVector& w,
                              const ParamVector& w_anchor, double mu,
                              const DeviceShard& shard);

// Mini-batch SGD on h_k starting from the anchor. Shuffles the sample order
// each epoch from cfg.rng; the final partial batch is used. The attained
// gamma is measured on the full local training set. A non-finite iterate
// aborts the solve: the anchor is returned with report.diverged set.
std::pair<ParamVector, SolverReport> solve_local(const ModelSpec& spec,
                                                 const DeviceShard& shard,
                                                 const ParamVector& w_anchor,
                                                 SolverConfig cfg);

// gamma-inexactness of the candidate for the subproblem anchored at
// w_anchor:  ||grad h(w_candidate)|| / ||grad h(w_anchor)||.
// Returns 0 when the anchor is already stationary (denominator under 1e-12).
double measure_inexactness(const ModelSpec& spec, const DeviceShard& shard,
                           const ParamVector& w_candidate,
                           const ParamVector& w_anchor, double mu);

// Generic form over any exact gradient oracle for F.
using GradientFn = std::function<ParamVector(const ParamVector&)>;
double measure_inexactness(const GradientFn& grad_f,
                           const ParamVector& w_candidate,
                           const ParamVector& w_anchor, double mu,
                           const ParamVector* correction = nullptr);

}  // namespace fedsim

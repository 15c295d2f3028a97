#include <doctest.h>

#include <cmath>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/metrics.hpp"
#include "test_util.hpp"

using namespace fedsim;

namespace {

const ModelSpec kModel{ModelKind::logistic, 60, 10, 0};

FederatedDataset synth(double alpha, double beta, std::uint64_t seed,
                       std::size_t devices = 20, std::uint32_t min_n = 10,
                       std::uint32_t max_n = 60, bool iid = false) {
  SyntheticSpec spec;
  spec.alpha = alpha;
  spec.beta = beta;
  spec.iid = iid;
  spec.num_devices = devices;
  spec.min_samples = min_n;
  spec.max_samples = max_n;
  spec.seed = seed;
  return split_train_test(generate_synthetic(spec), 0.8, seed);
}

FederatedDataset identical_shards(std::size_t copies) {
  const auto shard = testutil::random_shard(0, 16, 6, 3, 404);
  std::vector<DeviceShard> shards;
  for (std::uint32_t k = 0; k < copies; ++k) {
    DeviceShard copy = shard;
    copy.device_id = k;
    shards.push_back(std::move(copy));
  }
  return testutil::dataset_of(std::move(shards), 6, 3);
}

}  // namespace

TEST_CASE("global loss of identical shards equals the local loss") {
  const FederatedDataset ds = identical_shards(4);
  const ModelSpec model{ModelKind::logistic, 6, 3, 0};
  const ParamVector w = testutil::random_params(model.param_dim(), 1);
  const double local = local_loss(model, w, ds.shards[0].train_batch());
  CHECK(global_loss(ds, model, w) == doctest::Approx(local).epsilon(1e-12));
}

TEST_CASE("global loss at zero is ln(num_classes)") {
  const FederatedDataset ds = synth(1.0, 1.0, 2);
  CHECK(global_loss(ds, kModel, zero_params(kModel)) ==
        doctest::Approx(2.302585092994045684).epsilon(1e-12));
}

TEST_CASE("global loss is the p_k-weighted sum of local losses") {
  std::vector<DeviceShard> shards;
  shards.push_back(testutil::random_shard(0, 2, 5, 3, 5));
  shards.push_back(testutil::random_shard(1, 3, 5, 3, 6));
  shards.push_back(testutil::random_shard(2, 5, 5, 3, 7));
  const FederatedDataset ds = testutil::dataset_of(std::move(shards), 5, 3);
  const ModelSpec model{ModelKind::logistic, 5, 3, 0};
  const ParamVector w = testutil::random_params(model.param_dim(), 8);
  const double by_hand =
      0.2 * local_loss(model, w, ds.shards[0].train_batch()) +
      0.3 * local_loss(model, w, ds.shards[1].train_batch()) +
      0.5 * local_loss(model, w, ds.shards[2].train_batch());
  CHECK(global_loss(ds, model, w) ==
        doctest::Approx(by_hand).epsilon(1e-15));
}

TEST_CASE("identical shards trigger the dissimilarity exception with B = 1") {
  const FederatedDataset ds = identical_shards(4);
  const ModelSpec model{ModelKind::logistic, 6, 3, 0};
  const ParamVector w = testutil::random_params(model.param_dim(), 9);
  const DissimilarityReading r = dissimilarity(ds, model, w, 1e-10);
  CHECK(r.B == 1.0);
  CHECK(r.exception_triggered);
  CHECK(r.grad_variance < 1e-25);
}

TEST_CASE("variance decomposition holds and B stays above 1") {
  RngStream seeds(10, StreamPurpose::testing);
  for (int trial = 0; trial < 50; ++trial) {
    const double alpha = seeds.next_double() * 2.0;
    const double beta = seeds.next_double() * 2.0;
    const FederatedDataset ds =
        synth(alpha, beta, 1000 + trial, 8, 10, 30);
    const ParamVector w =
        testutil::random_params(kModel.param_dim(), 2000 + trial, 0.3);
    const DissimilarityReading r = dissimilarity(ds, kModel, w, 1e-10);

    const double lhs = r.expected_local_grad_norm_sq;
    const double rhs = r.global_grad_norm_sq + r.grad_variance;
    CHECK(std::abs(lhs - rhs) <= 1e-9 * std::max(1.0, std::abs(lhs)));
    if (!r.exception_triggered) {
      CHECK(r.B >= 1.0 - 1e-9);
    }
    // Bounded-variance cap, evaluated where the gradient clears epsilon.
    const double epsilon = r.global_grad_norm_sq / 2.0;
    if (epsilon > 0.0 && r.global_grad_norm_sq > epsilon) {
      CHECK(r.B <= bounded_variance_bound(r.grad_variance, epsilon) + 1e-9);
    }
  }
}

// The raw B ratio at a fixed point is not monotone in (alpha, beta): the
// global gradient norm grows alongside the per-device spread. The gradient
// variance is the monotone signal, and it is what the training-time
// comparisons track.
TEST_CASE("heterogeneous generators raise the gradient variance at origin") {
  const FederatedDataset hetero = synth(1.0, 1.0, 7, 30);
  const FederatedDataset homo = synth(0.0, 0.0, 7, 30);
  const ParamVector w0 = zero_params(kModel);
  const auto r_hetero = dissimilarity(hetero, kModel, w0, 1e-10);
  const auto r_homo = dissimilarity(homo, kModel, w0, 1e-10);
  CHECK(r_hetero.grad_variance > r_homo.grad_variance);
  CHECK(r_hetero.B >= 1.0 - 1e-9);
  CHECK(r_homo.B >= 1.0 - 1e-9);
}

TEST_CASE("bounded variance bound covers the spec examples") {
  CHECK(bounded_variance_bound(0.0, 0.5) == 1.0);
  CHECK(bounded_variance_bound(3.0, 1.0) == doctest::Approx(2.0));
  CHECK_THROWS_AS(bounded_variance_bound(1.0, 0.0), ValidationError);
  CHECK_THROWS_AS(bounded_variance_bound(1.0, -1.0), ValidationError);
}

TEST_CASE("larger per-device samples pull B toward 1 on IID data") {
  const ParamVector w = testutil::random_params(kModel.param_dim(), 11, 0.2);
  const FederatedDataset small = synth(0, 0, 5, 12, 20, 20, /*iid=*/true);
  const FederatedDataset large = synth(0, 0, 5, 12, 200, 200, /*iid=*/true);
  double mean_small = 0.0, mean_large = 0.0;
  RngStream rng(12, StreamPurpose::testing);
  for (int i = 0; i < 20; ++i) {
    const ParamVector probe =
        testutil::random_params(kModel.param_dim(), 3000 + i, 0.2);
    mean_small += dissimilarity(small, kModel, probe, 1e-10).B / 20.0;
    mean_large += dissimilarity(large, kModel, probe, 1e-10).B / 20.0;
  }
  CHECK(mean_large < mean_small);
  CHECK(mean_large >= 1.0 - 1e-9);
}

TEST_CASE("smoothness estimates are exact for quadratics") {
  // grad q(v) = 2.5 v: L = 2.5, and the Hessian floor is 0.
  GradientFn grad = [](const ParamVector& v) {
    ParamVector g = v;
    g.scale(2.5);
    return g;
  };
  RngStream rng(13, StreamPurpose::testing);
  const auto points = sample_ball(ParamVector(6), 1.0, 10, rng);
  const SmoothnessEstimate est =
      estimate_smoothness(grad, points, /*assume_convex=*/false);
  CHECK(est.L == doctest::Approx(2.5).epsilon(1e-9));
  CHECK(est.L_minus == 0.0);
}

TEST_CASE("logistic smoothness reports zero negative curvature") {
  const FederatedDataset ds = synth(0.5, 0.5, 14, 6, 10, 20);
  RngStream rng(15, StreamPurpose::testing);
  const auto points = sample_ball(zero_params(kModel), 1.0, 6, rng);
  const SmoothnessEstimate est = estimate_smoothness(ds, kModel, points);
  CHECK(est.L > 0.0);
  CHECK(est.L_minus == 0.0);
}

TEST_CASE("a concave quadratic reveals its negative curvature") {
  const double c = 1.7;
  GradientFn grad = [c](const ParamVector& v) {
    ParamVector g = v;
    g.scale(-c);
    return g;
  };
  RngStream rng(16, StreamPurpose::testing);
  const auto points = sample_ball(ParamVector(1), 0.5, 5, rng);
  const SmoothnessEstimate est =
      estimate_smoothness(grad, points, /*assume_convex=*/false);
  CHECK(est.L == doctest::Approx(c).epsilon(1e-9));
  CHECK(est.L_minus == doctest::Approx(c).epsilon(0.05));
}

TEST_CASE("rho approaches 1/mu when every penalty vanishes") {
  TheoryParams p;
  p.L = 1e-9;
  p.L_minus = 0.0;
  p.mu = 1.0;
  p.gamma = 0.0;
  p.B = 1.0;
  p.K = 1e6;
  const RhoReport r = rho_bound(p);
  CHECK(std::abs(r.rho - 1.0) < 2e-3);
  CHECK(r.gamma_B_lt_1);
  CHECK(r.B_lt_sqrt_K);
}

TEST_CASE("gamma B at or above 1 fails the positivity conditions") {
  TheoryParams p;
  p.L = 1.0;
  p.mu = 10.0;
  p.gamma = 0.6;
  p.B = 2.0;
  p.K = 64;
  const RhoReport r = rho_bound(p);
  CHECK_FALSE(r.gamma_B_lt_1);
  // The first two terms alone are already non-positive.
  CHECK((1.0 - p.gamma * p.B) / p.mu <= 0.0);
  CHECK(r.rho < (1.0 - p.gamma * p.B) / p.mu + 1e-15);
}

TEST_CASE("the convex-case fixture lands inside the expected bracket") {
  TheoryParams p;
  p.L = 1.0;
  p.L_minus = 0.0;
  p.gamma = 0.0;
  p.B = 2.0;
  p.K = 64;
  p.mu = 6.0 * p.L * p.B * p.B;  // 24
  const RhoReport r = rho_bound(p);

  // Independent evaluation of the same expression in long double.
  const long double mu = 24.0L, B = 2.0L, K = 64.0L, L = 1.0L;
  const long double expected =
      1.0L / mu - 0.0L - B * sqrtl(2.0L) / (mu * sqrtl(K)) -
      L * B / (mu * mu) - L * B * B / (2.0L * mu * mu) -
      (L * B * B / (mu * mu * K)) * (2.0L * sqrtl(2.0L * K) + 2.0L);
  CHECK(r.rho == doctest::Approx(static_cast<double>(expected)).epsilon(1e-12));

  const double lo = 1.0 / (48.0 * p.L * p.B * p.B);
  const double hi = 1.0 / (12.0 * p.L * p.B * p.B);
  CHECK(r.rho >= lo);
  CHECK(r.rho <= hi);
  CHECK(r.gamma_B_lt_1);
  CHECK(r.B_lt_sqrt_K);
}

TEST_CASE("rho rejects a non-positive mu_bar") {
  TheoryParams p;
  p.L = 1.0;
  p.L_minus = 2.0;
  p.mu = 1.5;
  CHECK_THROWS_AS(rho_bound(p), ValidationError);
}

TEST_CASE("iteration estimates scale linearly in delta and 1/epsilon") {
  TheoryParams p;
  p.L = 1.0;
  p.mu = 24.0;
  p.B = 2.0;
  p.K = 64;
  p.gamma = 0.0;
  p.epsilon = 0.01;
  p.delta = 2.0;
  const double base = iteration_estimate(p);
  CHECK(base == doctest::Approx(p.delta / (rho_bound(p).rho * p.epsilon)));

  TheoryParams half_delta = p;
  half_delta.delta = 1.0;
  CHECK(iteration_estimate(half_delta) == doctest::Approx(base / 2.0));

  TheoryParams half_eps = p;
  half_eps.epsilon = 0.005;
  CHECK(iteration_estimate(half_eps) == doctest::Approx(base * 2.0));

  TheoryParams bad = p;
  bad.gamma = 10.0;  // drives rho negative
  CHECK_THROWS_AS(iteration_estimate(bad), ValidationError);
}

TEST_CASE("convergence detection follows the thresholds") {
  std::vector<double> constant{1.0, 1.0};
  CHECK(detect_convergence(constant) == ConvergenceStatus::converged);

  std::vector<double> rising;
  for (int i = 0; i < 11; ++i) rising.push_back(0.2 * i);
  CHECK(detect_convergence(rising) == ConvergenceStatus::diverged);

  std::vector<double> falling;
  for (int i = 0; i < 20; ++i) falling.push_back(1.0 - 0.01 * i);
  CHECK(detect_convergence(falling) == ConvergenceStatus::running);

  // Divergence wins even when the last step is flat.
  std::vector<double> jumped{0.0, 2.0, 2.0, 2.0, 2.0, 2.0,
                             2.0, 2.0, 2.0, 2.0, 2.0};
  CHECK(detect_convergence(jumped) == ConvergenceStatus::diverged);

  CHECK_THROWS_AS(detect_convergence(std::vector<double>{}), ValidationError);
  CHECK(detect_convergence(std::vector<double>{5.0}) ==
        ConvergenceStatus::running);
}

TEST_CASE("a proximal weight of 1 does not increase round-averaged variance") {
  // Needs shards large enough for 20 local epochs to cause real drift.
  const FederatedDataset ds = synth(1.0, 1.0, 17, 30, 50, 2000);
  FederationConfig cfg;
  cfg.algorithm = Algorithm::fedprox;
  cfg.devices_per_round = 10;
  cfg.rounds = 100;
  cfg.epochs = 20;
  cfg.learning_rate = 0.01;
  cfg.batch_size = 10;
  cfg.master_seed = 18;

  auto mean_variance = [&](double mu) {
    FederationConfig c = cfg;
    c.mu = mu;
    const ExperimentResult result = run_experiment(c, kModel, ds);
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& rec : result.records) {
      if (rec.has_telemetry && rec.dissimilarity.has_value()) {
        total += rec.dissimilarity->grad_variance;
        ++count;
      }
    }
    return total / static_cast<double>(count);
  };
  CHECK(mean_variance(1.0) <= mean_variance(0.0));
}

TEST_CASE("global test accuracy pools device test rows") {
  const FederatedDataset ds = synth(0.5, 0.5, 19, 10, 20, 40);
  const double acc = global_test_accuracy(ds, kModel, zero_params(kModel));
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
}

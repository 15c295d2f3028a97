#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedsim/rng.hpp"

namespace fedsim {

enum class ModelKind { logistic, mlp };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

// Dimensions of a differentiable classifier plus the flat parameter layout.
// logistic: [W (classes x input, row-major) | b (classes)]
// mlp:      [W1 (hidden x input) | b1 (hidden) | W2 (classes x hidden) | b2]
// The mlp has one tanh hidden layer.
struct ModelSpec {
  ModelKind kind = ModelKind::logistic;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::size_t hidden_dim = 0;  // mlp only

  std::size_t param_dim() const;
  void validate() const;
};

// Flat parameter vector. All entries are expected to stay finite; NaN/Inf is
// detected by callers via all_finite() and treated as a first-class error.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t dim) : values_(dim, 0.0) {}
  explicit ParamVector(std::vector<double> values)
      : values_(std::move(values)) {}

  std::size_t size() const { return values_.size(); }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }

  bool all_finite() const;

  // this += a * x
  void axpy(double a, const ParamVector& x);
  void scale(double a);
  double dot(const ParamVector& other) const;
  double squared_norm() const;
  double norm() const;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

ParamVector operator-(const ParamVector& a, const ParamVector& b);

// A view over rows of one shard's feature matrix. `rows` indexes into the
// row-major feature storage and the parallel label array.
struct Batch {
  const double* features = nullptr;
  std::size_t cols = 0;
  const std::uint32_t* labels = nullptr;
  std::span<const std::uint32_t> rows;

  std::size_t size() const { return rows.size(); }
  const double* row(std::size_t i) const {
    return features + static_cast<std::size_t>(rows[i]) * cols;
  }
  std::uint32_t label(std::size_t i) const { return labels[rows[i]]; }
};

// Shift-stable softmax: entries positive, summing to 1 within 1e-12.
// Throws NumericError on non-finite input.
std::vector<double> softmax(std::span<const double> logits);

// Mean cross-entropy over the batch, -(1/|batch|) sum log softmax(z)[y].
double local_loss(const ModelSpec& spec, const ParamVector& w,
                  const Batch& batch);

// Exact analytic gradient of local_loss.
ParamVector local_gradient(const ModelSpec& spec, const ParamVector& w,
                           const Batch& batch);

// Adds the gradient of local_loss, scaled by `weight`, into `out`.
void accumulate_gradient(const ModelSpec& spec, const ParamVector& w,
                         const Batch& batch, double weight, ParamVector& out);

// Fraction of rows whose argmax prediction equals the label; argmax ties go
// to the lowest class index.
double accuracy(const ModelSpec& spec, const ParamVector& w,
                const Batch& batch);

// Central-difference gradient, used as a verification oracle.
ParamVector finite_difference_gradient(const ModelSpec& spec,
                                       const ParamVector& w,
                                       const Batch& batch, double h);

// Zero everywhere; the default starting point for logistic models.
ParamVector zero_params(const ModelSpec& spec);

// Gaussian init with per-entry variance 1/input_dim; required for the mlp,
// whose hidden layers receive zero gradient at the all-zero point.
ParamVector random_init_params(const ModelSpec& spec, std::uint64_t seed);

ParamVector initial_params(const ModelSpec& spec, std::uint64_t seed);

}  // namespace fedsim

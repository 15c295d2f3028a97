#include "fedsim/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstring>

#include "fedsim/errors.hpp"

namespace fedsim {

std::string to_string(ModelKind kind) {
  return kind == ModelKind::logistic ? "logistic" : "mlp";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "logistic") return ModelKind::logistic;
  if (name == "mlp") return ModelKind::mlp;
  throw ValidationError("unknown model kind: " + name);
}

std::size_t ModelSpec::param_dim() const {
  if (kind == ModelKind::logistic) {
    return num_classes * input_dim + num_classes;
  }
  return hidden_dim * input_dim + hidden_dim + num_classes * hidden_dim +
         num_classes;
}

void ModelSpec::validate() const {
  if (input_dim == 0 || num_classes == 0) {
    throw ValidationError("model dimensions must be positive");
  }
  if (kind == ModelKind::mlp && hidden_dim == 0) {
    throw ValidationError("mlp requires hidden_dim > 0");
  }
}

bool ParamVector::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void ParamVector::axpy(double a, const ParamVector& x) {
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += a * x[i];
}

void ParamVector::scale(double a) {
  for (double& v : values_) v *= a;
}

double ParamVector::dot(const ParamVector& other) const {
  double s = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) s += values_[i] * other[i];
  return s;
}

double ParamVector::squared_norm() const { return dot(*this); }

double ParamVector::norm() const { return std::sqrt(squared_norm()); }

ParamVector operator-(const ParamVector& a, const ParamVector& b) {
  ParamVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  double max_logit = -std::numeric_limits<double>::infinity();
  for (double z : logits) {
    if (!std::isfinite(z)) throw NumericError("softmax: non-finite logit");
    max_logit = std::max(max_logit, z);
  }
  std::vector<double> probs(logits.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - max_logit);
    denom += probs[i];
  }
  for (double& p : probs) p /= denom;
  return probs;
}

namespace {

void check_batch(const ModelSpec& spec, const ParamVector& w,
                 const Batch& batch) {
  if (batch.size() == 0) throw ValidationError("empty batch");
  if (batch.cols != spec.input_dim) {
    throw ValidationError("batch feature width does not match model");
  }
  if (w.size() != spec.param_dim()) {
    throw ValidationError("parameter vector length does not match model");
  }
  if (!w.all_finite()) throw NumericError("non-finite model parameters");
}

// logits = W x + b over one layer stored as [W (rows x cols) | bias (rows)].
void affine(const double* block, std::size_t rows, std::size_t cols,
            const double* x, double* out) {
  const double* bias = block + rows * cols;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = block + r * cols;
    double acc = bias[r];
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    out[r] = acc;
  }
}

// log-sum-exp with the max shifted out; also writes softmax probs.
double logsumexp_probs(std::span<const double> z, std::vector<double>& probs) {
  double m = *std::max_element(z.begin(), z.end());
  double denom = 0.0;
  probs.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    probs[i] = std::exp(z[i] - m);
    denom += probs[i];
  }
  for (double& p : probs) p /= denom;
  return m + std::log(denom);
}

struct MlpOffsets {
  std::size_t w1 = 0, b1, w2, b2;
  explicit MlpOffsets(const ModelSpec& s) {
    b1 = s.hidden_dim * s.input_dim;
    w2 = b1 + s.hidden_dim;
    b2 = w2 + s.num_classes * s.hidden_dim;
  }
};

void forward_logits(const ModelSpec& spec, const ParamVector& w,
                    const double* x, std::vector<double>& logits,
                    std::vector<double>* hidden) {
  logits.resize(spec.num_classes);
  if (spec.kind == ModelKind::logistic) {
    affine(w.data(), spec.num_classes, spec.input_dim, x, logits.data());
    return;
  }
  MlpOffsets off(spec);
  std::vector<double> h(spec.hidden_dim);
  affine(w.data(), spec.hidden_dim, spec.input_dim, x, h.data());
  for (double& v : h) v = std::tanh(v);
  affine(w.data() + off.w2, spec.num_classes, spec.hidden_dim, h.data(),
         logits.data());
  if (hidden != nullptr) *hidden = std::move(h);
}

}  // namespace

double local_loss(const ModelSpec& spec, const ParamVector& w,
                  const Batch& batch) {
  check_batch(spec, w, batch);
  std::vector<double> logits, probs;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::uint32_t y = batch.label(i);
    if (y >= spec.num_classes) throw ValidationError("label out of range");
    forward_logits(spec, w, batch.row(i), logits, nullptr);
    double lse = logsumexp_probs(logits, probs);
    total += lse - logits[y];
  }
  double loss = total / static_cast<double>(batch.size());
  if (!std::isfinite(loss)) throw NumericError("non-finite loss");
  return loss;
}

void accumulate_gradient(const ModelSpec& spec, const ParamVector& w,
                         const Batch& batch, double weight, ParamVector& out) {
  check_batch(spec, w, batch);
  if (out.size() != spec.param_dim()) {
    throw ValidationError("gradient accumulator has wrong length");
  }
  const double scale = weight / static_cast<double>(batch.size());
  std::vector<double> logits, probs, hidden;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::uint32_t y = batch.label(i);
    if (y >= spec.num_classes) throw ValidationError("label out of range");
    const double* x = batch.row(i);
    forward_logits(spec, w, x, logits, &hidden);
    logsumexp_probs(logits, probs);
    probs[y] -= 1.0;  // dz = softmax(z) - onehot(y)

    if (spec.kind == ModelKind::logistic) {
      double* dW = out.data();
      double* db = out.data() + spec.num_classes * spec.input_dim;
      for (std::size_t r = 0; r < spec.num_classes; ++r) {
        const double g = probs[r] * scale;
        double* row = dW + r * spec.input_dim;
        for (std::size_t c = 0; c < spec.input_dim; ++c) row[c] += g * x[c];
        db[r] += g;
      }
      continue;
    }

    MlpOffsets off(spec);
    const double* w2 = w.data() + off.w2;
    double* dW1 = out.data();
    double* db1 = out.data() + off.b1;
    double* dW2 = out.data() + off.w2;
    double* db2 = out.data() + off.b2;
    for (std::size_t r = 0; r < spec.num_classes; ++r) {
      const double g = probs[r] * scale;
      double* row = dW2 + r * spec.hidden_dim;
      for (std::size_t c = 0; c < spec.hidden_dim; ++c) {
        row[c] += g * hidden[c];
      }
      db2[r] += g;
    }
    for (std::size_t c = 0; c < spec.hidden_dim; ++c) {
      double dh = 0.0;
      for (std::size_t r = 0; r < spec.num_classes; ++r) {
        dh += w2[r * spec.hidden_dim + c] * probs[r];
      }
      const double dpre = dh * (1.0 - hidden[c] * hidden[c]) * scale;
      double* row = dW1 + c * spec.input_dim;
      for (std::size_t k = 0; k < spec.input_dim; ++k) row[k] += dpre * x[k];
      db1[c] += dpre;
    }
  }
}

ParamVector local_gradient(const ModelSpec& spec, const ParamVector& w,
                           const Batch& batch) {
  ParamVector grad(spec.param_dim());
  accumulate_gradient(spec, w, batch, 1.0, grad);
  if (!grad.all_finite()) throw NumericError("non-finite gradient");
  return grad;
}

double accuracy(const ModelSpec& spec, const ParamVector& w,
                const Batch& batch) {
  check_batch(spec, w, batch);
  std::vector<double> logits;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    forward_logits(spec, w, batch.row(i), logits, nullptr);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c) {
      if (logits[c] > logits[best]) best = c;
    }
    if (best == batch.label(i)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(batch.size());
}

ParamVector finite_difference_gradient(const ModelSpec& spec,
                                       const ParamVector& w,
                                       const Batch& batch, double h) {
  if (h <= 0.0) throw ValidationError("finite-difference step must be > 0");
  ParamVector probe = w;
  ParamVector grad(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = local_loss(spec, probe, batch);
    probe[i] = orig - h;
    const double down = local_loss(spec, probe, batch);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

ParamVector zero_params(const ModelSpec& spec) {
  return ParamVector(spec.param_dim());
}

ParamVector random_init_params(const ModelSpec& spec, std::uint64_t seed) {
  RngStream rng(seed, StreamPurpose::param_init);
  ParamVector w(spec.param_dim());
  const double stddev = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = rng.next_normal(0.0, stddev);
  }
  return w;
}

ParamVector initial_params(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.kind == ModelKind::logistic) return zero_params(spec);
  return random_init_params(spec, seed);
}

}  // namespace fedsim

#pragma once

// Shared fixtures and independent oracles for the test suites. The oracles
// here deliberately re-derive quantities from their definitions (naive loops,
// long double accumulation) rather than calling the library code they check.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/model.hpp"
#include "fedsim/rng.hpp"

namespace testutil {

// Naive multinomial-logistic loss: per-sample log-sum-exp in long double.
inline double naive_logistic_loss(const std::vector<double>& w,
                                  std::size_t input_dim,
                                  std::size_t num_classes,
                                  const std::vector<double>& features,
                                  const std::vector<std::uint32_t>& labels) {
  const std::size_t n = labels.size();
  long double total = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = features.data() + i * input_dim;
    std::vector<long double> z(num_classes);
    long double zmax = -1e300L;
    for (std::size_t r = 0; r < num_classes; ++r) {
      long double acc = w[num_classes * input_dim + r];
      for (std::size_t c = 0; c < input_dim; ++c) {
        acc += static_cast<long double>(w[r * input_dim + c]) * x[c];
      }
      z[r] = acc;
      if (acc > zmax) zmax = acc;
    }
    long double denom = 0.0L;
    for (std::size_t r = 0; r < num_classes; ++r) {
      denom += expl(z[r] - zmax);
    }
    total += (zmax + logl(denom)) - z[labels[i]];
  }
  return static_cast<double>(total / static_cast<long double>(n));
}

// Naive analytic gradient of the loss above.
inline std::vector<double> naive_logistic_gradient(
    const std::vector<double>& w, std::size_t input_dim,
    std::size_t num_classes, const std::vector<double>& features,
    const std::vector<std::uint32_t>& labels) {
  const std::size_t n = labels.size();
  std::vector<long double> grad(w.size(), 0.0L);
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = features.data() + i * input_dim;
    std::vector<long double> z(num_classes);
    long double zmax = -1e300L;
    for (std::size_t r = 0; r < num_classes; ++r) {
      long double acc = w[num_classes * input_dim + r];
      for (std::size_t c = 0; c < input_dim; ++c) {
        acc += static_cast<long double>(w[r * input_dim + c]) * x[c];
      }
      z[r] = acc;
      if (acc > zmax) zmax = acc;
    }
    long double denom = 0.0L;
    for (std::size_t r = 0; r < num_classes; ++r) denom += expl(z[r] - zmax);
    for (std::size_t r = 0; r < num_classes; ++r) {
      long double p = expl(z[r] - zmax) / denom;
      if (r == labels[i]) p -= 1.0L;
      for (std::size_t c = 0; c < input_dim; ++c) {
        grad[r * input_dim + c] += p * x[c];
      }
      grad[num_classes * input_dim + r] += p;
    }
  }
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    out[i] = static_cast<double>(grad[i] / static_cast<long double>(n));
  }
  return out;
}

// Builds a shard with every row in the train index.
inline fedsim::DeviceShard make_shard(std::uint32_t device_id,
                                      std::size_t cols,
                                      std::vector<double> features,
                                      std::vector<std::uint32_t> labels) {
  fedsim::DeviceShard shard;
  shard.device_id = device_id;
  shard.cols = cols;
  shard.rows = labels.size();
  shard.features = std::move(features);
  shard.labels = std::move(labels);
  shard.train_index.resize(shard.rows);
  std::iota(shard.train_index.begin(), shard.train_index.end(), 0u);
  return shard;
}

// Random shard: features N(0,1), labels uniform.
inline fedsim::DeviceShard random_shard(std::uint32_t device_id,
                                        std::size_t rows, std::size_t cols,
                                        std::size_t num_classes,
                                        std::uint64_t seed) {
  fedsim::RngStream rng(seed, fedsim::StreamPurpose::testing, 7, device_id);
  std::vector<double> features(rows * cols);
  for (double& v : features) v = rng.next_normal(0.0, 1.0);
  std::vector<std::uint32_t> labels(rows);
  for (auto& y : labels) {
    y = static_cast<std::uint32_t>(rng.next_below(num_classes));
  }
  return make_shard(device_id, cols, std::move(features), std::move(labels));
}

inline fedsim::FederatedDataset dataset_of(
    std::vector<fedsim::DeviceShard> shards, std::size_t input_dim,
    std::size_t num_classes) {
  fedsim::FederatedDataset ds;
  ds.shards = std::move(shards);
  ds.input_dim = input_dim;
  ds.num_classes = num_classes;
  ds.provenance = "{\"generator\":\"test\",\"num_shards\":" +
                  std::to_string(ds.shards.size()) +
                  ",\"input_dim\":" + std::to_string(input_dim) +
                  ",\"num_classes\":" + std::to_string(num_classes) + "}";
  ds.recompute_weights();
  return ds;
}

inline fedsim::ParamVector random_params(std::size_t dim, std::uint64_t seed,
                                         double stddev = 0.5) {
  fedsim::RngStream rng(seed, fedsim::StreamPurpose::testing, 11);
  fedsim::ParamVector w(dim);
  for (std::size_t i = 0; i < dim; ++i) w[i] = rng.next_normal(0.0, stddev);
  return w;
}

inline void write_u32_be(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

// Minimal IDX writers for fixtures.
inline void write_idx_images(const std::string& path,
                             const std::vector<std::uint8_t>& pixels,
                             std::size_t count, std::size_t rows,
                             std::size_t cols) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  write_u32_be(out, 0x00000803u);
  write_u32_be(out, static_cast<std::uint32_t>(count));
  write_u32_be(out, static_cast<std::uint32_t>(rows));
  write_u32_be(out, static_cast<std::uint32_t>(cols));
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

inline void write_idx_labels(const std::string& path,
                             const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  write_u32_be(out, 0x00000801u);
  write_u32_be(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

}  // namespace testutil

#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace fedsim {

// Counter-based generator: Philox4x64 with 10 rounds, bit-compatible with
// numpy.random.Philox. Streams are cheap to create and never overlap as long
// as their (key, counter-prefix) tuples differ, which is what makes the
// per-(seed, purpose, round, device) stream scheme reproducible regardless of
// execution order.
struct Philox4x64 {
  std::array<std::uint64_t, 2> key{};
  std::array<std::uint64_t, 4> counter{};

  // Encrypts the current counter; does not advance it.
  std::array<std::uint64_t, 4> block() const;
};

// Stream purposes. The numeric values are part of the reproducibility
// contract: changing them changes every generated dataset and run.
enum class StreamPurpose : std::uint64_t {
  dataset_counts = 1,
  dataset_model = 2,
  dataset_features = 3,
  train_test_split = 4,
  device_selection = 5,
  straggler_assignment = 6,
  minibatch_order = 7,
  param_init = 8,
  smoothness_probe = 9,
  testing = 100,
};

// One independent random stream. Keyed by (seed, purpose) and positioned at
// (round, device); successive draws advance only the block counter, so streams
// with distinct keys/positions never collide.
class RngStream {
 public:
  RngStream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t round = 0,
            std::uint64_t device = 0);

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 random bits.
  double next_double();

  // Uniform integer in [0, n); n must be > 0. Unbiased (rejection sampling).
  std::uint64_t next_below(std::uint64_t n);

  // N(mean, stddev^2) via Box-Muller. One draw consumes two uniforms; the
  // second output of the pair is discarded to keep the stream position a pure
  // function of the draw count.
  double next_normal(double mean, double stddev);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  Philox4x64 engine_;
  std::array<std::uint64_t, 4> buffer_{};
  unsigned buffer_pos_ = 4;  // empty
};

}  // namespace fedsim

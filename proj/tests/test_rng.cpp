#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "fedsim/rng.hpp"

using namespace fedsim;

// Known-answer vectors generated with numpy.random.Philox (philox4x64 with
// 10 rounds). numpy advances the counter before producing a block, so its
// first block for counter c is the encryption of c + 1.
TEST_CASE("philox matches the numpy 4x64-10 vectors") {
  Philox4x64 p;

  p.key = {0, 0};
  p.counter = {1, 0, 0, 0};
  CHECK(p.block() == std::array<std::uint64_t, 4>{
                         0x02f4ba6408e4d89bULL, 0x3dd62b0b9ca8c5b2ULL,
                         0x1c8667a55d902e79ULL, 0x907d7a052fd5b4dcULL});
  p.counter = {2, 0, 0, 0};
  CHECK(p.block() == std::array<std::uint64_t, 4>{
                         0x809bf322883987c3ULL, 0x471128b9e807f7ddULL,
                         0xf250ba0dbec065b7ULL, 0xfc6ed66767a457bcULL});

  // Counter all-ones wraps to zero under numpy's pre-increment.
  p.key = {0xffffffffffffffffULL, 0xffffffffffffffffULL};
  p.counter = {0, 0, 0, 0};
  CHECK(p.block() == std::array<std::uint64_t, 4>{
                         0x44b7493d1acfc229ULL, 0x6636af8e997921ddULL,
                         0x3f73e132b5b3780eULL, 0x605644dde03b01b1ULL});

  p.key = {0xdeadbeef12345678ULL, 0x0badc0de87654321ULL};
  p.counter = {2, 2, 3, 4};
  CHECK(p.block() == std::array<std::uint64_t, 4>{
                         0x8405f0ae2f989613ULL, 0xfc9abfc47074215bULL,
                         0x2124c83212da41e5ULL, 0xf516a4ff1c37926cULL});
}

TEST_CASE("streams are deterministic and position-keyed") {
  RngStream a(42, StreamPurpose::minibatch_order, 3, 7);
  RngStream b(42, StreamPurpose::minibatch_order, 3, 7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  // Any change to seed, purpose, round, or device moves the stream.
  RngStream base(42, StreamPurpose::minibatch_order, 3, 7);
  const std::uint64_t first = base.next_u64();
  CHECK(RngStream(43, StreamPurpose::minibatch_order, 3, 7).next_u64() !=
        first);
  CHECK(RngStream(42, StreamPurpose::device_selection, 3, 7).next_u64() !=
        first);
  CHECK(RngStream(42, StreamPurpose::minibatch_order, 4, 7).next_u64() !=
        first);
  CHECK(RngStream(42, StreamPurpose::minibatch_order, 3, 8).next_u64() !=
        first);
}

TEST_CASE("uniform doubles live in [0,1)") {
  RngStream rng(1, StreamPurpose::testing);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("next_below is bounded and roughly uniform") {
  RngStream rng(2, StreamPurpose::testing);
  std::vector<int> counts(7, 0);
  const int draws = 70000;
  for (int i = 0; i < draws; ++i) {
    const std::uint64_t v = rng.next_below(7);
    REQUIRE(v < 7);
    ++counts[v];
  }
  for (int c : counts) {
    CHECK(c > draws / 7 - 600);
    CHECK(c < draws / 7 + 600);
  }
}

TEST_CASE("shuffle yields a permutation") {
  RngStream rng(3, StreamPurpose::testing);
  std::vector<int> items(257);
  for (int i = 0; i < 257; ++i) items[i] = i;
  rng.shuffle(items);
  std::set<int> seen(items.begin(), items.end());
  CHECK(seen.size() == items.size());
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 256);
}

TEST_CASE("normal draws have the requested moments") {
  RngStream rng(4, StreamPurpose::testing);
  const int n = 40000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.next_normal(2.0, 3.0);
    sum += z;
    sumsq += z * z;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(mean == doctest::Approx(2.0).epsilon(0.03));
  CHECK(var == doctest::Approx(9.0).epsilon(0.05));
}

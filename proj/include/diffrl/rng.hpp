#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "diffrl/types.hpp"

namespace diffrl {

// Deterministic stream of randomness with keyed sub-stream derivation.
//
// Every source of randomness in the library is an RngStream derived from the
// run seed through a tree of derive() calls, so results are bit-identical
// across runs and platforms for a fixed seed.  Derivation depends only on the
// parent key, never on how much the parent stream has been consumed, which
// keeps sibling streams independent of evaluation order.
//
// The derivation tree used by the library:
//   root(seed)
//     "data"                     dataset generation
//     "init" / {"actor","critic"}  network initialization
//     "train" / episode / traj   one stream per trajectory
//         each trajectory stream additionally derives
//           "signal" / step      index subsampling for score signals
//     "gen" / traj               inference trajectories
//     "eval" / batch             evaluation batches
//     "diag" / ...               estimator diagnostics
class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : key_(key), gen_(key) {}

  // Child stream; tag must be unique among siblings.
  RngStream derive(std::uint64_t tag) const;
  RngStream derive(std::string_view label) const;

  std::uint64_t key() const { return key_; }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n); n > 0.  Unbiased (rejection sampling).
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller; consumes two uniforms per draw.
  double normal();

  // Vector/matrix of independent standard normals, filled column-major.
  Vector normal_vector(int n);
  Matrix normal_matrix(int rows, int cols);

  // Number of normal() draws taken from this stream so far.
  std::uint64_t normal_draws() const { return normal_draws_; }

 private:
  std::uint64_t key_;
  std::mt19937_64 gen_;
  std::uint64_t normal_draws_ = 0;
};

// Key mixing used by RngStream::derive; exposed for tests.
std::uint64_t mix_key(std::uint64_t key, std::uint64_t tag);
std::uint64_t hash_label(std::string_view label);

}  // namespace diffrl

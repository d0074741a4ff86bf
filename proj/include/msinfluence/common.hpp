#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace msi {

inline constexpr const char* kToolVersion = "0.1.0";

// Error taxonomy. The CLI maps these to distinct exit codes
// (config = 2, checkpoint = 3, scenario = 4, everything else = 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values in a differentiation pass, optimizer divergence, or a
// NaN inside an iterative solve.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Deterministic RNG (SplitMix64). All randomness in the project flows through
// this so that runs are reproducible byte-for-byte across platforms; the
// standard library distributions are implementation-defined and are not used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform in [0, 1).
  double next_unit();

  double next_uniform(double lo, double hi);

  // Standard normal via Box-Muller.
  double next_gaussian();

  // Uniform integer in [0, n), unbiased.
  std::uint64_t next_below(std::uint64_t n);

  // Fisher-Yates.
  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a over a byte string; used for config hashing.
std::uint64_t fnv1a64(const std::string& bytes);

std::string to_hex(std::uint64_t value);

}  // namespace msi

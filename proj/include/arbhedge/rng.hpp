#pragma once

#include <cstdint>
#include <random>

namespace arbhedge {

// Per-path random stream. The stream is a pure function of (seed, path,
// attempt), so ensembles do not depend on how paths are scheduled.
class PathRng {
 public:
  PathRng(std::uint64_t seed, std::uint64_t path, std::uint32_t attempt = 0) { reseed(seed, path, attempt); }

  void reseed(std::uint64_t seed, std::uint64_t path, std::uint32_t attempt = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32), attempt};
    engine_.seed(seq);
    normal_.reset();
  }

  double normal() { return normal_(engine_); }

  // Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace arbhedge

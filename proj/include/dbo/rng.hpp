#pragma once

#include <cstdint>
#include <random>

namespace dbo {

using Rng = std::mt19937_64;

/// Purpose of a random stream; part of the key so that e.g. an agent's inner-loop
/// samples never share a stream with its hypergradient samples.
enum class StreamRole : std::uint64_t {
  Data = 1,
  InnerSample = 2,
  OuterUpper = 3,
  OuterLower = 4,
  Neumann = 5,
  Jhip = 6,
  Test = 7,
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Master seed plus a keyed derivation: every (agent, role, outer k, inner t) key
/// maps to its own seeded engine, independent of call order and thread schedule.
class RngPlan {
 public:
  explicit RngPlan(std::uint64_t master = 0) : master_(master) {}

  std::uint64_t master() const noexcept { return master_; }
  std::uint64_t derive(std::uint64_t agent, StreamRole role, std::uint64_t k = 0, std::uint64_t t = 0) const noexcept;
  Rng stream(std::uint64_t agent, StreamRole role, std::uint64_t k = 0, std::uint64_t t = 0) const {
    return Rng(derive(agent, role, k, t));
  }
  /// Plan for an independent repeat of the same experiment.
  RngPlan repeat(std::uint64_t r) const noexcept { return RngPlan(splitmix64(master_ ^ splitmix64(r + 0x9e37))); }

 private:
  std::uint64_t master_;
};

}  // namespace dbo

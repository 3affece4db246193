#include "dbo/rng.hpp"

namespace dbo {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t RngPlan::derive(std::uint64_t agent, StreamRole role, std::uint64_t k, std::uint64_t t) const noexcept {
  std::uint64_t h = splitmix64(master_);
  h = splitmix64(h ^ agent);
  h = splitmix64(h ^ static_cast<std::uint64_t>(role));
  h = splitmix64(h ^ k);
  h = splitmix64(h ^ t);
  return h;
}

}  // namespace dbo

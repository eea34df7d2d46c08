#include "msgt/rng.hpp"

#include <cmath>
#include <numbers>

namespace msgt {

namespace {

// Box-Muller on two uniforms; u1 is shifted away from zero.
double box_muller(std::uint64_t a, std::uint64_t b) noexcept {
  const double u1 = bits_to_unit(a) + 0x1.0p-54;
  const double u2 = bits_to_unit(b);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

double Rng::normal() noexcept {
  const auto a = next_u64();
  const auto b = next_u64();
  return box_muller(a, b);
}

std::size_t Rng::below(std::size_t n) noexcept {
  // Multiply-shift range reduction; bias is negligible for the sizes used here.
  const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
  return static_cast<std::size_t>(wide >> 64);
}

double counter_normal(std::uint64_t key, std::uint64_t counter) noexcept {
  const std::uint64_t base = splitmix64(key);
  return box_muller(splitmix64(base ^ (2 * counter)), splitmix64(base ^ (2 * counter + 1)));
}

}  // namespace msgt

#include "embedflow/rng.hpp"

#include <cmath>
#include <numbers>

namespace embedflow {
namespace {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

// SplitMix64 finalizer over key + counter stride.
std::uint64_t mix64(std::uint64_t key, std::uint64_t ctr) {
  std::uint64_t z = key + ctr * kGamma;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t hash_label(std::string_view label) {
  // FNV-1a
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

Rng::Rng(std::uint64_t seed) : key_(mix64(seed, 1)) {}

Rng Rng::substream(std::uint64_t tag) const {
  return Rng(mix64(key_ ^ mix64(tag, 2), 3), 0);
}

Rng Rng::substream(std::string_view label) const {
  return substream(hash_label(label));
}

std::uint64_t Rng::next_u64() { return mix64(key_, ++ctr_); }

double Rng::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform01();
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // 1-u in (0,1] keeps the log finite
  double u1 = 1.0 - uniform01();
  double u2 = uniform01();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

std::uint64_t Rng::next_below(std::uint64_t bound) {
  return bound == 0 ? 0 : next_u64() % bound;
}

void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace embedflow

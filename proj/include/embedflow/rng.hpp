#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace embedflow {

// Counter-based generator: every output is a pure function of (key, counter),
// so copies are independent once their keys differ and instances are safe to
// hand out across threads by value. Substreams derive a fresh key from a tag,
// which keeps data sampling, inits, shuffling and MC draws decoupled.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  Rng substream(std::uint64_t tag) const;
  Rng substream(std::string_view label) const;

  std::uint64_t next_u64();
  // [0,1), 53-bit mantissa
  double uniform01();
  double uniform(double lo, double hi);
  // standard normal via Box-Muller, second value cached
  double normal();
  std::uint64_t next_below(std::uint64_t bound);

 private:
  Rng(std::uint64_t key, int) : key_(key) {}

  std::uint64_t key_ = 0;
  std::uint64_t ctr_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Fisher-Yates with draws from rng; deterministic for a given stream state.
void shuffle_indices(std::vector<int>& idx, Rng& rng);

std::uint64_t hash_label(std::string_view label);

}  // namespace embedflow

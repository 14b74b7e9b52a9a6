#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace edunet {

/// Counter-based generator (SplitMix64 over key + counter). The full state is two words,
/// so streams can be forked by name and checkpointed exactly.
class Rng {
 public:
  struct State {
    std::uint64_t key = 0;
    std::uint64_t counter = 0;
  };

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller; consumes two draws.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Independent sub-stream derived from this stream's key only (not its position).
  Rng fork(std::string_view name) const;
  Rng fork(std::uint64_t index) const;

  State state() const { return state_; }
  void set_state(State s) { state_ = s; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  State state_;
};

std::uint64_t mix64(std::uint64_t z);

}  // namespace edunet

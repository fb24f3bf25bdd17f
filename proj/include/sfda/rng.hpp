#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace sfda {

// Deterministic random source. All draws are derived from raw engine words
// through fixed arithmetic (no library distribution objects), so sequences are
// reproducible across standard-library implementations and the full state is
// exactly the engine state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; consumes two words per draw, caches nothing.
  double normal();

  // Exponential with the given rate, by inverse CDF.
  double exponential(double rate);

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string save_state() const;
  void load_state(const std::string& s);

 private:
  std::mt19937_64 eng_;
};

// Shuffled [0, n) split into ceil(n / batch) consecutive batches.
std::vector<std::vector<int>> make_batches(int n, int batch, Rng& rng);

}  // namespace sfda

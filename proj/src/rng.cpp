#include "sfda/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace sfda {

double Rng::normal() {
  // Guard the log: uniform() can return exactly 0.
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::exponential(double rate) {
  if (rate <= 0.0) throw std::invalid_argument("exponential: rate must be positive");
  return -std::log1p(-uniform()) / rate;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("below: n must be positive");
  // Rejection sampling to avoid modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r = 0;
  do {
    r = eng_();
  } while (r >= limit);
  return r % n;
}

std::string Rng::save_state() const {
  std::ostringstream os;
  os << eng_;
  return os.str();
}

void Rng::load_state(const std::string& s) {
  std::istringstream is(s);
  is >> eng_;
  if (is.fail()) throw std::runtime_error("Rng::load_state: malformed state string");
}

std::vector<std::vector<int>> make_batches(int n, int batch, Rng& rng) {
  if (n < 0 || batch <= 0) throw std::invalid_argument("make_batches: need n >= 0 and batch > 0");
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  rng.shuffle(idx);
  std::vector<std::vector<int>> out;
  for (int start = 0; start < n; start += batch) {
    const int end = std::min(n, start + batch);
    out.emplace_back(idx.begin() + start, idx.begin() + end);
  }
  return out;
}

}  // namespace sfda

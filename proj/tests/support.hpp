#pragma once

// Hand-rolled generators shared by the property tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "memwrap/tensor.hpp"

namespace testgen {

struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(rng); }
  std::size_t index(std::size_t lo, std::size_t hi) {  // inclusive
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  }

  std::vector<double> vec(std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return v;
  }

  // Mixed-scale vectors: some near-ties, some large spreads, occasional duplicates.
  std::vector<double> scores(std::size_t n) {
    std::vector<double> v(n);
    const double spread = std::pow(10.0, uniform(-2.0, 1.5));
    for (auto& x : v) x = normal(spread);
    if (n > 2 && index(0, 3) == 0) v[index(0, n - 1)] = v[0];
    return v;
  }

  memwrap::Tensor matrix(std::size_t r, std::size_t c, bool grad = false, double lo = -1.0,
                         double hi = 1.0) {
    return memwrap::Tensor::matrix(r, c, vec(r * c, lo, hi), grad);
  }
};

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <class Span>
std::vector<double> to_vec(const Span& s) {
  return std::vector<double>(s.begin(), s.end());
}

}  // namespace testgen

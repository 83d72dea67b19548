#include "memwrap/simplex_oracle.hpp"

#include <cstdint>

#include "memwrap/errors.hpp"

namespace memwrap {

std::vector<double> oracle_project(std::span<const double> z) {
  const std::size_t n = z.size();
  if (n == 0) throw ContractError("oracle_project of an empty vector");
  if (n > 24) throw ContractError("oracle_project is exhaustive; n must be <= 24");
  constexpr double slack = 1e-12;

  // Gray-code walk over all supports so each candidate costs one update of
  // the running sum.
  double support_sum = 0.0;
  std::size_t support_size = 0;
  std::uint32_t mask = 0;
  bool found = false;
  std::vector<double> best(n, 0.0);
  const std::uint64_t total = std::uint64_t{1} << n;
  for (std::uint64_t i = 1; i < total; ++i) {
    const std::uint32_t gray = static_cast<std::uint32_t>(i ^ (i >> 1));
    const std::uint32_t flipped = gray ^ mask;
    std::size_t bit = 0;
    while (((flipped >> bit) & 1u) == 0) ++bit;
    if (gray & flipped) {
      support_sum += z[bit];
      ++support_size;
    } else {
      support_sum -= z[bit];
      --support_size;
    }
    mask = gray;
    if (support_size == 0 || found) continue;

    const double tau = (support_sum - 1.0) / static_cast<double>(support_size);
    bool feasible = true;
    for (std::size_t j = 0; j < n && feasible; ++j) {
      const bool in = (mask >> j) & 1u;
      feasible = in ? (z[j] - tau >= -slack) : (z[j] - tau <= slack);
    }
    if (!feasible) continue;
    found = true;
    for (std::size_t j = 0; j < n; ++j) best[j] = ((mask >> j) & 1u) ? z[j] - tau : 0.0;
    break;
  }
  if (!found) throw ContractError("oracle_project: no feasible support (invalid input)");
  for (double& v : best) v = v < 0.0 ? 0.0 : v;
  return best;
}

}  // namespace memwrap

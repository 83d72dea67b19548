#pragma once

#include <span>
#include <vector>

namespace memwrap {

// Exhaustive simplex projection: tries every nonempty support S, solves the
// KKT system tau_S = (sum_S z - 1) / |S| and keeps the feasible candidate.
// Exponential in n; intended as an independent check (n <= 20).
std::vector<double> oracle_project(std::span<const double> z);

}  // namespace memwrap

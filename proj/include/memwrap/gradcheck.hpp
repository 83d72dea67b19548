#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "memwrap/tensor.hpp"

namespace memwrap {

struct GradCheckReport {
  std::vector<double> autodiff;
  std::vector<double> numeric;
  std::vector<double> rel_error;
  std::vector<bool> excluded;  // coordinate sits on a relu/sparsemax kink
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;

  std::size_t excluded_count() const;
  // Fraction of non-excluded coordinates with rel_error <= tol.
  double pass_fraction(double tol) const;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero gradients from
// dominating with pure roundoff.
double relative_error(double autodiff, double numeric, double floor = 1e-6);

using LossFn = std::function<Tensor(Tape&)>;

// Central differences (f(p+h) - f(p-h)) / 2h for every coordinate of every
// tensor in `wrt`, compared against the tape gradient. A coordinate is
// excluded when the base point is within kink_tol of a kink or the two probes
// land on different activation patterns. Exclusion is per coordinate.
GradCheckReport finite_diff_check(const LossFn& f, std::vector<Tensor> wrt, double h,
                                  double kink_tol = 1e-6);
GradCheckReport finite_diff_check(const LossFn& f, ParameterSet& params, double h,
                                  double kink_tol = 1e-6);

}  // namespace memwrap

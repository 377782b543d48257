#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stablekd/autodiff.hpp"

namespace skd {

/// Builds a scalar on a fresh tape from the given parameters. Must be a
/// pure function of the parameter values.
using ScalarFn = std::function<Var<double>(Tape<double>&, const std::vector<Parameter<double>>&)>;

struct GradCheckReport {
  double max_error = 0.0;   ///< max |analytic - numeric| / max(1, |numeric|)
  std::string worst_param;  ///< id of the coordinate attaining max_error
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// Central-difference gradient oracle. Every trainable coordinate is
/// perturbed by ±eps and compared against Tape::backward(). Throws
/// OracleError when f is non-finite at any evaluation point.
GradCheckReport finite_diff_check(const ScalarFn& f, std::vector<Parameter<double>> params,
                                  double eps = 1e-6);

/// Worst result of one named check over every seed. `error` holds the
/// oracle failure message when the check could not be evaluated.
struct SuiteEntry {
  std::string name;
  GradCheckReport report;
  std::string error;
  std::size_t seeds = 0;
};

/// finite_diff_check over every differentiable op, every loss and a full
/// blockwise objective on a small projected CNN, `seeds` random draws each.
std::vector<SuiteEntry> run_gradcheck_suite(std::size_t seeds);

}  // namespace skd

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

namespace clv {

struct NelderMeadOptions {
  /// Converged once max - min of the simplex values drops below this.
  double spread_tolerance = 1e-8;
  /// Also converged once the simplex diameter falls below this (the value
  /// spread can no longer shrink in floating point).
  double diameter_tolerance = 1e-11;
  int max_evaluations = 20'000;
  double initial_step = 0.25;
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

/// Derivative-free maximization. Non-finite objective values are treated as
/// -infinity, so infeasible regions simply repel the simplex.
NelderMeadResult nelder_mead_maximize(const std::function<double(const std::vector<double>&)>& objective,
                                      std::vector<double> start, const NelderMeadOptions& options = {});

/// Shared contract for every maximum-likelihood fit in the project.
struct FitOptions {
  std::uint64_t seed = 42;
  int restarts = 4;
  int max_evaluations = 20'000;
  double spread_tolerance = 1e-8;
  /// Restart jitter, standard deviation in log-parameter space.
  double jitter = 0.5;
};

template <class Params>
struct FitResult {
  Params params{};
  double log_likelihood = 0.0;
  int iterations = 0;  // objective evaluations over all starts
  bool converged = false;
  int restarts_used = 0;
};

struct MultiStartResult {
  std::vector<double> x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
  int restarts_used = 0;
};

/// Nelder-Mead from `start`, then `options.restarts` restarts jittered around
/// the best point so far; keeps the best converged run (or the best run if
/// none converged). Deterministic given options.seed.
MultiStartResult multi_start_maximize(const std::function<double(const std::vector<double>&)>& objective,
                                      const std::vector<double>& start, const FitOptions& options);

}  // namespace clv

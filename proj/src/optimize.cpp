#include "clv/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "clv/common.hpp"

namespace clv {

namespace {

double sanitize(double v) { return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity(); }

}  // namespace

NelderMeadResult nelder_mead_maximize(const std::function<double(const std::vector<double>&)>& objective,
                                      std::vector<double> start, const NelderMeadOptions& options) {
  const std::size_t dim = start.size();
  std::vector<std::vector<double>> simplex(dim + 1, start);
  std::vector<double> values(dim + 1);
  NelderMeadResult result;
  auto eval = [&](const std::vector<double>& x) {
    ++result.evaluations;
    return sanitize(objective(x));
  };
  for (std::size_t i = 0; i < dim; ++i) simplex[i + 1][i] += options.initial_step;
  for (std::size_t i = 0; i <= dim; ++i) values[i] = eval(simplex[i]);

  std::vector<std::size_t> order(dim + 1);
  std::vector<double> centroid(dim), trial(dim), trial2(dim);
  while (true) {
    // Sort descending: best first.
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    {
      std::vector<std::vector<double>> s2(dim + 1);
      std::vector<double> v2(dim + 1);
      for (std::size_t i = 0; i <= dim; ++i) {
        s2[i] = std::move(simplex[order[i]]);
        v2[i] = values[order[i]];
      }
      simplex = std::move(s2);
      values = std::move(v2);
    }
    const double best = values.front();
    const double worst = values.back();
    if (std::isfinite(best)) {
      if (std::isfinite(worst) && best - worst < options.spread_tolerance) {
        result.converged = true;
        break;
      }
      double diameter = 0.0;
      for (std::size_t i = 1; i <= dim; ++i)
        for (std::size_t j = 0; j < dim; ++j) diameter = std::max(diameter, std::abs(simplex[i][j] - simplex[0][j]));
      if (diameter < options.diameter_tolerance) {
        result.converged = std::isfinite(worst);
        break;
      }
    }
    if (result.evaluations >= options.max_evaluations) break;

    std::fill(centroid.begin(), centroid.end(), 0.0);
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j) centroid[j] += simplex[i][j] / static_cast<double>(dim);
    auto along = [&](double t, std::vector<double>& out) {
      for (std::size_t j = 0; j < dim; ++j) out[j] = centroid[j] + t * (simplex[dim][j] - centroid[j]);
    };

    along(-1.0, trial);
    const double reflected = eval(trial);
    if (reflected > values[0]) {
      along(-2.0, trial2);
      const double expanded = eval(trial2);
      if (expanded > reflected) {
        simplex[dim] = trial2;
        values[dim] = expanded;
      } else {
        simplex[dim] = trial;
        values[dim] = reflected;
      }
      continue;
    }
    if (reflected > values[dim - 1]) {
      simplex[dim] = trial;
      values[dim] = reflected;
      continue;
    }
    // Contraction: outside if the reflection beat the worst point, else inside.
    const bool outside = reflected > values[dim];
    along(outside ? -0.5 : 0.5, trial2);
    const double contracted = eval(trial2);
    if (contracted > (outside ? reflected : values[dim])) {
      simplex[dim] = trial2;
      values[dim] = contracted;
      continue;
    }
    // Shrink toward the best vertex.
    for (std::size_t i = 1; i <= dim; ++i) {
      for (std::size_t j = 0; j < dim; ++j) simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
      values[i] = eval(simplex[i]);
    }
  }
  result.x = simplex.front();
  result.value = values.front();
  return result;
}

MultiStartResult multi_start_maximize(const std::function<double(const std::vector<double>&)>& objective,
                                      const std::vector<double>& start, const FitOptions& options) {
  NelderMeadOptions nm;
  nm.spread_tolerance = options.spread_tolerance;
  nm.max_evaluations = options.max_evaluations;

  Rng rng = substream(options.seed, 0x6e6d);
  std::normal_distribution<double> normal(0.0, 1.0);

  MultiStartResult best;
  best.value = -std::numeric_limits<double>::infinity();
  bool have_best = false;
  for (int run = 0; run <= options.restarts; ++run) {
    std::vector<double> x0 = have_best ? best.x : start;
    if (run > 0)
      for (double& v : x0) v += options.jitter * normal(rng);
    const NelderMeadResult r = nelder_mead_maximize(objective, x0, nm);
    best.evaluations += r.evaluations;
    best.restarts_used = run;
    // A converged run always beats a non-converged one.
    const bool better = !have_best || (r.converged && !best.converged) ||
                        (r.converged == best.converged && r.value > best.value);
    if (better) {
      best.x = r.x;
      best.value = r.value;
      best.converged = r.converged;
      have_best = true;
    }
  }
  return best;
}

}  // namespace clv

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "divtol/core.hpp"
#include "divtol/error.hpp"
#include "divtol/rng.hpp"

namespace divtol {

enum class Method { closed_form, grid };

constexpr std::string_view to_string(Method m) noexcept {
  return m == Method::closed_form ? "closed_form" : "grid";
}

/// Divisor-n second moments of the linear decomposition R_i = u_i theta + v_i,
/// with u_i = -D_i (2 s_i - 1) and v_i = -D_i (1 - s_i). Half the objective is
/// theta^2 var_u + 2 theta cov_uv + var_v.
struct Quadratic {
  double var_u = 0.0;
  double cov_uv = 0.0;
  double var_v = 0.0;
};

struct EstimateResult {
  double theta_e = 0.5;
  double objective_at_min = 0.0;
  Method method = Method::closed_form;
  bool clamped = false;
  Quadratic quadratic;
  /// Minimizer of the quadratic before clamping to [0, 1].
  double unconstrained = 0.5;
};

struct CurveSamples {
  std::vector<double> thetas;
  std::vector<double> mean_reward_exposed;
  std::vector<double> mean_reward_control;
  std::optional<double> crossing_theta;
};

struct BootstrapInterval {
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.95;
  std::size_t replicates = 0;
  std::size_t skipped = 0;
};

inline constexpr double default_grid_step = 1e-6;

namespace detail {

inline void check_theta(double theta) {
  require(std::isfinite(theta) && theta >= 0.0 && theta <= 1.0, ErrorClass::input,
          "theta_e must lie in [0, 1]");
}

inline void check_evaluable(const Dataset& ds) {
  require(ds.size() >= 1, ErrorClass::input, "objective needs at least one observation");
}

inline void check_estimable(const Dataset& ds) {
  require(ds.count(Exposure::exposed) > 0, ErrorClass::estimation, "missing exposed group");
  require(ds.count(Exposure::control) > 0, ErrorClass::estimation, "missing control group");
}

inline std::vector<Exposure> states(const Dataset& ds) {
  std::vector<Exposure> s;
  s.reserve(ds.size());
  for (const auto& o : ds.observations) s.push_back(o.state);
  return s;
}

inline double weight(double theta, Exposure s) noexcept {
  const double x = indicator(s);
  return theta * x + (1.0 - theta) * (1.0 - x);
}

/// 2 var_n(R) evaluated from precomputed divergences (two-pass variance).
inline double twice_variance(double theta, std::span<const double> d,
                             std::span<const Exposure> s) noexcept {
  const std::size_t n = d.size();
  if (n == 0) return 0.0;
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += -d[i] * weight(theta, s[i]);
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = -d[i] * weight(theta, s[i]) - mean;
    ss += r * r;
  }
  return 2.0 * ss / static_cast<double>(n);
}

inline Quadratic quadratic(std::span<const double> d, std::span<const Exposure> s) noexcept {
  const std::size_t n = d.size();
  const double nn = static_cast<double>(n);
  double mu = 0.0, mv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = indicator(s[i]);
    mu += -d[i] * (2.0 * x - 1.0);
    mv += -d[i] * (1.0 - x);
  }
  mu /= nn;
  mv /= nn;
  Quadratic q;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = indicator(s[i]);
    const double du = -d[i] * (2.0 * x - 1.0) - mu;
    const double dv = -d[i] * (1.0 - x) - mv;
    q.var_u += du * du;
    q.cov_uv += du * dv;
    q.var_v += dv * dv;
  }
  q.var_u /= nn;
  q.cov_uv /= nn;
  q.var_v /= nn;
  return q;
}

inline double degeneracy_tolerance(std::span<const double> d) noexcept {
  double max_sq = 0.0;
  for (double x : d) max_sq = std::max(max_sq, x * x);
  return 1e-12 * (1.0 + max_sq);
}

/// Estimator on precomputed divergences; both groups must be present.
inline EstimateResult estimate(std::span<const double> d, std::span<const Exposure> s,
                               Method method, double grid_step) {
  EstimateResult out;
  out.method = method;
  out.quadratic = quadratic(d, s);
  const double tol = degeneracy_tolerance(d);
  if (!(out.quadratic.var_u > tol))
    throw Error(ErrorClass::degenerate,
                "degenerate objective: var_n(u) = " + std::to_string(out.quadratic.var_u) +
                    " <= tolerance " + std::to_string(tol) +
                    "; the objective has no curvature in theta");
  out.unconstrained = -out.quadratic.cov_uv / out.quadratic.var_u;
  out.clamped = out.unconstrained < 0.0 || out.unconstrained > 1.0;

  if (method == Method::closed_form) {
    out.theta_e = std::clamp(out.unconstrained, 0.0, 1.0);
  } else {
    require(std::isfinite(grid_step) && grid_step > 0.0 && grid_step <= 1.0, ErrorClass::input,
            "grid step must lie in (0, 1]");
    const auto steps = static_cast<std::size_t>(std::ceil(1.0 / grid_step - 1e-9));
    double best_theta = 0.0;
    double best = twice_variance(0.0, d, s);
    for (std::size_t k = 1; k <= steps; ++k) {
      const double theta = std::min(1.0, static_cast<double>(k) * grid_step);
      const double value = twice_variance(theta, d, s);
      if (value < best) {
        best = value;
        best_theta = theta;
      }
    }
    out.theta_e = best_theta;
  }
  out.objective_at_min = twice_variance(out.theta_e, d, s);
  return out;
}

/// Linear interpolation percentile (sample quantile type 7) of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double p) noexcept {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

/// Mean over all ordered pairs of squared subjective-reward differences,
/// evaluated by the O(n^2) double sum.
inline double pairwise_objective(double theta_e, const Dataset& ds, const DivergenceSpec& spec) {
  detail::check_theta(theta_e);
  detail::check_evaluable(ds);
  const auto d = divergences(ds, spec);
  const auto s = detail::states(ds);
  const std::size_t n = d.size();
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = -d[i] * detail::weight(theta_e, s[i]);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double diff = r[i] - r[j];
      total += diff * diff;
    }
  const double nn = static_cast<double>(n);
  return total / (nn * nn);
}

/// Twice the divisor-n sample variance of the subjective rewards; equal to
/// pairwise_objective, in O(n).
inline double variance_objective(double theta_e, const Dataset& ds, const DivergenceSpec& spec) {
  detail::check_theta(theta_e);
  detail::check_evaluable(ds);
  const auto d = divergences(ds, spec);
  const auto s = detail::states(ds);
  return detail::twice_variance(theta_e, d, s);
}

/// Minimizes the objective over theta_e in [0, 1].
///
/// CLOSED_FORM solves the quadratic in theta and clamps its vertex to the
/// unit interval. GRID scans a uniform grid (including both endpoints) and
/// is kept as an oracle for the closed form. Throws an estimation error when
/// a group is missing and a degenerate error when var_n(u) is within
/// 1e-12 (1 + max D^2) of zero.
inline EstimateResult estimate_theta(const Dataset& ds, const DivergenceSpec& spec,
                                     Method method = Method::closed_form,
                                     double grid_step = default_grid_step) {
  detail::check_estimable(ds);
  const auto d = divergences(ds, spec);
  const auto s = detail::states(ds);
  return detail::estimate(d, s, method, grid_step);
}

/// Uniform grid of `points` values from 0 to 1 inclusive.
inline std::vector<double> uniform_grid(std::size_t points) {
  require(points >= 2, ErrorClass::input, "grid needs at least two points");
  std::vector<double> g(points);
  for (std::size_t k = 0; k < points; ++k)
    g[k] = static_cast<double>(k) / static_cast<double>(points - 1);
  return g;
}

/// Group-mean subjective rewards along a theta grid, plus the first point
/// where the two curves cross (linear interpolation between grid samples).
inline CurveSamples reward_curves(const Dataset& ds, const DivergenceSpec& spec,
                                  std::span<const double> grid) {
  require(!grid.empty(), ErrorClass::input, "reward curves: empty grid");
  for (std::size_t k = 0; k < grid.size(); ++k) {
    detail::check_theta(grid[k]);
    require(k == 0 || grid[k] > grid[k - 1], ErrorClass::input,
            "reward curves: grid must be strictly increasing");
  }
  detail::check_estimable(ds);
  const auto d = divergences(ds, spec);
  double sum_e = 0.0, sum_c = 0.0;
  std::size_t n_e = 0, n_c = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (ds.observations[i].state == Exposure::exposed) {
      sum_e += d[i];
      ++n_e;
    } else {
      sum_c += d[i];
      ++n_c;
    }
  }
  const double mean_d_e = sum_e / static_cast<double>(n_e);
  const double mean_d_c = sum_c / static_cast<double>(n_c);

  CurveSamples out;
  out.thetas.assign(grid.begin(), grid.end());
  for (double theta : grid) {
    out.mean_reward_exposed.push_back(-mean_d_e * theta);
    out.mean_reward_control.push_back(-mean_d_c * (1.0 - theta));
  }
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double diff = out.mean_reward_exposed[k] - out.mean_reward_control[k];
    if (diff == 0.0) {
      out.crossing_theta = grid[k];
      break;
    }
    if (k + 1 == grid.size()) break;
    const double next = out.mean_reward_exposed[k + 1] - out.mean_reward_control[k + 1];
    if ((diff < 0.0) != (next < 0.0) && next != 0.0) {
      const double t = diff / (diff - next);
      out.crossing_theta = grid[k] + t * (grid[k + 1] - grid[k]);
      break;
    }
  }
  return out;
}

/// Mean divergence of the exposed group minus that of the control group.
inline double group_divergence_contrast(const Dataset& ds, const DivergenceSpec& spec) {
  detail::check_estimable(ds);
  const auto d = divergences(ds, spec);
  double sum_e = 0.0, sum_c = 0.0;
  std::size_t n_e = 0, n_c = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (ds.observations[i].state == Exposure::exposed) {
      sum_e += d[i];
      ++n_e;
    } else {
      sum_c += d[i];
      ++n_c;
    }
  }
  return sum_e / static_cast<double>(n_e) - sum_c / static_cast<double>(n_c);
}

/// Percentile bootstrap interval for theta_e. Observations are resampled
/// with replacement within their exposure group, replicate r drawing from
/// substream(seed, {r}). Degenerate replicates are skipped and counted;
/// more than half skipped is an inference error.
inline BootstrapInterval bootstrap_ci(const Dataset& ds, const DivergenceSpec& spec,
                                      std::size_t replicates, std::uint64_t seed,
                                      double level = 0.95) {
  require(replicates >= 100, ErrorClass::input, "bootstrap needs at least 100 replicates");
  require(level > 0.0 && level < 1.0, ErrorClass::input, "bootstrap level must lie in (0, 1)");
  detail::check_estimable(ds);
  const auto d = divergences(ds, spec);
  std::vector<double> d_e, d_c;
  for (std::size_t i = 0; i < d.size(); ++i)
    (ds.observations[i].state == Exposure::exposed ? d_e : d_c).push_back(d[i]);

  std::vector<Exposure> s(d.size());
  std::fill(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(d_e.size()), Exposure::exposed);
  std::fill(s.begin() + static_cast<std::ptrdiff_t>(d_e.size()), s.end(), Exposure::control);

  std::vector<double> estimates;
  estimates.reserve(replicates);
  std::vector<double> resampled(d.size());
  BootstrapInterval out;
  out.level = level;
  out.replicates = replicates;
  for (std::size_t r = 0; r < replicates; ++r) {
    auto eng = substream(seed, {r});
    std::uniform_int_distribution<std::size_t> pick_e(0, d_e.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_c(0, d_c.size() - 1);
    for (std::size_t i = 0; i < d_e.size(); ++i) resampled[i] = d_e[pick_e(eng)];
    for (std::size_t i = 0; i < d_c.size(); ++i) resampled[d_e.size() + i] = d_c[pick_c(eng)];
    try {
      estimates.push_back(detail::estimate(resampled, s, Method::closed_form, 0.0).theta_e);
    } catch (const Error& e) {
      if (e.error_class() != ErrorClass::degenerate) throw;
      ++out.skipped;
    }
  }
  if (2 * out.skipped > replicates)
    throw Error(ErrorClass::inference, "bootstrap: " + std::to_string(out.skipped) + " of " +
                                           std::to_string(replicates) +
                                           " replicates were degenerate");
  std::sort(estimates.begin(), estimates.end());
  const double alpha = 1.0 - level;
  out.lo = detail::quantile_sorted(estimates, alpha / 2.0);
  out.hi = detail::quantile_sorted(estimates, 1.0 - alpha / 2.0);
  return out;
}

}  // namespace divtol

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "divtol/core.hpp"
#include "divtol/error.hpp"
#include "divtol/estimator.hpp"
#include "divtol/rng.hpp"

namespace divtol {

/// How a drawn Gamma shape that is not positive is handled.
enum class Positivity { reject_resample };

/// Whether the random Gamma shape is drawn once per exposure group per
/// dataset, or afresh for every observation.
enum class ShapeScope { per_dataset, per_observation };

constexpr std::string_view to_string(ShapeScope s) noexcept {
  return s == ShapeScope::per_dataset ? "per_dataset" : "per_observation";
}

/// Gamma behavioral policy: A | S=s ~ Gamma(shape, rate) where the shape is
/// shape_multiplier_exposed * e1 with e1 ~ N(mu1, sigma1_sq) for s = 1 and
/// e2 ~ N(mu2, sigma2_sq) for s = 0. sigma*_sq are variances.
struct PolicyConfig {
  double mu1 = 2.0;
  double sigma1_sq = 1.0;
  double mu2 = 2.0;
  double sigma2_sq = 4.0;
  double shape_multiplier_exposed = 2.0;
  double rate = 1.0;
  Positivity positivity = Positivity::reject_resample;
  ShapeScope shape_scope = ShapeScope::per_dataset;
};

inline constexpr std::size_t max_shape_rejections = 1'000'000;

inline void check_policy(const PolicyConfig& cfg) {
  require(std::isfinite(cfg.mu1) && std::isfinite(cfg.mu2), ErrorClass::configuration,
          "policy: means must be finite");
  require(cfg.sigma1_sq > 0.0 && cfg.sigma2_sq > 0.0 && std::isfinite(cfg.sigma1_sq) &&
              std::isfinite(cfg.sigma2_sq),
          ErrorClass::configuration, "policy: variances must be positive");
  require(cfg.rate > 0.0 && std::isfinite(cfg.rate), ErrorClass::configuration,
          "policy: rate must be positive");
  require(std::isfinite(cfg.shape_multiplier_exposed), ErrorClass::configuration,
          "policy: shape multiplier must be finite");
}

/// Draws a positive Gamma shape for state s, redrawing the normal until the
/// shape is positive.
inline double sample_shape(Exposure s, const PolicyConfig& cfg, Engine& rng) {
  const bool exposed = s == Exposure::exposed;
  std::normal_distribution<double> eps(exposed ? cfg.mu1 : cfg.mu2,
                                       std::sqrt(exposed ? cfg.sigma1_sq : cfg.sigma2_sq));
  const double scale = exposed ? cfg.shape_multiplier_exposed : 1.0;
  for (std::size_t attempt = 0; attempt < max_shape_rejections; ++attempt) {
    const double alpha = scale * eps(rng);
    if (alpha > 0.0) return alpha;
  }
  throw Error(ErrorClass::configuration,
              "policy: more than 1e6 consecutive non-positive Gamma shapes");
}

inline double sample_gamma(double shape, const PolicyConfig& cfg, Engine& rng) {
  std::gamma_distribution<double> gamma(shape, 1.0 / cfg.rate);
  // Very small shapes can underflow to exactly zero.
  for (;;) {
    const double a = gamma(rng);
    if (a > 0.0) return a;
  }
}

/// One action from the policy with a freshly drawn shape.
inline double sample_policy(Exposure s, const PolicyConfig& cfg, Engine& rng) {
  check_policy(cfg);
  return sample_gamma(sample_shape(s, cfg, rng), cfg, rng);
}

struct GroupShapes {
  double exposed = 0.0;
  double control = 0.0;
};

struct SimulatedDataset {
  Dataset data;
  /// Times the exposure vector was redrawn because a group came out empty.
  std::size_t assignment_redraws = 0;
  /// Shapes used, when drawn per dataset.
  std::optional<GroupShapes> shapes;
};

/// n scalar observations with S ~ Bernoulli(p_exposed) and actions from the
/// policy. The exposure vector is redrawn until both groups are present.
inline SimulatedDataset generate_dataset(const PolicyConfig& cfg, std::size_t n,
                                         double p_exposed, Engine& rng) {
  check_policy(cfg);
  require(n >= 2, ErrorClass::configuration, "generate_dataset: n must be at least 2");
  require(p_exposed > 0.0 && p_exposed < 1.0, ErrorClass::configuration,
          "generate_dataset: p_exposed must lie in (0, 1)");
  SimulatedDataset out;
  std::bernoulli_distribution coin(p_exposed);
  std::vector<Exposure> s(n);
  for (;;) {
    std::size_t exposed = 0;
    for (auto& x : s) {
      x = coin(rng) ? Exposure::exposed : Exposure::control;
      exposed += x == Exposure::exposed ? 1 : 0;
    }
    if (exposed > 0 && exposed < n) break;
    ++out.assignment_redraws;
  }
  if (cfg.shape_scope == ShapeScope::per_dataset) {
    GroupShapes g;
    g.exposed = sample_shape(Exposure::exposed, cfg, rng);
    g.control = sample_shape(Exposure::control, cfg, rng);
    out.shapes = g;
  }
  out.data.dimension = 1;
  out.data.observations.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double a;
    if (out.shapes) {
      a = sample_gamma(s[i] == Exposure::exposed ? out.shapes->exposed : out.shapes->control, cfg,
                       rng);
    } else {
      a = sample_gamma(sample_shape(s[i], cfg, rng), cfg, rng);
    }
    out.data.observations.push_back({"sim" + std::to_string(i), s[i], {a}});
  }
  return out;
}

/// Linear model A ~ b0 + b1 S. For a binary regressor the OLS solution is
/// the pair of group means.
struct AnovaFit {
  double b0 = 0.0;
  double b1 = 0.0;
  /// Residual sum of squares over n - 2; absent when n < 3.
  std::optional<double> sigma_sq;
};

inline AnovaFit fit_anova(const Dataset& ds) {
  require(ds.dimension == 1, ErrorClass::input, "fit_anova: actions must be scalar");
  detail::check_estimable(ds);
  double sum_e = 0.0, sum_c = 0.0;
  std::size_t n_e = 0, n_c = 0;
  for (const auto& o : ds.observations) {
    require(o.action.size() == 1 && std::isfinite(o.action[0]), ErrorClass::input,
            "fit_anova: observation '" + o.id + "' lacks a finite scalar action");
    if (o.state == Exposure::exposed) {
      sum_e += o.action[0];
      ++n_e;
    } else {
      sum_c += o.action[0];
      ++n_c;
    }
  }
  AnovaFit fit;
  const double mean_e = sum_e / static_cast<double>(n_e);
  fit.b0 = sum_c / static_cast<double>(n_c);
  fit.b1 = mean_e - fit.b0;
  if (ds.size() >= 3) {
    double rss = 0.0;
    for (const auto& o : ds.observations) {
      const double r = o.action[0] - (o.state == Exposure::exposed ? mean_e : fit.b0);
      rss += r * r;
    }
    fit.sigma_sq = rss / static_cast<double>(ds.size() - 2);
  }
  return fit;
}

/// Replaces every action vector by the mean of its components, the scalar
/// summary used before fitting the linear model to binned data.
inline Dataset summarize_mean(const Dataset& ds) {
  Dataset out;
  out.dimension = 1;
  out.observations.reserve(ds.size());
  for (const auto& o : ds.observations) {
    require(!o.action.empty(), ErrorClass::input, "summarize_mean: empty action");
    double sum = 0.0;
    for (double a : o.action) sum += a;
    out.observations.push_back({o.id, o.state, {sum / static_cast<double>(o.action.size())}});
  }
  return out;
}

/// Draws one dataset of size n, so the study and the probes can run against
/// any data source.
using DatasetSampler = std::function<Dataset(std::size_t n, Engine& rng)>;

inline DatasetSampler policy_sampler(const PolicyConfig& policy, double p_exposed = 0.5) {
  check_policy(policy);
  return [policy, p_exposed](std::size_t n, Engine& rng) {
    return generate_dataset(policy, n, p_exposed, rng).data;
  };
}

struct McConfig {
  std::size_t n_per_dataset = 50;
  std::size_t num_datasets = 2000;
  double p_exposed = 0.5;
  std::uint64_t seed = 0;
  double optimal_action = 0.0;
  /// Worker threads; results do not depend on this.
  std::size_t workers = 1;
};

struct McResult {
  double frac_theta_below_half = 0.0;
  double frac_b1_above_zero = 0.0;
  /// Fraction of replicates where theta < 0.5 exactly when b1 > 0.
  double frac_direction_agree = 0.0;
  std::vector<double> theta_estimates;
  std::vector<double> b1_estimates;
  std::size_t degenerate_count = 0;
  std::size_t assignment_redraws = 0;
};

namespace detail {

inline McResult run_monte_carlo(const McConfig& cfg,
                                const std::function<SimulatedDataset(Engine&)>& draw) {
  const auto spec = DivergenceSpec::scalar(cfg.optimal_action);

  struct Slot {
    double theta = 0.0;
    double b1 = 0.0;
    bool degenerate = false;
    std::size_t redraws = 0;
  };
  std::vector<Slot> slots(cfg.num_datasets);
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t r = begin; r < slots.size(); r += stride) {
      auto rng = substream(cfg.seed, {r});
      auto sim = draw(rng);
      slots[r].redraws = sim.assignment_redraws;
      try {
        slots[r].theta = estimate_theta(sim.data, spec).theta_e;
      } catch (const Error& e) {
        if (e.error_class() != ErrorClass::degenerate) throw;
        slots[r].degenerate = true;
        continue;
      }
      slots[r].b1 = fit_anova(sim.data).b1;
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, cfg.workers);
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          work(w, workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  McResult out;
  std::size_t below = 0, above = 0, agree = 0;
  for (const auto& s : slots) {
    out.assignment_redraws += s.redraws;
    if (s.degenerate) {
      ++out.degenerate_count;
      continue;
    }
    out.theta_estimates.push_back(s.theta);
    out.b1_estimates.push_back(s.b1);
    below += s.theta < 0.5 ? 1 : 0;
    above += s.b1 > 0.0 ? 1 : 0;
    agree += (s.theta < 0.5) == (s.b1 > 0.0) ? 1 : 0;
  }
  if (out.theta_estimates.empty())
    throw Error(ErrorClass::study, "monte carlo: every replicate was degenerate");
  const auto kept = static_cast<double>(out.theta_estimates.size());
  out.frac_theta_below_half = static_cast<double>(below) / kept;
  out.frac_b1_above_zero = static_cast<double>(above) / kept;
  out.frac_direction_agree = static_cast<double>(agree) / kept;
  return out;
}

inline void check_mc(const McConfig& cfg) {
  require(cfg.n_per_dataset >= 2, ErrorClass::configuration, "monte carlo: n must be at least 2");
  require(cfg.num_datasets >= 1, ErrorClass::configuration,
          "monte carlo: need at least one dataset");
  require(cfg.p_exposed > 0.0 && cfg.p_exposed < 1.0, ErrorClass::configuration,
          "monte carlo: p_exposed must lie in (0, 1)");
  require(std::isfinite(cfg.optimal_action), ErrorClass::configuration,
          "monte carlo: optimal action must be finite");
}

}  // namespace detail

/// Monte-Carlo comparison of the tolerance estimator and the linear-model
/// exposure coefficient. Replicate r uses substream(seed, {r}); degenerate
/// replicates are counted and excluded from both lists.
inline McResult run_monte_carlo(const McConfig& cfg, const PolicyConfig& policy) {
  check_policy(policy);
  detail::check_mc(cfg);
  return detail::run_monte_carlo(cfg, [&](Engine& rng) {
    return generate_dataset(policy, cfg.n_per_dataset, cfg.p_exposed, rng);
  });
}

/// Same study over an arbitrary data source; p_exposed is unused.
inline McResult run_monte_carlo(const McConfig& cfg, const DatasetSampler& sampler) {
  detail::check_mc(cfg);
  return detail::run_monte_carlo(cfg, [&](Engine& rng) {
    return SimulatedDataset{sampler(cfg.n_per_dataset, rng), 0, std::nullopt};
  });
}

struct SweepRow {
  std::size_t n = 0;
  double mean_theta = 0.0;
  double sd_theta = 0.0;
  std::size_t degenerate = 0;
};

namespace detail {

inline void check_ns(const std::vector<std::size_t>& ns) {
  require(!ns.empty(), ErrorClass::configuration, "sample sizes: empty list");
  for (std::size_t k = 0; k < ns.size(); ++k) {
    require(ns[k] >= 2, ErrorClass::configuration, "sample sizes must be at least 2");
    require(k == 0 || ns[k] >= ns[k - 1], ErrorClass::configuration,
            "sample sizes must be non-decreasing");
  }
}

inline std::pair<double, double> mean_sd(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

}  // namespace detail

/// Spread of theta estimates across replicates for each sample size.
/// Replicate r at size n draws from substream(seed, {1, n, r}).
inline std::vector<SweepRow> consistency_sweep(const DatasetSampler& sampler,
                                               const std::vector<std::size_t>& ns,
                                               std::size_t replicates, std::uint64_t seed,
                                               double optimal_action = 0.0) {
  detail::check_ns(ns);
  require(replicates >= 2, ErrorClass::configuration, "consistency sweep: need >= 2 replicates");
  const auto spec = DivergenceSpec::scalar(optimal_action);
  std::vector<SweepRow> rows;
  for (std::size_t n : ns) {
    SweepRow row;
    row.n = n;
    std::vector<double> thetas;
    for (std::size_t r = 0; r < replicates; ++r) {
      auto rng = substream(seed, {1, n, r});
      try {
        thetas.push_back(estimate_theta(sampler(n, rng), spec).theta_e);
      } catch (const Error& e) {
        if (e.error_class() != ErrorClass::degenerate) throw;
        ++row.degenerate;
      }
    }
    std::tie(row.mean_theta, row.sd_theta) = detail::mean_sd(thetas);
    rows.push_back(row);
  }
  return rows;
}

inline std::vector<SweepRow> consistency_sweep(const PolicyConfig& policy,
                                               const std::vector<std::size_t>& ns,
                                               std::size_t replicates, std::uint64_t seed) {
  return consistency_sweep(policy_sampler(policy), ns, replicates, seed);
}

struct ConvergenceRow {
  std::size_t n = 0;
  /// Mean of the uncentered objective over replicates.
  double mean_objective = 0.0;
  /// Mean and sd of sqrt(n) (objective - reference).
  double mean_scaled = 0.0;
  double sd_scaled = 0.0;
};

struct ConvergenceProbe {
  double theta = 0.0;
  std::size_t oracle_n = 0;
  /// Objective of one large oracle replicate, the stand-in for its limit.
  double reference = 0.0;
  std::vector<ConvergenceRow> rows;
};

inline constexpr std::size_t default_oracle_n = 1'000'000;

/// Centered, sqrt(n)-scaled objective at a fixed theta. The reference value
/// comes from a single oracle replicate of size oracle_n drawn from
/// substream(seed, {2, oracle_n}); replicate r at size n draws from
/// substream(seed, {3, n, r}).
inline ConvergenceProbe objective_convergence_probe(const DatasetSampler& sampler,
                                                    const std::vector<std::size_t>& ns,
                                                    std::size_t replicates, double theta_fixed,
                                                    std::uint64_t seed,
                                                    std::size_t oracle_n = default_oracle_n,
                                                    double optimal_action = 0.0) {
  detail::check_ns(ns);
  detail::check_theta(theta_fixed);
  require(replicates >= 2, ErrorClass::configuration, "convergence probe: need >= 2 replicates");
  require(oracle_n >= 2, ErrorClass::configuration, "convergence probe: oracle n too small");
  const auto spec = DivergenceSpec::scalar(optimal_action);
  ConvergenceProbe probe;
  probe.theta = theta_fixed;
  probe.oracle_n = oracle_n;
  {
    auto rng = substream(seed, {2, oracle_n});
    probe.reference = variance_objective(theta_fixed, sampler(oracle_n, rng), spec);
  }
  for (std::size_t n : ns) {
    std::vector<double> raw, scaled;
    for (std::size_t r = 0; r < replicates; ++r) {
      auto rng = substream(seed, {3, n, r});
      const double psi = variance_objective(theta_fixed, sampler(n, rng), spec);
      raw.push_back(psi);
      scaled.push_back(std::sqrt(static_cast<double>(n)) * (psi - probe.reference));
    }
    ConvergenceRow row;
    row.n = n;
    row.mean_objective = detail::mean_sd(raw).first;
    std::tie(row.mean_scaled, row.sd_scaled) = detail::mean_sd(scaled);
    probe.rows.push_back(row);
  }
  return probe;
}

inline ConvergenceProbe objective_convergence_probe(const PolicyConfig& policy,
                                                    const std::vector<std::size_t>& ns,
                                                    std::size_t replicates, double theta_fixed,
                                                    std::uint64_t seed,
                                                    std::size_t oracle_n = default_oracle_n) {
  return objective_convergence_probe(policy_sampler(policy), ns, replicates, theta_fixed, seed,
                                     oracle_n);
}

}  // namespace divtol

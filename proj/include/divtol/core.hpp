#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "divtol/error.hpp"

namespace divtol {

/// Binary exposure indicator S.
enum class Exposure : std::uint8_t { control = 0, exposed = 1 };

constexpr double indicator(Exposure s) noexcept {
  return s == Exposure::exposed ? 1.0 : 0.0;
}

/// One animal: exposure state plus its (possibly session-averaged) action.
struct Observation {
  std::string id;
  Exposure state = Exposure::control;
  std::vector<double> action;
};

struct Dataset {
  std::vector<Observation> observations;
  std::size_t dimension = 1;

  std::size_t size() const noexcept { return observations.size(); }

  std::size_t count(Exposure s) const noexcept {
    std::size_t c = 0;
    for (const auto& o : observations) c += o.state == s ? 1 : 0;
    return c;
  }

  bool has_both_groups() const noexcept {
    return count(Exposure::exposed) > 0 && count(Exposure::control) > 0;
  }
};

enum class Norm { l2_squared, l1 };

/// Fully defines the divergence D(A) of an action from the optimal action.
/// An empty weight vector means unit weights.
struct DivergenceSpec {
  std::vector<double> optimal;
  Norm norm = Norm::l2_squared;
  std::vector<double> weights;

  std::size_t dimension() const noexcept { return optimal.size(); }

  static DivergenceSpec scalar(double optimal_action, Norm norm = Norm::l2_squared) {
    return DivergenceSpec{{optimal_action}, norm, {}};
  }
};

inline bool all_finite(std::span<const double> xs) noexcept {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void check_spec(const DivergenceSpec& spec) {
  require(!spec.optimal.empty(), ErrorClass::input, "divergence spec: empty optimal action");
  require(all_finite(spec.optimal), ErrorClass::input, "divergence spec: non-finite optimal action");
  if (spec.weights.empty()) return;
  require(spec.weights.size() == spec.optimal.size(), ErrorClass::input,
          "divergence spec: weights length " + std::to_string(spec.weights.size()) +
              " != optimal length " + std::to_string(spec.optimal.size()));
  for (double w : spec.weights)
    require(std::isfinite(w) && w >= 0.0, ErrorClass::input,
            "divergence spec: weights must be finite and nonnegative");
}

/// Weighted divergence: sum of (w_j (a_j - a*_j))^2 for L2_SQUARED, sum of
/// |w_j (a_j - a*_j)| for L1.
inline double divergence(std::span<const double> action, const DivergenceSpec& spec) {
  check_spec(spec);
  require(action.size() == spec.dimension(), ErrorClass::input,
          "divergence: action length " + std::to_string(action.size()) +
              " != optimal length " + std::to_string(spec.dimension()));
  require(all_finite(action), ErrorClass::input, "divergence: non-finite action");
  const bool weighted = !spec.weights.empty();
  double total = 0.0;
  for (std::size_t j = 0; j < action.size(); ++j) {
    const double w = weighted ? spec.weights[j] : 1.0;
    const double r = w * (action[j] - spec.optimal[j]);
    total += spec.norm == Norm::l2_squared ? r * r : std::abs(r);
  }
  return total;
}

/// Group-free reward; higher is closer to optimal.
inline double objective_reward(std::span<const double> action, const DivergenceSpec& spec) {
  return -divergence(action, spec);
}

/// Tolerance parameter for the exposed group; the control tolerance is
/// always 1 - theta_e.
class RewardModel {
 public:
  explicit RewardModel(double theta_e) : theta_e_(theta_e) {
    require(std::isfinite(theta_e) && theta_e >= 0.0 && theta_e <= 1.0, ErrorClass::input,
            "reward model: theta_e must lie in [0, 1]");
  }

  double theta_e() const noexcept { return theta_e_; }
  double theta_c() const noexcept { return 1.0 - theta_e_; }

  /// theta_e for exposed animals, 1 - theta_e for controls.
  double weight(Exposure s) const noexcept {
    const double x = indicator(s);
    return theta_e_ * x + (1.0 - theta_e_) * (1.0 - x);
  }

 private:
  double theta_e_;
};

inline double subjective_reward(const RewardModel& model, const Observation& obs,
                                const DivergenceSpec& spec) {
  return -divergence(obs.action, spec) * model.weight(obs.state);
}

enum class ViolationKind {
  zero_dimension,
  too_few_observations,
  dimension_mismatch,
  non_finite_action,
  missing_exposed_group,
  missing_control_group,
};

struct Violation {
  ViolationKind kind;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool clean() const noexcept { return violations.empty(); }

  bool contains(ViolationKind kind) const noexcept {
    for (const auto& v : violations)
      if (v.kind == kind) return true;
    return false;
  }
};

/// Lists every violation of the dataset invariants; an empty report means
/// the dataset is estimable.
inline ValidationReport validate_dataset(const Dataset& ds) {
  ValidationReport report;
  auto add = [&](ViolationKind k, std::string msg) {
    report.violations.push_back({k, std::move(msg)});
  };
  if (ds.dimension == 0) add(ViolationKind::zero_dimension, "dataset dimension is zero");
  if (ds.size() < 2)
    add(ViolationKind::too_few_observations,
        "need at least two observations, have " + std::to_string(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& o = ds.observations[i];
    if (o.action.size() != ds.dimension)
      add(ViolationKind::dimension_mismatch,
          "observation '" + o.id + "' has action length " + std::to_string(o.action.size()) +
              ", dataset dimension is " + std::to_string(ds.dimension));
    if (!all_finite(o.action))
      add(ViolationKind::non_finite_action, "observation '" + o.id + "' has a non-finite action");
  }
  if (ds.count(Exposure::exposed) == 0)
    add(ViolationKind::missing_exposed_group, "missing exposed group");
  if (ds.count(Exposure::control) == 0)
    add(ViolationKind::missing_control_group, "missing control group");
  return report;
}

/// Divergence of every observation. Throws an input error when the dataset
/// has mismatched dimensions or non-finite actions.
inline std::vector<double> divergences(const Dataset& ds, const DivergenceSpec& spec) {
  require(ds.dimension == spec.dimension(), ErrorClass::input,
          "dataset dimension " + std::to_string(ds.dimension) +
              " != divergence spec dimension " + std::to_string(spec.dimension()));
  std::vector<double> out;
  out.reserve(ds.size());
  for (const auto& o : ds.observations) out.push_back(divergence(o.action, spec));
  return out;
}

}  // namespace divtol

#pragma once

// Test-only fixtures and reference computations. Nothing here calls into the
// estimator; the oracles are written out independently.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "divtol/divtol.hpp"

namespace fixtures {

using divtol::Dataset;
using divtol::Exposure;

inline Dataset scalar_dataset(std::initializer_list<std::pair<double, int>> rows) {
  Dataset ds;
  ds.dimension = 1;
  int k = 0;
  for (auto [a, s] : rows)
    ds.observations.push_back({"m" + std::to_string(k++), s ? Exposure::exposed : Exposure::control, {a}});
  return ds;
}

/// The two-animal identifiability example: exposed a = 3, control a = 2.
inline Dataset two_mouse() { return scalar_dataset({{3.0, 1}, {2.0, 0}}); }

/// Random dataset with both groups present.
inline Dataset random_dataset(std::mt19937_64& rng, std::size_t n, std::size_t d,
                              double spread = 3.0) {
  std::uniform_real_distribution<double> u(-spread, spread);
  Dataset ds;
  ds.dimension = d;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> a(d);
    for (auto& x : a) x = u(rng);
    const auto s = i == 0 ? Exposure::exposed
                 : i == 1 ? Exposure::control
                          : (rng() & 1 ? Exposure::exposed : Exposure::control);
    ds.observations.push_back({"r" + std::to_string(i), s, std::move(a)});
  }
  std::shuffle(ds.observations.begin(), ds.observations.end(), rng);
  return ds;
}

inline divtol::DivergenceSpec random_spec(std::mt19937_64& rng, std::size_t d, bool weighted) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), w(0.0, 2.0);
  divtol::DivergenceSpec spec;
  spec.optimal.resize(d);
  for (auto& x : spec.optimal) x = u(rng);
  if (weighted) {
    spec.weights.resize(d);
    for (auto& x : spec.weights) x = w(rng);
  }
  return spec;
}

/// Divergence written with standard algorithms instead of the loop in core.
inline double reference_divergence(const std::vector<double>& a, const divtol::DivergenceSpec& spec) {
  std::vector<double> r(a.size());
  std::transform(a.begin(), a.end(), spec.optimal.begin(), r.begin(), std::minus<>());
  if (!spec.weights.empty())
    std::transform(r.begin(), r.end(), spec.weights.begin(), r.begin(), std::multiplies<>());
  if (spec.norm == divtol::Norm::l2_squared) return std::inner_product(r.begin(), r.end(), r.begin(), 0.0);
  return std::accumulate(r.begin(), r.end(), 0.0, [](double acc, double x) { return acc + std::fabs(x); });
}

inline double reference_reward(double theta, const divtol::Observation& o,
                               const divtol::DivergenceSpec& spec) {
  const double w = o.state == Exposure::exposed ? theta : 1.0 - theta;
  return -reference_divergence(o.action, spec) * w;
}

/// Brute-force double sum over ordered pairs.
inline double brute_pairwise(double theta, const Dataset& ds, const divtol::DivergenceSpec& spec) {
  double total = 0.0;
  for (const auto& a : ds.observations)
    for (const auto& b : ds.observations) {
      const double diff = reference_reward(theta, a, spec) - reference_reward(theta, b, spec);
      total += diff * diff;
    }
  const double n = static_cast<double>(ds.size());
  return total / (n * n);
}

/// Exhaustive argmin of the brute double sum over a uniform grid.
inline double brute_grid_argmin(const Dataset& ds, const divtol::DivergenceSpec& spec, double step) {
  const auto steps = static_cast<std::size_t>(std::llround(1.0 / step));
  double best_theta = 0.0, best = brute_pairwise(0.0, ds, spec);
  for (std::size_t k = 1; k <= steps; ++k) {
    const double t = std::min(1.0, static_cast<double>(k) * step);
    const double v = brute_pairwise(t, ds, spec);
    if (v < best) {
      best = v;
      best_theta = t;
    }
  }
  return best_theta;
}

/// Fixed-interval study generator: exposed animals press at a flat, high
/// rate in every bin; controls show a scallop that ramps toward the end of
/// the interval. Counts are Poisson with the per-bin mean of the group.
struct StudyFixture {
  divtol::ExposureMap exposures;
  std::vector<divtol::BinnedSession> sessions;
};

inline std::vector<double> flat_profile(std::size_t d, double rate) { return std::vector<double>(d, rate); }

inline std::vector<double> scallop_profile(std::size_t d, double peak) {
  std::vector<double> p(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double x = (static_cast<double>(j) + 0.5) / static_cast<double>(d);
    p[j] = 0.05 + peak * x * x * x;
  }
  return p;
}

inline StudyFixture study_fixture(std::uint64_t seed, std::size_t n_exposed, std::size_t n_control,
                                  std::size_t sessions, std::size_t d = 12,
                                  double exposed_rate = 2.0, double control_peak = 2.5) {
  std::mt19937_64 rng(seed);
  StudyFixture f;
  auto add = [&](const std::string& id, Exposure s, const std::vector<double>& profile) {
    f.exposures[id] = s;
    for (std::size_t k = 1; k <= sessions; ++k) {
      divtol::BinnedSession b{id, static_cast<std::int64_t>(k), std::vector<std::int64_t>(d)};
      for (std::size_t j = 0; j < d; ++j)
        b.counts[j] = std::poisson_distribution<std::int64_t>(profile[j])(rng);
      f.sessions.push_back(std::move(b));
    }
  };
  for (std::size_t i = 0; i < n_exposed; ++i) add("e" + std::to_string(i), Exposure::exposed, flat_profile(d, exposed_rate));
  for (std::size_t i = 0; i < n_control; ++i) add("c" + std::to_string(i), Exposure::control, scallop_profile(d, control_peak));
  return f;
}

/// Random press times for a few mice over several sessions.
inline std::vector<divtol::PressEvent> random_events(std::uint64_t seed, std::size_t count,
                                                     double session_length_s = 1800.0) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> mouse(0, 7), session(1, 5);
  std::uniform_real_distribution<double> t(0.0, session_length_s);
  std::vector<divtol::PressEvent> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back({"m" + std::to_string(mouse(rng)), session(rng), t(rng)});
  return out;
}

/// Largest |crossing - estimate| seen over twenty random study fixtures on
/// the default 201-point grid (0.0110), rounded up. Frozen as a regression bound.
inline constexpr double crossing_gap_bound = 0.012;

/// "1,0,...,0": optimal action that presses once, at the start of the interval.
inline std::string first_bin_optimal(std::size_t d = 12) {
  std::string s = "1";
  for (std::size_t j = 1; j < d; ++j) s += ",0";
  return s;
}

struct StudyFiles {
  std::string exposures;
  std::string bins;
};

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::size_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("divtol_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }

  std::string write(const std::string& name, const std::string& content) const {
    const auto p = file(name);
    std::ofstream(p, std::ios::binary) << content;
    return p;
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline StudyFiles write_study(const TempDir& dir, const StudyFixture& f, const std::string& stem = "study") {
  std::ostringstream e, b;
  divtol::write_exposures(e, f.exposures);
  divtol::write_binned_counts(b, f.sessions, {});
  return {dir.write(stem + "_exposures.csv", e.str()), dir.write(stem + "_bins.csv", b.str())};
}

}  // namespace fixtures

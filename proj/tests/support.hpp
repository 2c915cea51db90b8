#pragma once

#include "convar/data.hpp"
#include "convar/geometry.hpp"
#include "convar/random.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace testing {

using namespace convar;

inline const double kMissing = std::numeric_limits<double>::quiet_NaN();

inline StationSet make_sites(const std::vector<Point>& coords) {
  std::vector<Site> sites;
  for (std::size_t i = 0; i < coords.size(); ++i) sites.push_back({"S" + std::to_string(i + 1), coords[i]});
  return StationSet(std::move(sites));
}

// amounts: T x N rainfall, NaN = missing. Covariates are iid N(0,1) for
// `cover` >= T steps; the wind is (wx, wy) m/s plus a small deterministic wobble.
inline Dataset make_dataset(const std::vector<Point>& coords, const Eigen::MatrixXd& amounts, int covariates,
                            std::uint64_t seed, Eigen::Index cover = -1, Eigen::Vector2d wind = {3.0, 1.0}) {
  const Eigen::Index steps = amounts.rows(), n = amounts.cols();
  if (cover < steps) cover = steps;
  Dataset d;
  d.stations = make_sites(coords);
  d.observations = ObservationGrid(steps, n);
  for (Eigen::Index t = 1; t <= steps; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double a = amounts(t - 1, i);
      d.observations.at(t, i) = std::isnan(a) ? Observation::missing() : Observation::from_amount(a);
    }
  }
  Random rng(seed, 99);
  std::vector<std::string> names;
  for (int k = 0; k < covariates; ++k) names.push_back("x" + std::to_string(k + 1));
  std::vector<Eigen::MatrixXd> per_step;
  std::vector<Eigen::Vector2d> w;
  for (Eigen::Index t = 1; t <= cover; ++t) {
    Eigen::MatrixXd x(n, covariates);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int k = 0; k < covariates; ++k) x(i, k) = rng.normal();
    }
    per_step.push_back(x);
    w.push_back(wind + 0.3 * Eigen::Vector2d(std::sin(0.7 * double(t)), std::cos(0.4 * double(t))));
  }
  d.covariates = CovariateGrid(names, per_step);
  d.wind = WindSeries(w);
  return d;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("convar_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Running mean and variance.
struct Moments {
  long n = 0;
  double mean = 0.0, m2 = 0.0;
  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / double(n);
    m2 += d * (x - mean);
  }
  double var() const { return n > 1 ? m2 / double(n - 1) : 0.0; }
  double se() const { return std::sqrt(var() / double(n)); }
};

}  // namespace testing

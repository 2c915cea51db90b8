#pragma once

#include "convar/data.hpp"
#include "convar/mcmc.hpp"
#include "convar/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace convar {

/// Domain wind in m/s: constant `mean`, or an AR(1) around it on each
/// component with coefficient `ar` and stationary sd `sd`.
struct WindSpec {
  enum class Kind { constant, ar1 } kind = Kind::ar1;
  Eigen::Vector2d mean = Eigen::Vector2d(4.0, 2.0);
  double ar = 0.8;
  double sd = 2.0;
};

struct SynthSpec {
  Params params;
  ModelClass model = ModelClass::conv_drift;
  /// Explicit layout; otherwise `n_sites` uniform in [0, box]^2.
  std::optional<StationSet> sites;
  int n_sites = 15;
  double box = 200.0;
  Eigen::Index steps = 200;
  /// Covariate names; beta must have names.size() + 1 entries.
  std::vector<std::string> covariates;
  WindSpec wind;
  double missing_rate = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthResult {
  Dataset data;
  LatentState truth;
  Eigen::VectorXd areas;
  /// max over t of the spectral radius of phi G_t.
  double spectral_radius = 0.0;
};

/// Throws NumericalError naming the spectral radius when phi G_t is not stable.
SynthResult simulate(const SynthSpec& spec);

/// Covariate names and coefficients of the fitted drift model, the remaining
/// parameters at their reported posterior modes.
Params reference_params();
std::vector<std::string> reference_covariates();

/// phi giving max_t spectral radius `target` for the layout and wind of `spec`.
double phi_for_radius(const SynthSpec& spec, double target);

/// 15 sites in a 200 x 200 km box, T = 200, reference parameters with phi
/// rescaled to spectral radius 0.6.
SynthSpec default_scenario(std::uint64_t seed = 1);

}  // namespace convar

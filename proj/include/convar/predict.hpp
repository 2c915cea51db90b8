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

enum class TargetClass { station, point, areal };

std::string to_string(TargetClass c);

/// One predictive quantity: rainfall at `time` given observations through
/// `origin`. Station targets name a station index, point targets a
/// coordinate, areal targets carry Voronoi weights over the stations.
struct Target {
  Eigen::Index origin = 0;
  Eigen::Index time = 0;
  std::string label;
  TargetClass kind = TargetClass::station;
  Eigen::Index station = -1;
  Point coord = Point::Zero();
  Eigen::VectorXd weights;

  Eigen::Index lead() const { return time - origin; }
  static Target at_station(Eigen::Index origin, Eigen::Index time, Eigen::Index station, std::string label);
  static Target at_point(Eigen::Index origin, Eigen::Index time, const Point& coord, std::string label);
  static Target areal(Eigen::Index origin, Eigen::Index time, Eigen::VectorXd weights, std::string label);
};

/// Samples of rainfall in mm: row k of `samples` belongs to targets[k], column
/// j to posterior draw draw_indices[j].
struct PredictiveEnsemble {
  std::vector<Target> targets;
  Eigen::MatrixXd samples;
  std::vector<std::size_t> draw_indices;
  std::vector<std::string> warnings;
};

struct ForecastConfig {
  /// Gibbs sweeps of (W, xi) after each newly observed step past training end.
  int refresh_sweeps = 20;
  /// Number of trailing steps the refresh sweeps revise.
  int lag = 8;
  std::uint64_t seed = 1;
  int workers = 1;

  void validate() const;
};

/// `wanted` evenly strided indices into `available` draws (all of them when fewer).
std::vector<std::size_t> subsample_indices(std::size_t available, std::size_t wanted = 200);

/// Joint predictive sampling for a set of targets. Each posterior draw (with
/// latent snapshot over steps 0..train_end) yields one sample per target.
/// Observations after train_end and up to each origin condition the latent
/// path with theta frozen; forecasts propagate the VAR with fresh noise.
/// Point targets use the augmented-model conditional and take covariates of
/// the nearest station.
PredictiveEnsemble predict_ahead(const Dataset& data, const Eigen::VectorXd& areas, ModelClass model,
                                 Eigen::Index train_end, const std::vector<Draw>& draws,
                                 std::vector<Target> targets, const ForecastConfig& config);

/// Predictive samples at unobserved sites for an observed step t <= train_end.
PredictiveEnsemble predict_new_sites(const Dataset& data, const Eigen::VectorXd& areas, ModelClass model,
                                     Eigen::Index train_end, const std::vector<Draw>& draws,
                                     const std::vector<Point>& sites, Eigen::Index t, const ForecastConfig& config);

/// Matrices of the model augmented by M new sites at step t:
///   (xi_t, xi*_t) = phi (G_t; G*_t) xi_{t-1} + (eps_t, eps*_t),
///   xi_{t+1} = phi (H_{t+1}, H*_{t+1}) (xi_t, xi*_t) + eps_{t+1}.
struct AugmentedSystem {
  Eigen::MatrixXd g;       // N x N
  Eigen::MatrixXd g_star;  // M x N
  Eigen::MatrixXd h;       // N x N
  Eigen::MatrixXd h_star;  // N x M
  Eigen::MatrixXd v;       // (N + M) x (N + M) innovation correlation
};

/// `station_areas` weight sources at t-1 (stations only); `augmented_areas`
/// (N + M) weight sources at t, taken from the tessellation including the new sites.
AugmentedSystem augmented_system(const Eigen::MatrixX2d& stations, const Eigen::VectorXd& station_areas,
                                 const Eigen::MatrixX2d& new_sites, const Eigen::VectorXd& augmented_areas,
                                 const Eigen::Matrix2d& sigma_inv, const Eigen::Vector2d& mu_t,
                                 const Eigen::Vector2d& mu_next, double rho0);

struct GaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Law of xi*_t given xi_{t-1}, xi_t and, when supplied, xi_{t+1}.
GaussianMoments new_site_conditional(const AugmentedSystem& sys, double phi, double sigma2,
                                     const Eigen::VectorXd& xi_prev, const Eigen::VectorXd& xi_t,
                                     const std::optional<Eigen::VectorXd>& xi_next);

struct ArealSamples {
  Eigen::RowVectorXd samples;
  bool renormalized = false;
};

/// Weighted sum of member samples (rows) per column. Weights off 1 by more
/// than 1e-9 are rescaled to sum to 1.
ArealSamples predict_areal(const Eigen::MatrixXd& member_samples, Eigen::VectorXd weights);

}  // namespace convar

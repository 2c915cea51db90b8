#pragma once

#include "convar/geometry.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace convar {

/// Converts a wind speed in m/s into km travelled during one 3 h step.
inline constexpr double kKmPerStepPerMps = 3600.0 * 3.0 / 1000.0;

enum class ObsKind { positive, zero, missing };

struct Observation {
  ObsKind kind = ObsKind::missing;
  double amount = 0.0;  // mm, > 0 only for ObsKind::positive

  static Observation positive(double mm);
  static Observation zero() { return {ObsKind::zero, 0.0}; }
  static Observation missing() { return {ObsKind::missing, 0.0}; }
  /// Maps an amount to Positive/Zero; negative amounts are rejected.
  static Observation from_amount(double mm);
};

/// Rainfall at N stations for time steps 1..T. Row r holds time step r + 1;
/// the latent field index 0 is the initial state and carries no observation.
class ObservationGrid {
 public:
  ObservationGrid() = default;
  ObservationGrid(Eigen::Index steps, Eigen::Index stations);

  Eigen::Index steps() const { return steps_; }
  Eigen::Index stations() const { return stations_; }

  /// `t` is the time step in 1..T.
  const Observation& at(Eigen::Index t, Eigen::Index i) const { return cells_[index(t, i)]; }
  Observation& at(Eigen::Index t, Eigen::Index i) { return cells_[index(t, i)]; }

  /// Copy restricted to steps 1..last.
  ObservationGrid head(Eigen::Index last) const;
  Eigen::Index count(ObsKind kind) const;

 private:
  std::size_t index(Eigen::Index t, Eigen::Index i) const;

  Eigen::Index steps_ = 0;
  Eigen::Index stations_ = 0;
  std::vector<Observation> cells_;
};

struct Standardization {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
};

/// Regressors x_t(s_i) for time steps 1..T (row index t - 1). The design
/// matrix prepends an intercept column, so beta has names().size() + 1 entries.
class CovariateGrid {
 public:
  CovariateGrid() = default;
  CovariateGrid(std::vector<std::string> names, std::vector<Eigen::MatrixXd> per_step);

  Eigen::Index steps() const { return static_cast<Eigen::Index>(values_.size()); }
  Eigen::Index covariates() const { return static_cast<Eigen::Index>(names_.size()); }
  Eigen::Index stations() const { return values_.empty() ? 0 : values_.front().rows(); }
  const std::vector<std::string>& names() const { return names_; }
  /// Coefficient labels: "intercept" followed by the covariate names.
  std::vector<std::string> coefficient_names() const;

  /// N x k regressors at step t (1-based).
  const Eigen::MatrixXd& at(Eigen::Index t) const;
  /// N x (k + 1) design matrix [1, x_t] at step t.
  Eigen::MatrixXd design(Eigen::Index t) const;

  /// Mean and sd per covariate over steps 1..last.
  Standardization statistics(Eigen::Index last) const;
  CovariateGrid standardized(const Standardization& s) const;

 private:
  std::vector<std::string> names_;
  std::vector<Eigen::MatrixXd> values_;
};

/// Domain-averaged wind in m/s for time steps 1..T.
class WindSeries {
 public:
  WindSeries() = default;
  explicit WindSeries(std::vector<Eigen::Vector2d> mps);

  Eigen::Index steps() const { return static_cast<Eigen::Index>(mps_.size()); }
  const Eigen::Vector2d& at(Eigen::Index t) const { return mps_[static_cast<std::size_t>(t - 1)]; }
  /// Wind at step t expressed in km per time step.
  Eigen::Vector2d displacement(Eigen::Index t) const { return kKmPerStepPerMps * at(t); }
  const std::vector<Eigen::Vector2d>& values() const { return mps_; }

 private:
  std::vector<Eigen::Vector2d> mps_;
};

/// Everything the sampler and predictor read. Covariates and wind may extend
/// past the last observation (forecast horizon).
struct Dataset {
  StationSet stations;
  ObservationGrid observations;
  CovariateGrid covariates;
  WindSeries wind;

  /// Checks that shapes agree and that covariates/wind cover steps 1..through.
  void validate(Eigen::Index through) const;
};

}  // namespace convar

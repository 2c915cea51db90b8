#include "convar/data.hpp"

#include "convar/error.hpp"

#include <cmath>

namespace convar {

Observation Observation::positive(double mm) {
  if (!(mm > 0.0) || !std::isfinite(mm)) throw ValidationError("positive observation must be > 0 and finite");
  return {ObsKind::positive, mm};
}

Observation Observation::from_amount(double mm) {
  if (!std::isfinite(mm)) throw ValidationError("rainfall amount is not finite");
  if (mm < 0.0) throw ValidationError("negative rainfall amount " + std::to_string(mm));
  return mm > 0.0 ? positive(mm) : zero();
}

ObservationGrid::ObservationGrid(Eigen::Index steps, Eigen::Index stations)
    : steps_(steps), stations_(stations), cells_(static_cast<std::size_t>(steps * stations)) {}

std::size_t ObservationGrid::index(Eigen::Index t, Eigen::Index i) const {
  if (t < 1 || t > steps_ || i < 0 || i >= stations_) {
    throw std::out_of_range("observation index (" + std::to_string(t) + ", " + std::to_string(i) + ") out of range");
  }
  return static_cast<std::size_t>((t - 1) * stations_ + i);
}

ObservationGrid ObservationGrid::head(Eigen::Index last) const {
  if (last < 0 || last > steps_) throw std::out_of_range("ObservationGrid::head beyond available steps");
  ObservationGrid out(last, stations_);
  for (Eigen::Index t = 1; t <= last; ++t) {
    for (Eigen::Index i = 0; i < stations_; ++i) out.at(t, i) = at(t, i);
  }
  return out;
}

Eigen::Index ObservationGrid::count(ObsKind kind) const {
  Eigen::Index n = 0;
  for (const auto& c : cells_) n += c.kind == kind;
  return n;
}

CovariateGrid::CovariateGrid(std::vector<std::string> names, std::vector<Eigen::MatrixXd> per_step)
    : names_(std::move(names)), values_(std::move(per_step)) {
  for (const auto& m : values_) {
    if (m.cols() != covariates() || m.rows() != stations()) throw ValidationError("covariate grid has ragged shape");
    if (!m.allFinite()) throw ValidationError("covariate grid contains non-finite values");
  }
}

std::vector<std::string> CovariateGrid::coefficient_names() const {
  std::vector<std::string> out{"intercept"};
  out.insert(out.end(), names_.begin(), names_.end());
  return out;
}

const Eigen::MatrixXd& CovariateGrid::at(Eigen::Index t) const {
  if (t < 1 || t > steps()) throw std::out_of_range("no covariates for time step " + std::to_string(t));
  return values_[static_cast<std::size_t>(t - 1)];
}

Eigen::MatrixXd CovariateGrid::design(Eigen::Index t) const {
  const auto& x = at(t);
  Eigen::MatrixXd d(x.rows(), x.cols() + 1);
  d.col(0).setOnes();
  d.rightCols(x.cols()) = x;
  return d;
}

Standardization CovariateGrid::statistics(Eigen::Index last) const {
  const Eigen::Index k = covariates();
  Standardization s{Eigen::VectorXd::Zero(k), Eigen::VectorXd::Ones(k)};
  if (last < 1 || k == 0) return s;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(k), sq = Eigen::VectorXd::Zero(k);
  double n = 0;
  for (Eigen::Index t = 1; t <= last; ++t) {
    const auto& x = at(t);
    sum += x.colwise().sum().transpose();
    sq += x.array().square().colwise().sum().matrix().transpose();
    n += static_cast<double>(x.rows());
  }
  s.mean = sum / n;
  for (Eigen::Index j = 0; j < k; ++j) {
    const double var = (sq(j) - n * s.mean(j) * s.mean(j)) / std::max(n - 1.0, 1.0);
    s.sd(j) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

CovariateGrid CovariateGrid::standardized(const Standardization& s) const {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(values_.size());
  for (const auto& x : values_) {
    out.push_back(((x.rowwise() - s.mean.transpose()).array().rowwise() / s.sd.transpose().array()).matrix());
  }
  return CovariateGrid(names_, std::move(out));
}

WindSeries::WindSeries(std::vector<Eigen::Vector2d> mps) : mps_(std::move(mps)) {
  for (const auto& w : mps_) {
    if (!w.allFinite()) throw ValidationError("wind series contains non-finite values");
  }
}

void Dataset::validate(Eigen::Index through) const {
  const Eigen::Index n = stations.size();
  if (observations.stations() != n) throw ValidationError("observation grid does not match the station set");
  if (covariates.steps() > 0 && covariates.stations() != n) {
    throw ValidationError("covariate grid does not match the station set");
  }
  if (covariates.steps() < through) {
    throw ValidationError("covariates missing for time step " + std::to_string(covariates.steps() + 1));
  }
  if (wind.steps() < through) throw ValidationError("wind missing for time step " + std::to_string(wind.steps() + 1));
}

}  // namespace convar

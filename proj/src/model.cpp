#include "convar/model.hpp"

#include "convar/error.hpp"

#include <cmath>

namespace convar {

void Params::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string("parameter constraint violated: ") + what);
  };
  need(std::isfinite(lambda) && lambda > 0, "lambda > 0");
  need(beta.size() >= 1 && beta.allFinite(), "beta finite with an intercept");
  need(std::isfinite(tau2) && tau2 > 0, "tau2 > 0");
  need(std::isfinite(sigma2) && sigma2 > 0, "sigma2 > 0");
  need(std::isfinite(rho0) && rho0 > 0, "rho0 > 0");
  need(std::isfinite(phi), "phi finite");
  need(std::isfinite(u), "u finite");
  need(std::isfinite(rho1) && rho1 > 0, "rho1 > 0");
  need(std::isfinite(alpha) && alpha >= 0 && alpha <= kPi / 2, "alpha in [0, pi/2]");
  need(std::isfinite(c) && c > 0, "c > 0");
}

ModelClass parse_model_class(std::string_view name) {
  if (name == "conv-drift") return ModelClass::conv_drift;
  if (name == "conv-iso") return ModelClass::conv_iso;
  if (name == "separable") return ModelClass::separable;
  if (name == "no-ar") return ModelClass::no_ar;
  throw ValidationError("unknown model class '" + std::string(name) + "'");
}

std::string to_string(ModelClass m) {
  switch (m) {
    case ModelClass::conv_drift: return "conv-drift";
    case ModelClass::conv_iso: return "conv-iso";
    case ModelClass::separable: return "separable";
    case ModelClass::no_ar: return "no-ar";
  }
  return "?";
}

bool time_constant_propagator(ModelClass m) { return m != ModelClass::conv_drift; }

double inverse_transform(double y, double lambda) {
  if (!(y > 0.0)) throw ValidationError("inverse_transform needs a positive rainfall value");
  if (!(lambda > 0.0)) throw ValidationError("inverse_transform needs lambda > 0");
  return std::pow(y, 1.0 / lambda);
}

Eigen::MatrixXd exp_covariance(const Eigen::MatrixXd& dist, double rho0, double sigma2) {
  if (!dist.allFinite()) throw ValidationError("exp_covariance: non-finite distance");
  if (!(rho0 > 0.0) || !(sigma2 > 0.0)) throw ValidationError("exp_covariance: rho0 and sigma2 must be positive");
  return sigma2 * exp_correlation(dist, rho0);
}

Eigen::Matrix2d anisotropy_matrix(double rho1, double c, double alpha) {
  if (!(rho1 > 0.0) || !(c > 0.0) || !(alpha >= 0.0 && alpha <= kPi / 2)) {
    throw ValidationError("anisotropy_matrix: need rho1 > 0, c > 0, alpha in [0, pi/2]");
  }
  return anisotropy_matrix_t(rho1, c, alpha);
}

double spectral_radius(double phi, const Eigen::MatrixXd& g) {
  if (g.rows() != g.cols()) throw ValidationError("spectral_radius: matrix must be square");
  if (phi == 0.0 || g.size() == 0) return 0.0;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(g.rows()).normalized();
  double estimate = 0.0;
  int settled = 0;
  for (int it = 0; it < 10000; ++it) {
    Eigen::VectorXd w = g * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    const double change = std::abs(norm - estimate);
    estimate = norm;
    settled = change <= 1e-8 * norm ? settled + 1 : 0;
    if (settled >= 3) return std::abs(phi) * estimate;
  }
  throw NumericalError("spectral_radius: power iteration did not converge in 10000 iterations");
}

double damping(double phi, const Eigen::Matrix2d& sigma_inv) {
  if (!(phi > 0.0)) throw ValidationError("damping is undefined for phi <= 0");
  const double sqrt_det_sigma = 1.0 / std::sqrt(sigma_inv.determinant());
  return -std::log(phi * kPi * sqrt_det_sigma);
}

Eigen::VectorXd latent_mean(const Eigen::MatrixXd& design, const Eigen::VectorXd& beta) {
  if (design.cols() != beta.size()) throw ValidationError("latent_mean: design has wrong number of columns");
  return design * beta;
}

PropagatorModel::PropagatorModel(ModelClass model, Eigen::MatrixX2d coords, Eigen::VectorXd areas, WindSeries wind)
    : model_(model), coords_(std::move(coords)), areas_(std::move(areas)), wind_(std::move(wind)) {
  if (coords_.rows() != areas_.size()) throw ValidationError("PropagatorModel: one area per site required");
}

Eigen::Matrix2d PropagatorModel::sigma_inv(const Params& p) const {
  switch (model_) {
    case ModelClass::conv_drift: return anisotropy_matrix(p.rho1, p.c, p.alpha);
    case ModelClass::conv_iso: return Eigen::Matrix2d::Identity() / (p.rho1 * p.rho1);
    default: return Eigen::Matrix2d::Zero();
  }
}

Eigen::Vector2d PropagatorModel::mu(const Params& p, Eigen::Index t) const {
  if (model_ != ModelClass::conv_drift) return Eigen::Vector2d::Zero();
  return drift(p.u, Eigen::Vector2d(wind_.displacement(t)));
}

Eigen::MatrixXd PropagatorModel::at(const Params& p, Eigen::Index t) const {
  const Eigen::Index n = coords_.rows();
  if (model_ == ModelClass::separable || model_ == ModelClass::no_ar) return Eigen::MatrixXd::Identity(n, n);
  return propagator(coords_, areas_, sigma_inv(p), mu(p, t));
}

std::vector<Eigen::MatrixXd> PropagatorModel::build(const Params& p, Eigen::Index first, Eigen::Index last) const {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(static_cast<std::size_t>(std::max<Eigen::Index>(last - first + 1, 0)));
  if (time_constant()) {
    const Eigen::MatrixXd g = at(p, first);
    for (Eigen::Index t = first; t <= last; ++t) out.push_back(g);
    return out;
  }
  for (Eigen::Index t = first; t <= last; ++t) out.push_back(at(p, t));
  return out;
}

}  // namespace convar

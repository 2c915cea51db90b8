#pragma once

#include "convar/data.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

namespace convar {

inline constexpr double kPi = 3.14159265358979323846;

/// Primary parameters of the censored convolution-autoregressive model.
struct Params {
  double lambda = 1.0;   // power-transform exponent, > 0
  Eigen::VectorXd beta;  // intercept first
  double tau2 = 1.0;     // nugget variance
  double sigma2 = 1.0;   // innovation variance
  double rho0 = 100.0;   // innovation range (km)
  double phi = 0.0;      // AR scale
  double u = 0.0;        // drift per km-per-step of wind
  double rho1 = 100.0;   // kernel range (km)
  double alpha = kPi / 4;
  double c = 1.0;

  /// Throws ValidationError when a box/positivity constraint fails.
  void validate() const;
  bool operator==(const Params&) const = default;
};

/// Model variants: anisotropic drift convolution, isotropic convolution
/// without drift, separable AR(1) (G = I), and no autoregression (phi = 0).
enum class ModelClass { conv_drift, conv_iso, separable, no_ar };

ModelClass parse_model_class(std::string_view name);
std::string to_string(ModelClass m);
/// True when G_t does not depend on t.
bool time_constant_propagator(ModelClass m);

/// Censored power transform: 0 for w <= 0, w^lambda otherwise.
template <typename Scalar>
Scalar transform(Scalar w, Scalar lambda) {
  using std::pow;
  return w > Scalar(0) ? pow(w, lambda) : Scalar(0);
}

/// Latent value y^{1/lambda} of a positive rainfall amount.
double inverse_transform(double y, double lambda);

/// Exponential correlation (V)_ij = exp(-d_ij / rho0).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> exp_correlation(
    const Eigen::MatrixBase<Derived>& dist, typename Derived::Scalar rho0) {
  return (-dist.derived().array() / rho0).exp().matrix();
}

/// sigma2 * V_rho0. Rejects non-finite distances and non-positive scales.
Eigen::MatrixXd exp_covariance(const Eigen::MatrixXd& dist, double rho0, double sigma2);

/// Sigma^{-1} = R^T R / rho1^2 with R = [[cos a, sin a], [-c sin a, c cos a]].
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 2> anisotropy_matrix_t(Scalar rho1, Scalar c, Scalar alpha) {
  using std::cos;
  using std::sin;
  Eigen::Matrix<Scalar, 2, 2> r;
  r << cos(alpha), sin(alpha), -c * sin(alpha), c * cos(alpha);
  return r.transpose() * r / (rho1 * rho1);
}

/// Validating double version of anisotropy_matrix_t.
Eigen::Matrix2d anisotropy_matrix(double rho1, double c, double alpha);

/// mu_t = u * w_t. `wind` must already be in km per step.
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 1> drift(Scalar u, const Eigen::Matrix<Scalar, 2, 1>& wind) {
  return u * wind;
}

/// Kernel-times-area matrix between `targets` (rows) and `sources` (columns):
/// (G)_ij = exp(-(t_i - s_j - mu)^T Sigma^{-1} (t_i - s_j - mu)) |A_j|.
template <typename DerivedT, typename DerivedS, typename DerivedA>
Eigen::Matrix<typename DerivedT::Scalar, Eigen::Dynamic, Eigen::Dynamic> propagator(
    const Eigen::MatrixBase<DerivedT>& targets, const Eigen::MatrixBase<DerivedS>& sources,
    const Eigen::MatrixBase<DerivedA>& source_areas, const Eigen::Matrix<typename DerivedT::Scalar, 2, 2>& sigma_inv,
    const Eigen::Matrix<typename DerivedT::Scalar, 2, 1>& mu) {
  using Scalar = typename DerivedT::Scalar;
  using std::exp;
  const Eigen::Index m = targets.rows(), n = sources.rows();
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> g(m, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const Eigen::Matrix<Scalar, 2, 1> d = targets.row(i).transpose() - sources.row(j).transpose() - mu;
      g(i, j) = exp(-d.dot(sigma_inv * d)) * source_areas(j);
    }
  }
  return g;
}

/// Square propagator G_t over one site set.
template <typename DerivedS, typename DerivedA>
Eigen::Matrix<typename DerivedS::Scalar, Eigen::Dynamic, Eigen::Dynamic> propagator(
    const Eigen::MatrixBase<DerivedS>& sites, const Eigen::MatrixBase<DerivedA>& areas,
    const Eigen::Matrix<typename DerivedS::Scalar, 2, 2>& sigma_inv,
    const Eigen::Matrix<typename DerivedS::Scalar, 2, 1>& mu) {
  return propagator(sites, sites, areas, sigma_inv, mu);
}

/// Largest |eigenvalue| of phi * G by power iteration (relative tolerance 1e-8,
/// at most 1e4 iterations; NumericalError otherwise).
double spectral_radius(double phi, const Eigen::MatrixXd& g);

/// eta = -log(phi * pi * |Sigma|^{1/2}), with |Sigma|^{1/2} = 1 / sqrt(det Sigma^{-1}).
double damping(double phi, const Eigen::Matrix2d& sigma_inv);

/// x_t^T beta for a design matrix with intercept column.
Eigen::VectorXd latent_mean(const Eigen::MatrixXd& design, const Eigen::VectorXd& beta);

/// Builds the propagators G_t of a model class for a fixed site layout and
/// wind series.
class PropagatorModel {
 public:
  PropagatorModel(ModelClass model, Eigen::MatrixX2d coords, Eigen::VectorXd areas, WindSeries wind);

  ModelClass model() const { return model_; }
  bool time_constant() const { return time_constant_propagator(model_); }
  const Eigen::MatrixX2d& coords() const { return coords_; }
  const Eigen::VectorXd& areas() const { return areas_; }
  const WindSeries& wind() const { return wind_; }

  Eigen::Matrix2d sigma_inv(const Params& p) const;
  /// Drift at step t (zero for the drift-free classes).
  Eigen::Vector2d mu(const Params& p, Eigen::Index t) const;
  /// G_t for step t >= 1.
  Eigen::MatrixXd at(const Params& p, Eigen::Index t) const;
  /// G_first .. G_last.
  std::vector<Eigen::MatrixXd> build(const Params& p, Eigen::Index first, Eigen::Index last) const;

 private:
  ModelClass model_;
  Eigen::MatrixX2d coords_;
  Eigen::VectorXd areas_;
  WindSeries wind_;
};

}  // namespace convar

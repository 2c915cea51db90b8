#include "convar/random.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <stdexcept>

namespace convar {

std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(seed) ^ (stream * 0xd1b54a32d192ed03ULL + 0x632be59bd9b4e019ULL));
}

Random::Random(std::uint64_t seed, std::uint64_t stream) : engine_(split_seed(seed, stream)) {}

double Random::uniform() {
  // 53 random bits, shifted off zero
  const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  return u + 0x1.0p-54;
}

double Random::normal() { return normal_(engine_); }

double Random::gamma(double shape, double scale) {
  std::gamma_distribution<double> g(shape, scale);
  return g(engine_);
}

double Random::inverse_gamma(double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0)) throw std::invalid_argument("inverse_gamma: shape and rate must be positive");
  return 1.0 / gamma(shape, 1.0 / rate);
}

Eigen::VectorXd Random::normal_vector(Eigen::Index n) {
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = normal();
  return z;
}

double Random::truncated_normal_upper(double mean, double sd, double upper) {
  if (sd <= 0.0) return std::min(mean, upper);
  const double beta = (upper - mean) / sd;
  if (beta < -5.0) {
    // Far tail: exponential rejection sampler on Z' = -Z >= a.
    const double a = -beta;
    const double rate = 0.5 * (a + std::sqrt(a * a + 4.0));
    for (;;) {
      const double z = a - std::log(uniform()) / rate;
      const double d = z - rate;
      if (uniform() <= std::exp(-0.5 * d * d)) return std::min(mean - sd * z, upper);
    }
  }
  const double p = uniform() * normal_cdf(beta);
  return std::min(mean + sd * normal_quantile(p), upper);
}

double normal_cdf(double x) {
  static const boost::math::normal_distribution<double> n;
  if (x < -37.5) return 0.0;
  if (x > 37.5) return 1.0;
  return boost::math::cdf(n, x);
}

double normal_quantile(double p) {
  static const boost::math::normal_distribution<double> n;
  return boost::math::quantile(n, p);
}

Eigen::VectorXd sample_mvn(Random& rng, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  const Eigen::Index n = mean.size();
  if (cov.cwiseAbs().maxCoeff() == 0.0) return mean;
  const Eigen::VectorXd z = rng.normal_vector(n);
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return mean + llt.matrixL() * z;
  // PSD or slightly indefinite: symmetric square root with clamped spectrum.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return mean + es.eigenvectors() * root.asDiagonal() * z;
}

Eigen::VectorXd sample_mvn_canonical(Random& rng, const Eigen::MatrixXd& precision, const Eigen::VectorXd& linear) {
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) {
    const double jitter = 1e-10 * std::max(precision.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    llt.compute(precision + jitter * Eigen::MatrixXd::Identity(precision.rows(), precision.cols()));
    if (llt.info() != Eigen::Success) throw std::runtime_error("sample_mvn_canonical: precision is not positive definite");
  }
  const Eigen::VectorXd mean = llt.solve(linear);
  const Eigen::VectorXd z = rng.normal_vector(linear.size());
  return mean + llt.matrixU().solve(z);
}

}  // namespace convar

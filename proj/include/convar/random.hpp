#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace convar {

/// splitmix64 finaliser applied to (seed, stream). Gives every chain, worker
/// and posterior draw its own reproducible substream independent of how many
/// threads are used.
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream);

class Random {
 public:
  explicit Random(std::uint64_t seed, std::uint64_t stream = 0);

  double uniform();  // open interval (0, 1)
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  double gamma(double shape, double scale);
  /// Inverse gamma with density proportional to x^{-shape-1} exp(-rate/x).
  double inverse_gamma(double shape, double rate);
  Eigen::VectorXd normal_vector(Eigen::Index n);

  /// Draw from N(mean, sd^2) restricted to (-inf, upper].
  double truncated_normal_upper(double mean, double sd, double upper);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

double normal_cdf(double x);
double normal_quantile(double p);

/// Sample N(mean, cov). Falls back to a jittered factorisation when `cov` is
/// only positive semi-definite; an all-zero covariance returns `mean`.
Eigen::VectorXd sample_mvn(Random& rng, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov);

/// Sample N(P^{-1} b, P^{-1}) given the precision P and the linear term b.
Eigen::VectorXd sample_mvn_canonical(Random& rng, const Eigen::MatrixXd& precision, const Eigen::VectorXd& linear);

}  // namespace convar

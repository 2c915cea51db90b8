#include "convar/kalman.hpp"

#include "convar/error.hpp"

namespace convar {

namespace {

Eigen::MatrixXd symmetric(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

// Cholesky with escalating diagonal jitter for nearly singular covariances.
Eigen::LLT<Eigen::MatrixXd> robust_llt(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  const Eigen::Index n = m.rows();
  double jitter = 1e-10 * std::max(m.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  for (int k = 0; llt.info() != Eigen::Success && k < 8; ++k, jitter *= 100.0) {
    llt.compute(m + jitter * Eigen::MatrixXd::Identity(n, n));
  }
  if (llt.info() != Eigen::Success) throw NumericalError("ffbs: covariance is not positive definite");
  return llt;
}

}  // namespace

Eigen::MatrixXd ffbs(const Eigen::VectorXd& m0, const Eigen::MatrixXd& p0,
                     const std::vector<Eigen::MatrixXd>& transitions, const Eigen::MatrixXd& q,
                     const Eigen::MatrixXd& y, double tau2, Random& rng) {
  const Eigen::Index n = static_cast<Eigen::Index>(transitions.size());
  const Eigen::Index dim = m0.size();
  if (y.rows() != n || y.cols() != dim) throw std::invalid_argument("ffbs: observation matrix has wrong shape");
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(dim, dim);

  std::vector<Eigen::VectorXd> m(static_cast<std::size_t>(n + 1)), a(static_cast<std::size_t>(n + 1));
  std::vector<Eigen::MatrixXd> p(static_cast<std::size_t>(n + 1)), r(static_cast<std::size_t>(n + 1));
  m[0] = m0;
  p[0] = p0;
  for (Eigen::Index t = 1; t <= n; ++t) {
    const auto k = static_cast<std::size_t>(t);
    const Eigen::MatrixXd& at = transitions[k - 1];
    a[k] = at * m[k - 1];
    r[k] = symmetric(at * p[k - 1] * at.transpose() + q);
    const Eigen::MatrixXd s = r[k] + tau2 * eye;
    const auto llt = robust_llt(s);
    const Eigen::MatrixXd gain = llt.solve(r[k]).transpose();  // R S^{-1}
    m[k] = a[k] + gain * (y.row(t - 1).transpose() - a[k]);
    const Eigen::MatrixXd ik = eye - gain;
    p[k] = symmetric(ik * r[k] * ik.transpose() + tau2 * gain * gain.transpose());
  }

  Eigen::MatrixXd x(n + 1, dim);
  x.row(n) = sample_mvn(rng, m[static_cast<std::size_t>(n)], p[static_cast<std::size_t>(n)]).transpose();
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const auto k = static_cast<std::size_t>(t);
    if (p[k].cwiseAbs().maxCoeff() == 0.0) {
      x.row(t) = m[k].transpose();
      continue;
    }
    const Eigen::MatrixXd& next = transitions[k];  // A_{t+1}
    const auto llt = robust_llt(r[k + 1]);
    const Eigen::MatrixXd smoother = llt.solve(next * p[k]).transpose();  // P A' R^{-1}
    const Eigen::VectorXd mean = m[k] + smoother * (x.row(t + 1).transpose() - a[k + 1]);
    const Eigen::MatrixXd cov = symmetric(p[k] - smoother * r[k + 1] * smoother.transpose());
    x.row(t) = sample_mvn(rng, mean, cov).transpose();
  }
  return x;
}

}  // namespace convar

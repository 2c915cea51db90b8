#include "convar/mcmc.hpp"

#include "convar/error.hpp"
#include "convar/kalman.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

namespace convar {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_gamma_density(double x, double mean, double var) {
  if (!(x > 0.0)) return kNegInf;
  const double shape = mean * mean / var;
  const double rate = mean / var;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

Eigen::LLT<Eigen::MatrixXd> correlation_cholesky(const Eigen::MatrixXd& dist, double rho0, double& log_det) {
  Eigen::MatrixXd v = exp_correlation(dist, rho0);
  Eigen::LLT<Eigen::MatrixXd> llt(v);
  if (llt.info() != Eigen::Success) {
    v.diagonal().array() += 1e-10;
    llt.compute(v);
  }
  if (llt.info() != Eigen::Success) throw NumericalError("V_rho0 is not positive definite");
  log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return llt;
}

// Columns: xi_0, then xi_t - phi G_t xi_{t-1} for t = 1..T.
Eigen::MatrixXd innovations(const Eigen::MatrixXd& xi, const std::vector<Eigen::MatrixXd>& g, double phi) {
  const Eigen::Index steps = xi.rows() - 1;
  Eigen::MatrixXd e(xi.cols(), steps + 1);
  e.col(0) = xi.row(0).transpose();
  for (Eigen::Index t = 1; t <= steps; ++t) {
    e.col(t) = xi.row(t).transpose() - phi * (g[static_cast<std::size_t>(t - 1)] * xi.row(t - 1).transpose());
  }
  return e;
}

double innovation_quadratic(const Eigen::LLT<Eigen::MatrixXd>& chol, const Eigen::MatrixXd& xi,
                            const std::vector<Eigen::MatrixXd>& g, double phi) {
  Eigen::MatrixXd e = innovations(xi, g, phi);
  chol.matrixL().solveInPlace(e);
  return e.squaredNorm();
}

// T x N matrix of x_t^T beta.
Eigen::MatrixXd mean_matrix(const Posterior& post, const Eigen::VectorXd& beta) {
  Eigen::MatrixXd m(post.steps(), post.stations());
  for (Eigen::Index t = 1; t <= post.steps(); ++t) m.row(t - 1) = (post.design(t) * beta).transpose();
  return m;
}

bool in_support(const RangeParams& r) {
  return std::isfinite(r.rho0) && r.rho0 > 0 && std::isfinite(r.rho1) && r.rho1 > 0 && std::isfinite(r.c) &&
         r.c > 0 && std::isfinite(r.alpha) && r.alpha > 0 && r.alpha < kPi / 2 && std::isfinite(r.u);
}

Params with_ranges(Params p, const RangeParams& r) {
  p.rho0 = r.rho0;
  p.rho1 = r.rho1;
  p.c = r.c;
  p.alpha = r.alpha;
  p.u = r.u;
  return p;
}

double range_log_prior(const Posterior& post, const RangeParams& r) {
  const auto& pr = post.prior();
  double lp = pr.log_rho(r.rho0);
  if (post.samples_rho1()) lp += pr.log_rho(r.rho1);
  if (post.samples_anisotropy()) lp += pr.log_c(r.c) + pr.log_alpha(r.alpha) + pr.log_u(r.u);
  return lp;
}

double logit(double x) { return std::log(x) - std::log1p(-x); }
double inv_logit(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_finite(const ChainState& s, long iteration) {
  const auto& p = s.params;
  const bool ok = std::isfinite(p.lambda) && p.beta.allFinite() && std::isfinite(p.tau2) && std::isfinite(p.sigma2) &&
                  std::isfinite(p.rho0) && std::isfinite(p.phi) && std::isfinite(p.u) && std::isfinite(p.rho1) &&
                  std::isfinite(p.alpha) && std::isfinite(p.c) && s.latent.xi.allFinite() && s.latent.w.allFinite();
  if (ok) return;
  std::ostringstream os;
  os.precision(17);
  os << "non-finite MCMC state at iteration " << iteration << ": lambda=" << p.lambda << " beta=["
     << p.beta.transpose() << "] tau2=" << p.tau2 << " sigma2=" << p.sigma2 << " rho0=" << p.rho0 << " phi=" << p.phi
     << " u=" << p.u << " rho1=" << p.rho1 << " alpha=" << p.alpha << " c=" << p.c
     << " xi_finite=" << s.latent.xi.allFinite() << " w_finite=" << s.latent.w.allFinite();
  throw NumericalError(os.str());
}

}  // namespace

void PriorConfig::validate() const {
  if (!(rho_mean > 0) || !(rho_var > 0)) throw ValidationError("prior: rho_mean and rho_var must be positive");
  if (!(c_mean > 0) || !(c_var > 0)) throw ValidationError("prior: c_mean and c_var must be positive");
  if (!(u_var > 0)) throw ValidationError("prior: u_var must be positive");
}

double PriorConfig::log_rho(double rho) const { return log_gamma_density(rho, rho_mean, rho_var); }
double PriorConfig::log_c(double c) const { return log_gamma_density(c, c_mean, c_var); }
double PriorConfig::log_u(double u) const {
  return -0.5 * std::log(2.0 * kPi * u_var) - 0.5 * u * u / u_var;
}
double PriorConfig::log_alpha(double alpha) const {
  return alpha >= 0.0 && alpha <= kPi / 2 ? -std::log(kPi / 2) : kNegInf;
}

LatentStrategy parse_latent_strategy(const std::string& s) {
  if (s == "ffbs") return LatentStrategy::ffbs;
  if (s == "single-t") return LatentStrategy::single_t;
  if (s == "auto") return LatentStrategy::automatic;
  throw ValidationError("unknown latent strategy '" + s + "' (ffbs | single-t | auto)");
}

std::string to_string(LatentStrategy s) {
  switch (s) {
    case LatentStrategy::ffbs: return "ffbs";
    case LatentStrategy::single_t: return "single-t";
    case LatentStrategy::automatic: return "auto";
  }
  return "?";
}

void ChainConfig::validate() const {
  if (n_burnin < 0 || n_samples <= 0 || thin < 1 || latent_every < 1) {
    throw ValidationError("chain config: need n_burnin >= 0, n_samples > 0, thin >= 1, latent_every >= 1");
  }
  const auto& s = proposal;
  for (double v : {s.lambda, s.rho0, s.rho1, s.c, s.alpha, s.u}) {
    if (!(v > 0)) throw ValidationError("chain config: proposal scales must be positive");
  }
}

Posterior::Posterior(const Dataset& data, Eigen::Index steps, Eigen::VectorXd areas, ModelClass model,
                     PriorConfig prior)
    : steps_(steps),
      observations_(data.observations.head(steps)),
      distances_(distance_matrix(data.stations)),
      propagators_(model, data.stations.coords(), std::move(areas), data.wind),
      prior_(prior) {
  if (steps < 1) throw ValidationError("need at least one observed time step");
  prior_.validate();
  data.validate(steps);
  design_.reserve(static_cast<std::size_t>(steps));
  for (Eigen::Index t = 1; t <= steps; ++t) design_.push_back(data.covariates.design(t));
  xtx_ = Eigen::MatrixXd::Zero(design_.front().cols(), design_.front().cols());
  for (const auto& x : design_) xtx_ += x.transpose() * x;
  positive_count_ = observations_.count(ObsKind::positive);
}

bool Posterior::samples_rho1() const {
  return model() == ModelClass::conv_drift || model() == ModelClass::conv_iso;
}

bool Posterior::samples_anisotropy() const { return model() == ModelClass::conv_drift; }

void refresh_caches(const Posterior& post, ChainState& state) {
  state.g = post.propagators().build(state.params, 1, post.steps());
  state.v_chol = correlation_cholesky(post.distances(), state.params.rho0, state.log_det_v);
}

ChainState make_state(const Posterior& post, Params params, LatentState latent) {
  ChainState s;
  s.params = std::move(params);
  s.latent = std::move(latent);
  refresh_caches(post, s);
  return s;
}

ChainState initial_state(const Posterior& post) {
  const Eigen::Index steps = post.steps(), n = post.stations(), k = post.coefficients();
  // Least squares on the rainfall proxy (amount, 0 for dry), missing rows dropped.
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(k);
  for (Eigen::Index t = 1; t <= steps; ++t) {
    const auto& x = post.design(t);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& o = post.obs(t, i);
      if (o.kind == ObsKind::missing) continue;
      xtx += x.row(i).transpose() * x.row(i);
      xty += x.row(i).transpose() * o.amount;
    }
  }
  xtx.diagonal().array() += 1e-8;
  Params p;
  p.lambda = 1.0;
  p.beta = xtx.ldlt().solve(xty);
  double rss = 0.0;
  long count = 0;
  for (Eigen::Index t = 1; t <= steps; ++t) {
    const Eigen::VectorXd fit = post.design(t) * p.beta;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& o = post.obs(t, i);
      if (o.kind == ObsKind::missing) continue;
      rss += (o.amount - fit(i)) * (o.amount - fit(i));
      ++count;
    }
  }
  const double var = count > 1 ? rss / static_cast<double>(count - 1) : 1.0;
  p.tau2 = p.sigma2 = std::max(var / 2.0, 1e-6);
  p.rho0 = p.rho1 = post.prior().rho_mean;
  p.c = 1.0;
  p.alpha = kPi / 4;
  p.u = 0.0;
  p.phi = post.samples_phi() ? 1e-4 : 0.0;

  LatentState latent;
  latent.xi = Eigen::MatrixXd::Zero(steps + 1, n);
  latent.w.resize(steps, n);
  for (Eigen::Index t = 1; t <= steps; ++t) {
    const Eigen::VectorXd fit = post.design(t) * p.beta;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& o = post.obs(t, i);
      switch (o.kind) {
        case ObsKind::positive: latent.w(t - 1, i) = inverse_transform(o.amount, p.lambda); break;
        case ObsKind::zero: latent.w(t - 1, i) = std::min(fit(i), 0.0); break;
        case ObsKind::missing: latent.w(t - 1, i) = fit(i); break;
      }
    }
  }
  return make_state(post, std::move(p), std::move(latent));
}

double log_posterior(const Posterior& post, const Params& p, const LatentState& latent) {
  const Eigen::Index steps = post.steps(), n = post.stations();
  if (!(p.lambda > 0) || !(p.tau2 > 0) || !(p.sigma2 > 0) || !(p.rho0 > 0) || !(p.rho1 > 0) || !(p.c > 0) ||
      !(p.alpha >= 0 && p.alpha <= kPi / 2)) {
    return kNegInf;
  }
  if (!post.samples_phi() && p.phi != 0.0) return kNegInf;
  const auto nd = static_cast<double>(n), td = static_cast<double>(steps);

  double jacobian = 0.0;
  double obs_quad = 0.0;
  for (Eigen::Index t = 1; t <= steps; ++t) {
    const Eigen::VectorXd mean = post.design(t) * p.beta + latent.xi.row(t).transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& o = post.obs(t, i);
      double w = latent.w(t - 1, i);
      if (o.kind == ObsKind::positive) {
        w = std::pow(o.amount, 1.0 / p.lambda);
        jacobian += (1.0 / p.lambda - 1.0) * std::log(o.amount) - std::log(p.lambda);
      } else if (o.kind == ObsKind::zero && w > 0.0) {
        return kNegInf;
      }
      obs_quad += (w - mean(i)) * (w - mean(i));
    }
  }

  double log_det = 0.0;
  const auto chol = correlation_cholesky(post.distances(), p.rho0, log_det);
  const auto g = post.propagators().build(p, 1, steps);
  const double inn_quad = innovation_quadratic(chol, latent.xi, g, p.phi);

  const RangeParams r = current_ranges(p);
  return -(nd * (td + 1.0) / 2.0 + 1.0) * std::log(p.sigma2) - (nd * td / 2.0 + 1.0) * std::log(p.tau2) -
         0.5 * (td + 1.0) * log_det + jacobian - 0.5 * (obs_quad / p.tau2 + inn_quad / p.sigma2) +
         range_log_prior(post, r);
}

void update_w(const Posterior& post, ChainState& state, Random& rng) {
  const auto& p = state.params;
  const double sd = std::sqrt(p.tau2);
  for (Eigen::Index t = 1; t <= post.steps(); ++t) {
    const Eigen::VectorXd mean = post.design(t) * p.beta + state.latent.xi.row(t).transpose();
    for (Eigen::Index i = 0; i < post.stations(); ++i) {
      const auto& o = post.obs(t, i);
      double& w = state.latent.w(t - 1, i);
      switch (o.kind) {
        case ObsKind::positive: w = std::pow(o.amount, 1.0 / p.lambda); break;
        case ObsKind::zero: w = rng.truncated_normal_upper(mean(i), sd, 0.0); break;
        case ObsKind::missing: w = rng.normal(mean(i), sd); break;
      }
    }
  }
}

void update_beta(const Posterior& post, ChainState& state, Random& rng) {
  const auto& p = state.params;
  Eigen::VectorXd xtr = Eigen::VectorXd::Zero(post.coefficients());
  for (Eigen::Index t = 1; t <= post.steps(); ++t) {
    xtr += post.design(t).transpose() * (state.latent.w.row(t - 1) - state.latent.xi.row(t)).transpose();
  }
  Eigen::MatrixXd precision = post.design_gram() / p.tau2;
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) {
    state.note("update_beta: singular normal equations, jittered solve");
    precision.diagonal().array() += 1e-8 * std::max(precision.diagonal().maxCoeff(), 1.0);
  }
  state.params.beta = sample_mvn_canonical(rng, precision, xtr / p.tau2);
}

void update_phi(const Posterior& post, ChainState& state, Random& rng) {
  if (!post.samples_phi()) return;
  const auto& xi = state.latent.xi;
  const Eigen::Index steps = post.steps();
  Eigen::MatrixXd z(post.stations(), steps), x(post.stations(), steps);
  for (Eigen::Index t = 1; t <= steps; ++t) {
    z.col(t - 1) = state.g[static_cast<std::size_t>(t - 1)] * xi.row(t - 1).transpose();
    x.col(t - 1) = xi.row(t).transpose();
  }
  state.v_chol.matrixL().solveInPlace(z);
  state.v_chol.matrixL().solveInPlace(x);
  const double a = z.squaredNorm();
  if (!(a > 0.0)) {
    state.note("update_phi: flat full conditional (xi = 0), update skipped");
    return;
  }
  const double b = z.cwiseProduct(x).sum();
  state.params.phi = rng.normal(b / a, std::sqrt(state.params.sigma2 / a));
}

void update_sigma2(const Posterior& post, ChainState& state, Random& rng) {
  const double quad = innovation_quadratic(state.v_chol, state.latent.xi, state.g, state.params.phi);
  if (!(quad > 0.0)) {
    state.note("update_sigma2: zero quadratic form, update skipped");
    return;
  }
  const double shape = static_cast<double>(post.stations() * (post.steps() + 1)) / 2.0;
  state.params.sigma2 = rng.inverse_gamma(shape, quad / 2.0);
}

void update_tau2(const Posterior& post, ChainState& state, Random& rng) {
  const Eigen::MatrixXd resid =
      state.latent.w - mean_matrix(post, state.params.beta) - state.latent.xi.bottomRows(post.steps());
  const double quad = resid.squaredNorm();
  if (!(quad > 0.0)) {
    state.note("update_tau2: zero quadratic form, update skipped");
    return;
  }
  const double shape = static_cast<double>(post.stations() * post.steps()) / 2.0;
  state.params.tau2 = rng.inverse_gamma(shape, quad / 2.0);
}

void ffbs_update_xi(const Posterior& post, ChainState& state, Random& rng) {
  const auto& p = state.params;
  const Eigen::Index n = post.stations();
  Eigen::MatrixXd v = exp_correlation(post.distances(), p.rho0);
  v.diagonal().array() += 1e-10;
  const Eigen::MatrixXd q = p.sigma2 * v;
  std::vector<Eigen::MatrixXd> transitions;
  transitions.reserve(state.g.size());
  for (const auto& g : state.g) transitions.push_back(p.phi * g);
  const Eigen::MatrixXd y = state.latent.w - mean_matrix(post, p.beta);
  state.latent.xi = ffbs(Eigen::VectorXd::Zero(n), q, transitions, q, y, p.tau2, rng);
}

void single_site_update_xi(const Posterior& post, ChainState& state, Random& rng) {
  const auto& p = state.params;
  const Eigen::Index steps = post.steps(), n = post.stations();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd q_inv = state.v_chol.solve(eye) / p.sigma2;
  const Eigen::MatrixXd y = state.latent.w - mean_matrix(post, p.beta);
  auto& xi = state.latent.xi;
  auto a = [&](Eigen::Index t) -> Eigen::MatrixXd { return p.phi * state.g[static_cast<std::size_t>(t - 1)]; };

  // With a time-constant propagator the interior precision is shared by all t.
  const bool constant = post.propagators().time_constant();
  Eigen::LLT<Eigen::MatrixXd> interior;
  if (constant && steps > 1) {
    const Eigen::MatrixXd a1 = a(1);
    interior.compute(q_inv + eye / p.tau2 + a1.transpose() * q_inv * a1);
  }

  for (Eigen::Index t = 0; t <= steps; ++t) {
    Eigen::VectorXd linear = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd precision;
    if (t == 0) {
      const Eigen::MatrixXd a1 = a(1);
      precision = q_inv + a1.transpose() * q_inv * a1;
      linear += a1.transpose() * q_inv * xi.row(1).transpose();
    } else {
      const Eigen::MatrixXd at = a(t);
      linear += q_inv * (at * xi.row(t - 1).transpose()) + y.row(t - 1).transpose() / p.tau2;
      if (t < steps) {
        const Eigen::MatrixXd next = a(t + 1);
        linear += next.transpose() * (q_inv * xi.row(t + 1).transpose());
        if (constant) {
          const Eigen::VectorXd mean = interior.solve(linear);
          xi.row(t) = (mean + interior.matrixU().solve(rng.normal_vector(n))).transpose();
          continue;
        }
        precision = q_inv + eye / p.tau2 + next.transpose() * q_inv * next;
      } else {
        precision = q_inv + eye / p.tau2;
      }
    }
    xi.row(t) = sample_mvn_canonical(rng, precision, linear).transpose();
  }
}

double lambda_log_target(const Posterior& post, const ChainState& state, double lambda) {
  if (!(lambda > 0.0)) return kNegInf;
  const auto& p = state.params;
  double lp = 0.0;
  for (Eigen::Index t = 1; t <= post.steps(); ++t) {
    const Eigen::VectorXd mean = post.design(t) * p.beta + state.latent.xi.row(t).transpose();
    for (Eigen::Index i = 0; i < post.stations(); ++i) {
      const auto& o = post.obs(t, i);
      if (o.kind != ObsKind::positive) continue;
      const double ly = std::log(o.amount);
      const double w = std::exp(ly / lambda);
      lp += (1.0 / lambda - 1.0) * ly - std::log(lambda) - 0.5 * (w - mean(i)) * (w - mean(i)) / p.tau2;
    }
  }
  return lp;
}

double lambda_log_acceptance(const Posterior& post, const ChainState& state, double proposed) {
  if (!(proposed > 0.0)) return kNegInf;
  const double current = state.params.lambda;
  return lambda_log_target(post, state, proposed) - lambda_log_target(post, state, current) + std::log(proposed) -
         std::log(current);
}

bool mh_update_lambda(const Posterior& post, ChainState& state, Random& rng, double sd) {
  if (post.positive_count() == 0) {
    state.note("mh_update_lambda: no positive observations, update skipped");
    return false;
  }
  const double proposed = state.params.lambda * std::exp(sd * rng.normal());
  const double log_ratio = lambda_log_acceptance(post, state, proposed);
  if (!(std::log(rng.uniform()) < log_ratio)) return false;
  state.params.lambda = proposed;
  for (Eigen::Index t = 1; t <= post.steps(); ++t) {
    for (Eigen::Index i = 0; i < post.stations(); ++i) {
      const auto& o = post.obs(t, i);
      if (o.kind == ObsKind::positive) state.latent.w(t - 1, i) = std::pow(o.amount, 1.0 / proposed);
    }
  }
  return true;
}

RangeParams current_ranges(const Params& p) { return {p.rho0, p.rho1, p.c, p.alpha, p.u}; }

double ranges_log_target(const Posterior& post, const ChainState& state, const RangeParams& r) {
  if (!in_support(r)) return kNegInf;
  const Params p = with_ranges(state.params, r);
  double log_det = 0.0;
  const auto chol = correlation_cholesky(post.distances(), r.rho0, log_det);
  const auto g = post.propagators().build(p, 1, post.steps());
  const double quad = innovation_quadratic(chol, state.latent.xi, g, p.phi);
  return -0.5 * quad / p.sigma2 - 0.5 * static_cast<double>(post.steps() + 1) * log_det + range_log_prior(post, r);
}

double ranges_log_acceptance(const Posterior& post, const ChainState& state, const RangeParams& proposed) {
  if (!in_support(proposed)) return kNegInf;
  const RangeParams cur = current_ranges(state.params);
  // Jacobians of the log / logit random walk, active coordinates only.
  auto log_jacobian = [&](const RangeParams& r) {
    double j = std::log(r.rho0);
    if (post.samples_rho1()) j += std::log(r.rho1);
    if (post.samples_anisotropy()) j += std::log(r.c) + std::log(r.alpha) + std::log(kPi / 2 - r.alpha);
    return j;
  };
  return ranges_log_target(post, state, proposed) - ranges_log_target(post, state, cur) + log_jacobian(proposed) -
         log_jacobian(cur);
}

bool mh_update_ranges(const Posterior& post, ChainState& state, Random& rng, const ProposalScales& scales) {
  const RangeParams cur = current_ranges(state.params);
  RangeParams prop = cur;
  prop.rho0 = cur.rho0 * std::exp(scales.rho0 * rng.normal());
  if (post.samples_rho1()) prop.rho1 = cur.rho1 * std::exp(scales.rho1 * rng.normal());
  if (post.samples_anisotropy()) {
    prop.c = cur.c * std::exp(scales.c * rng.normal());
    prop.alpha = kPi / 2 * inv_logit(logit(cur.alpha / (kPi / 2)) + scales.alpha * rng.normal());
    prop.u = cur.u + scales.u * rng.normal();
  }
  const double log_ratio = ranges_log_acceptance(post, state, prop);
  if (!(std::log(rng.uniform()) < log_ratio)) return false;
  state.params = with_ranges(state.params, prop);
  refresh_caches(post, state);
  return true;
}

std::size_t ChainOutput::mode_index() const {
  std::size_t best = 0;
  for (std::size_t k = 1; k < draws.size(); ++k) {
    if (draws[k].log_posterior > draws[best].log_posterior) best = k;
  }
  return best;
}

LatentStrategy resolve_strategy(LatentStrategy s, ModelClass m) {
  if (s != LatentStrategy::automatic) return s;
  return time_constant_propagator(m) ? LatentStrategy::single_t : LatentStrategy::ffbs;
}

double max_spectral_radius(const Posterior& post, const Params& p) {
  if (p.phi == 0.0) return 0.0;
  const auto& props = post.propagators();
  const Eigen::Index last = props.time_constant() ? 1 : post.steps();
  double best = 0.0;
  for (Eigen::Index t = 1; t <= last; ++t) best = std::max(best, spectral_radius(p.phi, props.at(p, t)));
  return best;
}

ChainOutput run_chain(const Posterior& post, const ChainConfig& config, std::uint64_t chain_index,
                      std::optional<ChainState> start) {
  config.validate();
  Random rng(config.seed, chain_index);
  ChainState state = start ? std::move(*start) : initial_state(post);
  if (!start) state.params.validate();
  const LatentStrategy strategy = resolve_strategy(config.strategy, post.model());

  constexpr double kTargetRate = 0.3;
  double lambda_log_factor = 0.0, ranges_log_factor = 0.0;
  AcceptanceStats lambda_stats{"lambda"}, ranges_stats{"ranges"};

  ChainOutput out;
  out.draws.reserve(static_cast<std::size_t>(config.n_samples / config.thin));
  const long total = config.n_burnin + config.n_samples;
  for (long it = 0; it < total; ++it) {
    update_w(post, state, rng);
    if (strategy == LatentStrategy::ffbs) {
      ffbs_update_xi(post, state, rng);
    } else {
      single_site_update_xi(post, state, rng);
    }
    update_beta(post, state, rng);
    update_phi(post, state, rng);
    update_tau2(post, state, rng);
    update_sigma2(post, state, rng);

    const double lambda_sd = config.proposal.lambda * std::exp(lambda_log_factor);
    const bool lambda_tried = post.positive_count() > 0;
    const bool lambda_ok = mh_update_lambda(post, state, rng, lambda_sd);

    ProposalScales scaled = config.proposal;
    const double f = std::exp(ranges_log_factor);
    scaled.rho0 *= f, scaled.rho1 *= f, scaled.c *= f, scaled.alpha *= f, scaled.u *= f;
    const bool ranges_ok = mh_update_ranges(post, state, rng, scaled);

    check_finite(state, it);

    const bool burning = it < config.n_burnin;
    if (burning) {
      if (config.adapt) {
        const double gain = std::pow(static_cast<double>(it + 1), -0.6);
        if (lambda_tried) lambda_log_factor += gain * ((lambda_ok ? 1.0 : 0.0) - kTargetRate);
        ranges_log_factor += gain * ((ranges_ok ? 1.0 : 0.0) - kTargetRate);
      }
      continue;
    }
    if (lambda_tried) ++lambda_stats.proposed, lambda_stats.accepted += lambda_ok;
    ++ranges_stats.proposed, ranges_stats.accepted += ranges_ok;

    if ((it - config.n_burnin + 1) % config.thin == 0) {
      Draw d;
      d.chain = chain_index;
      d.params = state.params;
      d.log_posterior = log_posterior(post, state.params, state.latent);
      const auto stored = static_cast<long>(out.draws.size());
      if (config.store_latent && stored % config.latent_every == 0) d.latent = state.latent;
      out.log_posterior_trace.push_back(d.log_posterior);
      out.draws.push_back(std::move(d));
    }
  }
  lambda_stats.final_scale = config.proposal.lambda * std::exp(lambda_log_factor);
  ranges_stats.final_scale = std::exp(ranges_log_factor);
  out.acceptance = {lambda_stats, ranges_stats};
  out.diagnostics = state.diagnostics;
  if (!out.draws.empty()) out.mode_spectral_radius = max_spectral_radius(post, out.draws[out.mode_index()].params);
  return out;
}

ChainOutput run_chains(const Posterior& post, const ChainConfig& config, int chains, int workers) {
  if (chains < 1) throw ValidationError("need at least one chain");
  std::vector<ChainOutput> results(static_cast<std::size_t>(chains));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(chains));
  std::atomic<int> next{0};
  auto work = [&] {
    for (int c = next++; c < chains; c = next++) {
      try {
        results[static_cast<std::size_t>(c)] = run_chain(post, config, static_cast<std::uint64_t>(c));
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(workers, 1, chains);
  std::vector<std::thread> pool;
  for (int k = 1; k < threads; ++k) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ChainOutput merged;
  merged.acceptance = results.front().acceptance;
  for (auto& a : merged.acceptance) a.accepted = a.proposed = 0;
  for (std::size_t c = 0; c < results.size(); ++c) {
    auto& r = results[c];
    for (auto& d : r.draws) merged.draws.push_back(std::move(d));
    merged.log_posterior_trace.insert(merged.log_posterior_trace.end(), r.log_posterior_trace.begin(),
                                      r.log_posterior_trace.end());
    for (std::size_t b = 0; b < r.acceptance.size(); ++b) {
      merged.acceptance[b].accepted += r.acceptance[b].accepted;
      merged.acceptance[b].proposed += r.acceptance[b].proposed;
    }
    for (const auto& [k, v] : r.diagnostics) merged.diagnostics[k] += v;
  }
  if (!merged.draws.empty()) {
    merged.mode_spectral_radius = max_spectral_radius(post, merged.draws[merged.mode_index()].params);
  }
  return merged;
}

}  // namespace convar

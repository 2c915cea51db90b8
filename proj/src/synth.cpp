#include "convar/synth.hpp"

#include "convar/error.hpp"

#include <cmath>
#include <cstdio>

namespace convar {

namespace {

enum Stream : std::uint64_t { kSites = 0, kWind = 1, kCovariates = 2, kLatent = 3, kMissing = 4 };

StationSet uniform_sites(int n, double box, Random& rng) {
  std::vector<Site> sites;
  for (int i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "S%02d", i + 1);
    const double x = box * rng.uniform();
    const double y = box * rng.uniform();
    sites.push_back({id, Point(x, y)});
  }
  return StationSet(std::move(sites));
}

WindSeries make_wind(const WindSpec& spec, Eigen::Index steps, Random& rng) {
  std::vector<Eigen::Vector2d> w;
  w.reserve(static_cast<std::size_t>(steps));
  Eigen::Vector2d dev = spec.kind == WindSpec::Kind::ar1 ? Eigen::Vector2d(spec.sd * rng.normal(), spec.sd * rng.normal())
                                                         : Eigen::Vector2d::Zero();
  const double innov = spec.sd * std::sqrt(1.0 - spec.ar * spec.ar);
  for (Eigen::Index t = 0; t < steps; ++t) {
    if (spec.kind == WindSpec::Kind::ar1 && t > 0) {
      dev = spec.ar * dev + Eigen::Vector2d(innov * rng.normal(), innov * rng.normal());
    }
    w.push_back(spec.mean + dev);
  }
  return WindSeries(std::move(w));
}

Eigen::MatrixXd factor_or_zero(const Eigen::MatrixXd& cov) {
  if (cov.cwiseAbs().maxCoeff() == 0.0) return Eigen::MatrixXd::Zero(cov.rows(), cov.cols());
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("simulate: innovation covariance is not positive definite");
  return llt.matrixL();
}

double max_radius(const PropagatorModel& props, const Params& p, Eigen::Index steps) {
  if (p.phi == 0.0) return 0.0;
  const Eigen::Index last = props.time_constant() ? 1 : steps;
  double best = 0.0;
  for (Eigen::Index t = 1; t <= last; ++t) best = std::max(best, spectral_radius(p.phi, props.at(p, t)));
  return best;
}

struct Layout {
  StationSet sites;
  Eigen::VectorXd areas;
  WindSeries wind;
};

Layout make_layout(const SynthSpec& spec) {
  Random site_rng(spec.seed, kSites);
  Layout l{spec.sites ? *spec.sites : uniform_sites(spec.n_sites, spec.box, site_rng), {}, {}};
  l.areas = build_tessellation(l.sites).areas();
  Random wind_rng(spec.seed, kWind);
  l.wind = make_wind(spec.wind, spec.steps, wind_rng);
  return l;
}

}  // namespace

void SynthSpec::validate() const {
  if (steps < 1) throw ValidationError("synth: steps must be >= 1");
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw ValidationError("synth: missing_rate must lie in [0, 1)");
  if (!sites && n_sites < 3) throw ValidationError("synth: need at least 3 sites");
  if (!(box > 0.0)) throw ValidationError("synth: box must be positive");
  if (params.beta.size() != static_cast<Eigen::Index>(covariates.size()) + 1) {
    throw ValidationError("synth: beta needs one entry per covariate plus the intercept");
  }
  if (!(params.lambda > 0.0) || !(params.tau2 >= 0.0) || !(params.sigma2 >= 0.0) || !(params.rho0 > 0.0) ||
      !(params.rho1 > 0.0) || !(params.c > 0.0) || !(params.alpha >= 0.0 && params.alpha <= kPi / 2)) {
    throw ValidationError("synth: parameters outside their support");
  }
  if (wind.kind == WindSpec::Kind::ar1 && !(std::abs(wind.ar) < 1.0 && wind.sd >= 0.0)) {
    throw ValidationError("synth: wind AR coefficient must lie in (-1, 1)");
  }
}

SynthResult simulate(const SynthSpec& spec) {
  spec.validate();
  Params p = spec.params;
  if (spec.model == ModelClass::no_ar) p.phi = 0.0;
  Layout layout = make_layout(spec);
  const Eigen::Index n = layout.sites.size(), steps = spec.steps;
  const auto k = static_cast<Eigen::Index>(spec.covariates.size());

  const PropagatorModel props(spec.model, layout.sites.coords(), layout.areas, layout.wind);
  SynthResult out;
  out.spectral_radius = max_radius(props, p, steps);
  if (!(out.spectral_radius < 1.0)) {
    char msg[128];
    std::snprintf(msg, sizeof msg, "simulate: unstable propagator, max spectral radius of phi G_t is %.6g",
                  out.spectral_radius);
    throw NumericalError(msg);
  }

  Random cov_rng(spec.seed, kCovariates);
  std::vector<Eigen::MatrixXd> x;
  x.reserve(static_cast<std::size_t>(steps));
  for (Eigen::Index t = 0; t < steps; ++t) {
    Eigen::MatrixXd xt(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) xt(i, j) = cov_rng.normal();
    }
    x.push_back(std::move(xt));
  }
  CovariateGrid covariates(spec.covariates, std::move(x));

  Random rng(spec.seed, kLatent);
  const Eigen::MatrixXd l_q = factor_or_zero(exp_covariance(distance_matrix(layout.sites), p.rho0, 1.0) * p.sigma2);
  const double nugget = std::sqrt(p.tau2);
  out.truth.xi.resize(steps + 1, n);
  out.truth.w.resize(steps, n);
  out.truth.xi.row(0) = (l_q * rng.normal_vector(n)).transpose();
  ObservationGrid obs(steps, n);
  Random miss_rng(spec.seed, kMissing);
  for (Eigen::Index t = 1; t <= steps; ++t) {
    const Eigen::VectorXd prev = out.truth.xi.row(t - 1).transpose();
    const Eigen::VectorXd xi = p.phi == 0.0 ? Eigen::VectorXd(l_q * rng.normal_vector(n))
                                            : Eigen::VectorXd(p.phi * (props.at(p, t) * prev) + l_q * rng.normal_vector(n));
    out.truth.xi.row(t) = xi.transpose();
    const Eigen::VectorXd w = covariates.design(t) * p.beta + xi + nugget * rng.normal_vector(n);
    out.truth.w.row(t - 1) = w.transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool missing = spec.missing_rate > 0.0 && miss_rng.uniform() < spec.missing_rate;
      obs.at(t, i) = missing ? Observation::missing() : Observation::from_amount(transform(w(i), p.lambda));
    }
  }

  out.areas = layout.areas;
  out.data = Dataset{std::move(layout.sites), std::move(obs), std::move(covariates), std::move(layout.wind)};
  return out;
}

Params reference_params() {
  Params p;
  p.lambda = 1.58;
  p.beta.resize(7);
  p.beta << -1.05, -0.0473, -0.0108, 0.00347, -0.717, 0.406, 1.14;
  p.tau2 = 0.0685;
  p.sigma2 = 1.04;
  p.rho0 = 92.0;
  p.phi = 0.000159;
  p.rho1 = 93.6;
  p.c = 4.1;
  p.alpha = 0.704;
  p.u = 0.879;
  return p;
}

std::vector<std::string> reference_covariates() { return {"X", "Y", "Z", "Temp", "Dew", "SpecHum"}; }

double phi_for_radius(const SynthSpec& spec, double target) {
  const Layout layout = make_layout(spec);
  const PropagatorModel props(spec.model, layout.sites.coords(), layout.areas, layout.wind);
  Params unit = spec.params;
  unit.phi = 1.0;
  const double radius = max_radius(props, unit, spec.steps);
  if (!(radius > 0.0)) throw NumericalError("phi_for_radius: propagator has zero spectral radius");
  return target / radius;
}

SynthSpec default_scenario(std::uint64_t seed) {
  SynthSpec spec;
  spec.params = reference_params();
  spec.covariates = reference_covariates();
  spec.seed = seed;
  spec.params.phi = phi_for_radius(spec, 0.6);
  return spec;
}

}  // namespace convar

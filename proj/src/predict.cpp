#include "convar/predict.hpp"

#include "convar/error.hpp"
#include "convar/kalman.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <thread>

namespace convar {

std::string to_string(TargetClass c) {
  switch (c) {
    case TargetClass::station: return "station";
    case TargetClass::point: return "point";
    case TargetClass::areal: return "areal";
  }
  return "?";
}

Target Target::at_station(Eigen::Index origin, Eigen::Index time, Eigen::Index station, std::string label) {
  Target t;
  t.origin = origin;
  t.time = time;
  t.kind = TargetClass::station;
  t.station = station;
  t.label = std::move(label);
  return t;
}

Target Target::at_point(Eigen::Index origin, Eigen::Index time, const Point& coord, std::string label) {
  Target t;
  t.origin = origin;
  t.time = time;
  t.kind = TargetClass::point;
  t.coord = coord;
  t.label = std::move(label);
  return t;
}

Target Target::areal(Eigen::Index origin, Eigen::Index time, Eigen::VectorXd weights, std::string label) {
  Target t;
  t.origin = origin;
  t.time = time;
  t.kind = TargetClass::areal;
  t.weights = std::move(weights);
  t.label = std::move(label);
  return t;
}

void ForecastConfig::validate() const {
  if (refresh_sweeps < 1) throw ValidationError("refresh_sweeps must be >= 1");
  if (lag < 1) throw ValidationError("lag must be >= 1");
  if (workers < 1) throw ValidationError("workers must be >= 1");
}

std::vector<std::size_t> subsample_indices(std::size_t available, std::size_t wanted) {
  std::vector<std::size_t> out;
  if (available == 0 || wanted == 0) return out;
  const std::size_t m = std::min(available, wanted);
  out.reserve(m);
  for (std::size_t k = 0; k < m; ++k) out.push_back(k * available / m);
  return out;
}

AugmentedSystem augmented_system(const Eigen::MatrixX2d& stations, const Eigen::VectorXd& station_areas,
                                 const Eigen::MatrixX2d& new_sites, const Eigen::VectorXd& augmented_areas,
                                 const Eigen::Matrix2d& sigma_inv, const Eigen::Vector2d& mu_t,
                                 const Eigen::Vector2d& mu_next, double rho0) {
  const Eigen::Index n = stations.rows(), m = new_sites.rows();
  if (station_areas.size() != n || augmented_areas.size() != n + m) {
    throw ValidationError("augmented_system: area vectors do not match the site counts");
  }
  AugmentedSystem sys;
  sys.g = propagator(stations, station_areas, sigma_inv, mu_t);
  sys.g_star = propagator(new_sites, stations, station_areas, sigma_inv, mu_t);
  sys.h = propagator(stations, stations, Eigen::VectorXd(augmented_areas.head(n)), sigma_inv, mu_next);
  sys.h_star = propagator(stations, new_sites, Eigen::VectorXd(augmented_areas.tail(m)), sigma_inv, mu_next);
  Eigen::MatrixX2d all(n + m, 2);
  all << stations, new_sites;
  sys.v = exp_correlation(distance_matrix(all), rho0);
  return sys;
}

GaussianMoments new_site_conditional(const AugmentedSystem& sys, double phi, double sigma2,
                                     const Eigen::VectorXd& xi_prev, const Eigen::VectorXd& xi_t,
                                     const std::optional<Eigen::VectorXd>& xi_next) {
  const Eigen::Index n = sys.g.rows(), m = sys.g_star.rows();
  const Eigen::MatrixXd v_oo = sys.v.topLeftCorner(n, n);
  const Eigen::MatrixXd v_so = sys.v.bottomLeftCorner(m, n);
  const Eigen::MatrixXd v_ss = sys.v.bottomRightCorner(m, m);
  const Eigen::LLT<Eigen::MatrixXd> llt(v_oo);
  if (llt.info() != Eigen::Success) throw NumericalError("new_site_conditional: station correlation not PD");
  const Eigen::MatrixXd krig = llt.solve(v_so.transpose()).transpose();  // V_so V_oo^{-1}

  GaussianMoments out;
  out.mean = phi * (sys.g_star * xi_prev) + krig * (xi_t - phi * (sys.g * xi_prev));
  out.cov = sigma2 * (v_ss - krig * v_so.transpose());
  if (xi_next) {
    const Eigen::MatrixXd b = phi * sys.h_star;
    const Eigen::VectorXd r = *xi_next - phi * (sys.h * xi_t);
    const Eigen::MatrixXd s = b * out.cov * b.transpose() + sigma2 * v_oo;
    const Eigen::LLT<Eigen::MatrixXd> s_llt(s);
    if (s_llt.info() != Eigen::Success) throw NumericalError("new_site_conditional: innovation covariance not PD");
    const Eigen::MatrixXd gain = s_llt.solve(b * out.cov).transpose();  // C B' S^{-1}
    out.mean += gain * (r - b * out.mean);
    out.cov -= gain * b * out.cov;
  }
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

ArealSamples predict_areal(const Eigen::MatrixXd& member_samples, Eigen::VectorXd weights) {
  if (weights.size() != member_samples.rows()) throw ValidationError("predict_areal: one weight per member required");
  ArealSamples out;
  const double total = weights.sum();
  if (!(total > 0.0)) throw ValidationError("predict_areal: weights sum to zero");
  if (std::abs(total - 1.0) > 1e-9) {
    weights /= total;
    out.renormalized = true;
  }
  out.samples = weights.transpose() * member_samples;
  return out;
}

namespace {

// Point targets sharing (origin, time), sampled jointly.
struct PointGroup {
  Eigen::Index origin = 0, time = 0;
  std::vector<Point> points;            // unique coordinates
  std::vector<std::size_t> point_of;    // per member target: index into points
  std::vector<std::size_t> members;     // target indices
  std::vector<Eigen::Index> coincident;  // per point: station index or -1
  std::vector<Eigen::Index> nearest;     // per point: station supplying covariates
  std::vector<std::size_t> free;         // points not coincident with a station
  Eigen::VectorXd augmented_areas;
};

struct OriginBlock {
  Eigen::Index origin = 0;
  Eigen::Index horizon = 0;  // furthest target time minus origin, >= 0
  std::vector<std::size_t> targets;
  std::vector<std::size_t> groups;
};

struct Shared {
  const Dataset* data = nullptr;
  PropagatorModel props;
  Eigen::MatrixXd distances;
  Eigen::Index train_end = 0;
  Eigen::Index max_time = 0;
  std::vector<Target> targets;
  std::vector<OriginBlock> blocks;
  std::vector<PointGroup> groups;
  ForecastConfig config;
};

Eigen::MatrixXd noise_factor(const Eigen::MatrixXd& cov) {
  if (cov.cwiseAbs().maxCoeff() == 0.0) return Eigen::MatrixXd::Zero(cov.rows(), cov.cols());
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    Eigen::MatrixXd jittered = cov;
    jittered.diagonal().array() += 1e-10 * cov.diagonal().maxCoeff();
    llt.compute(jittered);
    if (llt.info() != Eigen::Success) throw NumericalError("innovation covariance is not positive definite");
  }
  return llt.matrixL();
}

class DrawSampler {
 public:
  DrawSampler(const Shared& sh, const Draw& draw, Random& rng)
      : sh_(sh), p_(draw.params), rng_(rng), n_(sh.distances.rows()) {
    const Eigen::Index t0 = sh.train_end;
    const Eigen::Index last_origin = sh.blocks.back().origin;
    xi_.resize(last_origin + 1, n_);
    w_.resize(last_origin, n_);
    xi_.topRows(t0 + 1) = draw.latent->xi.topRows(t0 + 1);
    w_.topRows(t0) = draw.latent->w.topRows(t0);
    g_ = sh.props.build(p_, 1, sh.max_time);
    v_ = exp_correlation(sh.distances, p_.rho0);
    q_ = p_.sigma2 * v_;
    l_q_ = noise_factor(q_);
    nugget_ = std::sqrt(std::max(p_.tau2, 0.0));
    cur_ = t0;
  }

  void run(Eigen::Ref<Eigen::VectorXd> column) {
    for (const auto& block : sh_.blocks) {
      while (cur_ < block.origin) {
        ++cur_;
        extend(cur_);
        refresh(cur_);
      }
      forecast(block, column);
    }
  }

 private:
  Eigen::VectorXd mean(Eigen::Index t) const { return sh_.data->covariates.design(t) * p_.beta; }
  const Eigen::MatrixXd& g(Eigen::Index t) const { return g_[static_cast<std::size_t>(t - 1)]; }
  Eigen::VectorXd innovation() { return l_q_ * rng_.normal_vector(n_); }

  void draw_w(Eigen::Index t) {
    const Eigen::VectorXd mu = mean(t) + xi_.row(t).transpose();
    for (Eigen::Index i = 0; i < n_; ++i) {
      const auto& o = sh_.data->observations.at(t, i);
      double& w = w_(t - 1, i);
      switch (o.kind) {
        case ObsKind::positive: w = std::pow(o.amount, 1.0 / p_.lambda); break;
        case ObsKind::zero: w = rng_.truncated_normal_upper(mu(i), nugget_, 0.0); break;
        case ObsKind::missing: w = rng_.normal(mu(i), nugget_); break;
      }
    }
  }

  void extend(Eigen::Index t) {
    xi_.row(t) = (p_.phi * (g(t) * xi_.row(t - 1).transpose()) + innovation()).transpose();
    draw_w(t);
  }

  // Fixed-lag Gibbs refresh of (xi, W) over the trailing window ending at t.
  void refresh(Eigen::Index t) {
    const Eigen::Index a = std::max<Eigen::Index>(1, t - sh_.config.lag + 1);
    const Eigen::Index len = t - a + 1;
    std::vector<Eigen::MatrixXd> transitions;
    transitions.reserve(static_cast<std::size_t>(len));
    for (Eigen::Index s = a; s <= t; ++s) transitions.push_back(p_.phi * g(s));
    Eigen::MatrixXd means(len, n_);
    for (Eigen::Index s = a; s <= t; ++s) means.row(s - a) = mean(s).transpose();
    const Eigen::MatrixXd p0 = Eigen::MatrixXd::Zero(n_, n_);
    for (int sweep = 0; sweep < sh_.config.refresh_sweeps; ++sweep) {
      const Eigen::MatrixXd y = w_.middleRows(a - 1, len) - means;
      const Eigen::MatrixXd path =
          ffbs(xi_.row(a - 1).transpose(), p0, transitions, q_, y, p_.tau2, rng_);
      xi_.middleRows(a, len) = path.bottomRows(len);
      for (Eigen::Index s = a; s <= t; ++s) draw_w(s);
    }
  }

  void forecast(const OriginBlock& block, Eigen::Ref<Eigen::VectorXd> column) {
    const Eigen::Index o = block.origin, k = block.horizon;
    Eigen::MatrixXd fxi(k + 1, n_), fy(k, n_);
    fxi.row(0) = xi_.row(o);
    for (Eigen::Index step = 1; step <= k; ++step) {
      const Eigen::Index s = o + step;
      fxi.row(step) = (p_.phi * (g(s) * fxi.row(step - 1).transpose()) + innovation()).transpose();
      const Eigen::VectorXd w = mean(s) + fxi.row(step).transpose() + nugget_ * rng_.normal_vector(n_);
      for (Eigen::Index i = 0; i < n_; ++i) fy(step - 1, i) = transform(w(i), p_.lambda);
    }
    auto xi_at = [&](Eigen::Index s) -> Eigen::VectorXd {
      return s <= o ? Eigen::VectorXd(xi_.row(s).transpose()) : Eigen::VectorXd(fxi.row(s - o).transpose());
    };
    auto y_at = [&](Eigen::Index s) -> Eigen::VectorXd {
      if (s > o) return fy.row(s - o - 1).transpose();
      Eigen::VectorXd y(n_);
      for (Eigen::Index i = 0; i < n_; ++i) {
        const auto& obs = sh_.data->observations.at(s, i);
        y(i) = obs.kind == ObsKind::missing ? transform(w_(s - 1, i), p_.lambda) : obs.amount;
      }
      return y;
    };

    for (std::size_t gi : block.groups) {
      const PointGroup& grp = sh_.groups[gi];
      const Eigen::Index s = grp.time;
      const Eigen::VectorXd xi_s = xi_at(s);
      Eigen::VectorXd values(static_cast<Eigen::Index>(grp.points.size()));
      if (!grp.free.empty()) {
        std::optional<Eigen::VectorXd> next;
        if (s + 1 <= o) next = xi_at(s + 1);
        const GaussianMoments mom = new_site_conditional(system(grp, s, next.has_value()), p_.phi, p_.sigma2,
                                                         xi_at(s - 1), xi_s, next);
        const Eigen::VectorXd draw = sample_mvn(rng_, mom.mean, mom.cov);
        for (std::size_t f = 0; f < grp.free.size(); ++f) {
          values(static_cast<Eigen::Index>(grp.free[f])) = draw(static_cast<Eigen::Index>(f));
        }
      }
      const Eigen::MatrixXd design = sh_.data->covariates.design(s);
      for (std::size_t q = 0; q < grp.points.size(); ++q) {
        const auto qi = static_cast<Eigen::Index>(q);
        if (grp.coincident[q] >= 0) values(qi) = xi_s(grp.coincident[q]);
        const double w = design.row(grp.nearest[q]).dot(p_.beta) + values(qi) + nugget_ * rng_.normal();
        values(qi) = transform(w, p_.lambda);
      }
      for (std::size_t m = 0; m < grp.members.size(); ++m) {
        column(static_cast<Eigen::Index>(grp.members[m])) = values(static_cast<Eigen::Index>(grp.point_of[m]));
      }
    }

    for (std::size_t ti : block.targets) {
      const Target& t = sh_.targets[ti];
      if (t.kind == TargetClass::point) continue;
      const Eigen::VectorXd y = y_at(t.time);
      column(static_cast<Eigen::Index>(ti)) = t.kind == TargetClass::station ? y(t.station) : t.weights.dot(y);
    }
  }

  AugmentedSystem system(const PointGroup& grp, Eigen::Index s, bool with_next) const {
    const auto& props = sh_.props;
    const Eigen::Index m = static_cast<Eigen::Index>(grp.free.size());
    Eigen::MatrixX2d coords(m, 2);
    for (Eigen::Index f = 0; f < m; ++f) coords.row(f) = grp.points[grp.free[static_cast<std::size_t>(f)]].transpose();
    if (props.model() == ModelClass::separable || props.model() == ModelClass::no_ar) {
      // Point kernel: a station only feeds itself, a new site inherits the
      // kriged previous value.
      AugmentedSystem sys;
      Eigen::MatrixX2d all(n_ + m, 2);
      all << props.coords(), coords;
      sys.v = exp_correlation(distance_matrix(all), p_.rho0);
      const Eigen::LLT<Eigen::MatrixXd> llt(sys.v.topLeftCorner(n_, n_));
      sys.g = Eigen::MatrixXd::Identity(n_, n_);
      sys.g_star = llt.solve(sys.v.topRightCorner(n_, m)).transpose();
      sys.h = Eigen::MatrixXd::Identity(n_, n_);
      sys.h_star = Eigen::MatrixXd::Zero(n_, m);
      return sys;
    }
    const Eigen::Vector2d mu_next = with_next ? props.mu(p_, s + 1) : Eigen::Vector2d(props.mu(p_, s));
    return augmented_system(props.coords(), props.areas(), coords, grp.augmented_areas, props.sigma_inv(p_),
                            props.mu(p_, s), mu_next, p_.rho0);
  }

  const Shared& sh_;
  const Params& p_;
  Random& rng_;
  Eigen::Index n_;
  Eigen::MatrixXd xi_, w_, v_, q_, l_q_;
  std::vector<Eigen::MatrixXd> g_;
  double nugget_ = 0.0;
  Eigen::Index cur_ = 0;
};

Eigen::Index nearest_station(const Eigen::MatrixX2d& coords, const Point& p) {
  Eigen::Index best = 0;
  (coords.rowwise() - p.transpose()).rowwise().squaredNorm().minCoeff(&best);
  return best;
}

}  // namespace

PredictiveEnsemble predict_ahead(const Dataset& data, const Eigen::VectorXd& areas, ModelClass model,
                                 Eigen::Index train_end, const std::vector<Draw>& draws,
                                 std::vector<Target> targets, const ForecastConfig& config) {
  config.validate();
  const Eigen::Index n = data.stations.size();
  if (targets.empty()) throw ValidationError("no prediction targets");
  if (draws.empty()) throw ValidationError("no posterior draws");
  for (const auto& d : draws) {
    if (!d.latent || d.latent->xi.rows() < train_end + 1 || d.latent->xi.cols() != n) {
      throw ValidationError("posterior draws lack latent snapshots covering the training period");
    }
  }

  PredictiveEnsemble out;
  Eigen::Index max_time = 0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    auto& t = targets[k];
    const std::string where = "target " + std::to_string(k) + " (" + t.label + ")";
    if (t.origin < train_end) throw ValidationError(where + ": origin precedes the end of training");
    if (t.origin > data.observations.steps()) throw ValidationError(where + ": origin beyond the observations");
    if (t.time < 1) throw ValidationError(where + ": time must be >= 1");
    if (t.kind == TargetClass::station && (t.station < 0 || t.station >= n)) {
      throw ValidationError(where + ": unknown station");
    }
    if (t.kind == TargetClass::areal) {
      if (t.weights.size() != n) throw ValidationError(where + ": one areal weight per station required");
      const double total = t.weights.sum();
      if (!(total > 0.0)) throw ValidationError(where + ": region does not overlap any cell");
      if (std::abs(total - 1.0) > 1e-9) {
        t.weights /= total;
        out.warnings.push_back(where + ": areal weights renormalised");
      }
    }
    max_time = std::max({max_time, t.time, t.origin});
  }
  if (data.covariates.steps() < max_time) {
    throw ValidationError("covariates end at step " + std::to_string(data.covariates.steps()) +
                          " but targets reach step " + std::to_string(max_time));
  }
  if (data.wind.steps() < max_time) {
    throw ValidationError("wind ends at step " + std::to_string(data.wind.steps()) + " but targets reach step " +
                          std::to_string(max_time));
  }

  Shared sh{&data, PropagatorModel(model, data.stations.coords(), areas, data.wind), distance_matrix(data.stations),
            train_end, max_time, targets, {}, {}, config};

  std::map<Eigen::Index, OriginBlock> blocks;
  std::map<std::pair<Eigen::Index, Eigen::Index>, std::size_t> group_of;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const auto& t = targets[k];
    auto& b = blocks[t.origin];
    b.origin = t.origin;
    b.horizon = std::max(b.horizon, t.time - t.origin);
    b.targets.push_back(k);
    if (t.kind != TargetClass::point) continue;
    auto key = std::make_pair(t.origin, t.time);
    auto it = group_of.find(key);
    if (it == group_of.end()) {
      it = group_of.emplace(key, sh.groups.size()).first;
      PointGroup grp;
      grp.origin = t.origin;
      grp.time = t.time;
      sh.groups.push_back(grp);
      b.groups.push_back(it->second);
    }
    auto& grp = sh.groups[it->second];
    std::size_t q = 0;
    while (q < grp.points.size() && (grp.points[q] - t.coord).norm() > kGeomTolerance) ++q;
    if (q == grp.points.size()) grp.points.push_back(t.coord);
    grp.point_of.push_back(q);
    grp.members.push_back(k);
  }
  const Eigen::MatrixX2d coords = data.stations.coords();
  const bool convolution = model == ModelClass::conv_drift || model == ModelClass::conv_iso;
  for (auto& grp : sh.groups) {
    std::vector<Site> sites = data.stations.sites();
    for (std::size_t q = 0; q < grp.points.size(); ++q) {
      const Eigen::Index near = nearest_station(coords, grp.points[q]);
      grp.nearest.push_back(near);
      const bool same = (coords.row(near).transpose() - grp.points[q]).norm() <= kGeomTolerance;
      grp.coincident.push_back(same ? near : -1);
      if (!same) {
        grp.free.push_back(q);
        sites.push_back({"\x1fnew" + std::to_string(q), grp.points[q]});
      }
    }
    if (convolution && !grp.free.empty()) grp.augmented_areas = build_tessellation(StationSet(sites)).areas();
  }
  for (auto& [origin, b] : blocks) sh.blocks.push_back(std::move(b));

  out.draw_indices = subsample_indices(draws.size(), draws.size());
  out.targets = targets;
  const auto m = static_cast<Eigen::Index>(out.draw_indices.size());
  out.samples.resize(static_cast<Eigen::Index>(targets.size()), m);

  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(m));
  std::atomic<Eigen::Index> next{0};
  auto work = [&] {
    for (Eigen::Index j = next++; j < m; j = next++) {
      try {
        Random rng(config.seed, static_cast<std::uint64_t>(j));
        DrawSampler sampler(sh, draws[out.draw_indices[static_cast<std::size_t>(j)]], rng);
        sampler.run(out.samples.col(j));
      } catch (...) {
        errors[static_cast<std::size_t>(j)] = std::current_exception();
      }
    }
  };
  const int threads = static_cast<int>(std::min<Eigen::Index>(config.workers, m));
  std::vector<std::thread> pool;
  for (int k = 1; k < threads; ++k) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

PredictiveEnsemble predict_new_sites(const Dataset& data, const Eigen::VectorXd& areas, ModelClass model,
                                     Eigen::Index train_end, const std::vector<Draw>& draws,
                                     const std::vector<Point>& sites, Eigen::Index t, const ForecastConfig& config) {
  if (t < 1 || t > train_end) throw ValidationError("predict_new_sites: step must lie in the training period");
  std::vector<Target> targets;
  for (std::size_t k = 0; k < sites.size(); ++k) {
    targets.push_back(Target::at_point(train_end, t, sites[k], "site" + std::to_string(k)));
  }
  return predict_ahead(data, areas, model, train_end, draws, std::move(targets), config);
}

}  // namespace convar

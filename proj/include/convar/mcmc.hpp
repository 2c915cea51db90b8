#pragma once

#include "convar/data.hpp"
#include "convar/model.hpp"
#include "convar/random.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace convar {

/// Gamma priors (mean, variance) for the ranges and for c, normal prior on u,
/// uniform prior on alpha. tau2 and sigma2 get 1/x priors; phi, lambda and
/// beta are flat.
struct PriorConfig {
  double rho_mean = 100.0;
  double rho_var = 10.0;
  double c_mean = 1.0;
  double c_var = 1.0;
  double u_var = 1e4;

  void validate() const;
  double log_rho(double rho) const;
  double log_c(double c) const;
  double log_u(double u) const;
  double log_alpha(double alpha) const;
};

enum class LatentStrategy { ffbs, single_t, automatic };

LatentStrategy parse_latent_strategy(const std::string& s);
std::string to_string(LatentStrategy s);

/// Random-walk standard deviations on the transformed scales: log lambda,
/// log rho0, log rho1, log c, logit(2 alpha / pi), raw u.
struct ProposalScales {
  double lambda = 0.05;
  double rho0 = 0.02;
  double rho1 = 0.02;
  double c = 0.1;
  double alpha = 0.1;
  double u = 0.1;
};

struct ChainConfig {
  long n_burnin = 5000;
  long n_samples = 195000;
  long thin = 1;
  std::uint64_t seed = 1;
  ProposalScales proposal;
  LatentStrategy strategy = LatentStrategy::automatic;
  /// Robbins-Monro scaling of the Metropolis proposals during burn-in.
  bool adapt = true;
  /// Keep a latent snapshot with every `latent_every`-th stored draw.
  bool store_latent = true;
  long latent_every = 1;

  void validate() const;
};

/// Latent fields of one MCMC state. xi has rows 0..T; w has rows for steps
/// 1..T (row t - 1 holds step t).
struct LatentState {
  Eigen::MatrixXd xi;
  Eigen::MatrixXd w;
};

/// Parameters sampled jointly in the range block.
struct RangeParams {
  double rho0, rho1, c, alpha, u;
};

/// Immutable inputs shared by every update: the first `steps` time steps of a
/// dataset, the cell areas and the model class.
class Posterior {
 public:
  Posterior(const Dataset& data, Eigen::Index steps, Eigen::VectorXd areas, ModelClass model,
            PriorConfig prior = {});

  Eigen::Index steps() const { return steps_; }
  Eigen::Index stations() const { return distances_.rows(); }
  Eigen::Index coefficients() const { return xtx_.rows(); }
  ModelClass model() const { return propagators_.model(); }
  const PriorConfig& prior() const { return prior_; }
  const PropagatorModel& propagators() const { return propagators_; }
  const Eigen::MatrixXd& distances() const { return distances_; }
  const Eigen::MatrixXd& design(Eigen::Index t) const { return design_[static_cast<std::size_t>(t - 1)]; }
  const Observation& obs(Eigen::Index t, Eigen::Index i) const { return observations_.at(t, i); }
  const ObservationGrid& observations() const { return observations_; }
  const Eigen::MatrixXd& design_gram() const { return xtx_; }
  Eigen::Index positive_count() const { return positive_count_; }
  bool samples_phi() const { return model() != ModelClass::no_ar; }
  /// Which of rho1, c, alpha, u the range block moves (rho0 always moves).
  bool samples_rho1() const;
  bool samples_anisotropy() const;

 private:
  Eigen::Index steps_;
  ObservationGrid observations_;
  std::vector<Eigen::MatrixXd> design_;
  Eigen::MatrixXd xtx_;
  Eigen::MatrixXd distances_;
  PropagatorModel propagators_;
  PriorConfig prior_;
  Eigen::Index positive_count_ = 0;
};

/// One MCMC state plus the quantities derived from its parameters.
struct ChainState {
  Params params;
  LatentState latent;
  std::vector<Eigen::MatrixXd> g;   // G_1..G_T
  Eigen::LLT<Eigen::MatrixXd> v_chol;  // V_rho0
  double log_det_v = 0.0;
  std::map<std::string, long> diagnostics;

  void note(const std::string& message) { ++diagnostics[message]; }
};

/// Rebuild G_t and the Cholesky factor of V after a parameter change.
void refresh_caches(const Posterior& post, ChainState& state);
ChainState make_state(const Posterior& post, Params params, LatentState latent);
/// Least-squares start for beta, half the residual variance for tau2 and
/// sigma2, prior-mean ranges, c = 1, alpha = pi/4, u = 0, phi = 1e-4, xi = 0.
ChainState initial_state(const Posterior& post);

/// Unnormalised log joint posterior of (theta, xi, W). Gaussian 2*pi
/// constants are dropped; gamma/normal priors are full log densities.
/// W entries at positive observations are taken as Y^{1/lambda}. Returns
/// -infinity when a zero-rain slot has W > 0 or a parameter leaves its support.
double log_posterior(const Posterior& post, const Params& params, const LatentState& latent);

void update_w(const Posterior& post, ChainState& state, Random& rng);
void update_beta(const Posterior& post, ChainState& state, Random& rng);
void update_phi(const Posterior& post, ChainState& state, Random& rng);
void update_sigma2(const Posterior& post, ChainState& state, Random& rng);
void update_tau2(const Posterior& post, ChainState& state, Random& rng);
void ffbs_update_xi(const Posterior& post, ChainState& state, Random& rng);
void single_site_update_xi(const Posterior& post, ChainState& state, Random& rng);

/// Terms of the log posterior that involve lambda.
double lambda_log_target(const Posterior& post, const ChainState& state, double lambda);
/// Log Metropolis ratio for moving lambda to `proposed` under a random walk on log lambda.
double lambda_log_acceptance(const Posterior& post, const ChainState& state, double proposed);
/// Returns true on acceptance. Skipped (false) without positive observations.
bool mh_update_lambda(const Posterior& post, ChainState& state, Random& rng, double sd);

RangeParams current_ranges(const Params& p);
/// Terms of the log posterior that involve (rho0, rho1, c, alpha, u).
double ranges_log_target(const Posterior& post, const ChainState& state, const RangeParams& r);
/// Log Metropolis ratio including the Jacobians of the transformed random walk;
/// -infinity outside the support.
double ranges_log_acceptance(const Posterior& post, const ChainState& state, const RangeParams& proposed);
bool mh_update_ranges(const Posterior& post, ChainState& state, Random& rng, const ProposalScales& scales);

struct Draw {
  std::uint64_t chain = 0;
  Params params;
  double log_posterior = 0.0;
  std::optional<LatentState> latent;
};

struct AcceptanceStats {
  std::string block;
  long accepted = 0;
  long proposed = 0;
  double final_scale = 1.0;

  double rate() const { return proposed > 0 ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0; }
};

struct ChainOutput {
  std::vector<Draw> draws;
  std::vector<AcceptanceStats> acceptance;
  std::vector<double> log_posterior_trace;
  /// max_t of the spectral radius of phi G_t at the highest-posterior draw.
  double mode_spectral_radius = 0.0;
  std::map<std::string, long> diagnostics;

  std::size_t mode_index() const;
};

LatentStrategy resolve_strategy(LatentStrategy s, ModelClass m);

/// Runs one chain. Deterministic given config.seed and `chain_index`.
ChainOutput run_chain(const Posterior& post, const ChainConfig& config, std::uint64_t chain_index = 0,
                      std::optional<ChainState> start = std::nullopt);

/// Independent chains on `workers` threads, merged in chain order.
ChainOutput run_chains(const Posterior& post, const ChainConfig& config, int chains, int workers);

/// max_t spectral radius of phi G_t over steps 1..T.
double max_spectral_radius(const Posterior& post, const Params& p);

}  // namespace convar

#pragma once

#include "convar/random.hpp"

#include <Eigen/Dense>

#include <vector>

namespace convar {

/// Forward filtering, backward sampling for
///   x_0 ~ N(m0, P0),  x_t = A_t x_{t-1} + e_t,  e_t ~ N(0, Q),
///   y_t = x_t + v_t,  v_t ~ N(0, tau2 I),  t = 1..n.
/// `transitions[t-1]` is A_t and row t-1 of `y` is y_t. Returns the joint draw
/// x_0..x_n as an (n + 1) x N matrix. P0 may be zero (known initial state).
Eigen::MatrixXd ffbs(const Eigen::VectorXd& m0, const Eigen::MatrixXd& p0,
                     const std::vector<Eigen::MatrixXd>& transitions, const Eigen::MatrixXd& q,
                     const Eigen::MatrixXd& y, double tau2, Random& rng);

}  // namespace convar

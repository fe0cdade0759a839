#pragma once

#include <span>

#include <Eigen/Dense>

#include "pydt/belief_propagation.hpp"
#include "pydt/divergence.hpp"
#include "pydt/tree.hpp"

namespace pydt {

/// Standard normal CDF and its logarithm, accurate far into both tails.
double normal_cdf(double z);
double log_normal_cdf(double z);

/// Moments of the tilted distribution N(x; mean, var) * Phi((2y - 1) x).
struct TiltedMoments {
  double log_z = 0.0;
  double mean = 0.0;
  double var = 0.0;
};

TiltedMoments probit_moments(double cavity_mean, double cavity_var, int y);

struct EpOptions {
  double damping = 0.5;
  int max_sweeps = 50;
  double tolerance = 1e-6;
};

struct EpResult {
  LeafPotentials sites;  // Gaussian site approximations, one per (leaf, dimension)
  double log_evidence = 0.0;
  int sweeps = 0;
  bool converged = false;
  int skipped_updates = 0;
};

/// Expectation propagation over probit observations y (N x D, entries 0/1,
/// NaN for missing) on a fixed tree. Sites are updated one leaf and
/// dimension at a time against the exact cavity from belief propagation.
/// `warm_start` may carry sites from a previous call. `order` optionally
/// fixes the leaf visiting order.
EpResult run_ep(const Tree& tree, double sigma2, const Eigen::MatrixXd& y, const EpOptions& options = {},
                const LeafPotentials* warm_start = nullptr, std::span<const int> order = {});

/// One slice-sampling update of a latent x with density proportional to
/// N(x; prior_mean, prior_var) * Phi((2y - 1) x). y < 0 means unobserved,
/// in which case an exact Gaussian draw is returned.
double aux_slice_update(double x, double prior_mean, double prior_var, int y, Rng& rng);

/// Validates binary observations: every entry is 0, 1 or NaN.
void check_binary(const Eigen::MatrixXd& y);

}  // namespace pydt

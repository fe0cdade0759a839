#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pydt/belief_propagation.hpp"
#include "pydt/divergence.hpp"
#include "pydt/hyperparams.hpp"
#include "pydt/tree.hpp"

namespace pydt {

/// Weighted mixture of diagonal Gaussians.
struct MixtureDensity {
  struct Component {
    double weight = 0.0;
    Eigen::VectorXd mean;
    Eigen::VectorXd var;  // diagonal covariance
  };
  std::vector<Component> components;

  int dim() const { return components.empty() ? 0 : static_cast<int>(components.front().mean.size()); }
  double total_weight() const;
  double log_density(const Eigen::VectorXd& x) const;
  Eigen::VectorXd sample(Rng& rng) const;
  /// Throws std::invalid_argument unless weights are >= 0 summing to 1
  /// within `tol` and every variance is positive.
  void validate(double tol = 1e-12) const;
};

/// Where the walk of a new point ends, with its probability.
struct WalkOutcome {
  Attachment where;   // Edge outcomes carry no time: it is sampled later
  double mass = 0.0;
  double t_start = 0.0;  // start of the edge for Edge outcomes
};

/// Every outcome of the generative walk for one more point on `tree`:
/// divergence on each edge and a new branch at each branch point.
std::vector<WalkOutcome> walk_outcomes(const Tree& tree, const Hyperparams& hyper);

/// Predictive density of a new point given the tree, the location posterior
/// held by `bp` and the hyperparameters. Each edge contributes
/// `n_time_samples` equally weighted components at i.i.d. divergence times
/// drawn from the walk's density restricted to the edge. The diffusion
/// variance is bp.sigma2().
MixtureDensity predictive_mixture(const BeliefPropagation& bp, const Hyperparams& hyper, int n_time_samples,
                                  Rng& rng);

/// Builds the location posterior from `leaves` and calls the above.
MixtureDensity predictive_mixture(const Tree& tree, const Hyperparams& hyper, const LeafPotentials& leaves,
                                  int n_time_samples, Rng& rng);

/// Log of the average of the members' densities at x. `log_weights`, if
/// non-empty, gives unnormalized member weights (e.g. bounds for
/// bound-weighted K-best averaging); otherwise members count equally.
double log_predictive_density(std::span<const MixtureDensity> ensemble, const Eigen::VectorXd& x,
                              std::span<const double> log_weights = {});

}  // namespace pydt

#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "pydt/data_io.hpp"
#include "pydt/divergence.hpp"
#include "pydt/hyperparams.hpp"
#include "pydt/tree.hpp"

namespace pydt {

/// Shape/rate parameters of a Gamma distribution.
struct GammaParams {
  double shape = 1.0;
  double rate = 1.0;
  double mean() const { return shape / rate; }
};

/// State of one collapsed chain: structure and times, hyperparameters and the
/// cached log marginal likelihood. For probit data `leaf_values` holds the
/// current latent leaf locations; otherwise it is the observed data.
struct ChainState {
  Tree tree;
  Hyperparams hyper;
  Eigen::MatrixXd leaf_values;
  std::optional<Eigen::MatrixXd> binary;
  double log_ml = 0.0;
  bool constant_likelihood = false;  // prior-only chain

  long moves_proposed = 0;
  long moves_accepted = 0;
  long reattach_failures = 0;
};

struct McmcConfig {
  int iterations = 100;      // sweeps
  int burn_in = 0;
  int thin = 1;
  int moves_per_sweep = -1;  // -1: one move per data point
  bool update_c = true;
  bool update_sigma2 = true;
  bool update_alpha_beta = true;
  int check_every = 1000;    // moves between cached likelihood spot checks
  int max_reattach_attempts = 10000;

  void validate() const;
};

struct SampleRecord {
  int iteration = 0;
  double log_ml = 0.0;
  Hyperparams hyper;
  Tree tree;
  Eigen::MatrixXd leaf_values;  // data, or the current latents for probit chains
};

struct McmcResult {
  std::vector<SampleRecord> samples;
  ChainState final_state;
  double acceptance_rate = 0.0;
  double max_cache_error = 0.0;
};

/// Starts a chain from a prior draw of the tree over the data's rows.
ChainState init_chain(const Dataset& data, const Hyperparams& hyper, Rng& rng, bool constant_likelihood = false);

/// Recomputes the log marginal likelihood of the state from scratch.
double recompute_log_ml(const ChainState& state);

/// Log of the proposal-corrected prior ratio for moving `subtree` from its
/// current position to `where` (given the tree with the subtree detached):
/// [log pi(new) - log q(new)] - [log pi(old) - log q(old)], with q the
/// single-point walk density on the remaining tree. Zero for leaves.
double subtree_prior_correction(const Tree& detached, NodeId subtree, const Attachment& old_where,
                                const Attachment& new_where, const Hyperparams& hyper);

/// Detach/reattach Metropolis-Hastings step. Returns true if accepted.
bool subtree_move(ChainState& state, Rng& rng, int max_attempts = 10000);

/// Gamma conditional of c given the tree (prior a_c, b_c).
GammaParams c_conditional(const Tree& tree, const Hyperparams& hyper);
void gibbs_c(ChainState& state, Rng& rng);

/// Gamma conditional of the precision 1/sigma2 given all node locations
/// (rows indexed by node id).
GammaParams precision_conditional(const Tree& tree, const Eigen::MatrixXd& locations, const HyperPrior& prior);
void gibbs_sigma2(ChainState& state, Rng& rng);

/// Log target for (alpha, beta): structure and time factors plus the priors.
double alpha_beta_log_target(const Tree& tree, const Hyperparams& hyper, double alpha, double beta);
void slice_alpha_beta(ChainState& state, Rng& rng);

/// Probit chains: resamples internal locations and then each leaf latent.
void update_latents(ChainState& state, Rng& rng);

/// Runs a chain for config.iterations sweeps. `on_sample` is called for
/// every recorded sample as it is produced.
McmcResult run_mcmc(ChainState state, const McmcConfig& config, Rng& rng,
                    const std::function<void(const SampleRecord&)>& on_sample = {});

}  // namespace pydt

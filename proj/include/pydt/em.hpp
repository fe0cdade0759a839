#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "pydt/belief_propagation.hpp"
#include "pydt/data_io.hpp"
#include "pydt/hyperparams.hpp"
#include "pydt/mcmc.hpp"
#include "pydt/optimize.hpp"
#include "pydt/probit.hpp"
#include "pydt/tree.hpp"

namespace pydt {

/// Variational hyperparameter state: Gamma posteriors on c and on the
/// precision 1/sigma2, point values for (alpha, beta).
struct QHyper {
  GammaParams c{10.0, 10.0};
  GammaParams precision{10.0, 10.0};
  double alpha = 0.0;
  double beta = 0.0;
  HyperPrior prior{};

  /// Starts from point values: both Gamma posteriors get shape 10 and the
  /// matching mean.
  static QHyper from_point(const Hyperparams& h);
  /// Plug-in values c = <c>, sigma2 = 1 / <1/sigma2>.
  Hyperparams point() const;
};

/// Expected sufficient statistics of the location posterior at the
/// current times, under precision <1/sigma2>.
struct EStepStats {
  Eigen::VectorXd b;      // b for the edge above each node (by node id), 0.5 sum_d E[(x_i - x_p)^2]
  double log_ml = 0.0;    // log marginal likelihood (EP evidence for probit) at sigma2 = 1/<1/sigma2>
  double const_h = 0.0;   // bound terms that do not depend on times or q(1/sigma2)
  int edges = 0;
  LeafPotentials leaves;  // leaf potentials used (data or EP sites)
};

struct EmConfig {
  int max_cycles = 100;
  double tolerance = 1e-6;       // stop when the bound improves by less
  bool fix_alpha_beta = false;   // keep alpha and beta at their incoming values
  int hyper_rounds = 20;
  double alpha_max = 20.0;
  double beta_max = 0.99;
  LbfgsOptions lbfgs{};
  EpOptions ep{};

  void validate() const;
};

/// Internal nodes whose times are free variables, in preorder.
std::vector<NodeId> time_variables(const Tree& tree);

/// Runs belief propagation (after EP for probit data) and gathers the edge
/// statistics. `warm_sites` seeds EP.
EStepStats e_step(const Tree& tree, const QHyper& q, const Dataset& data, const EpOptions& ep = {},
                  const LeafPotentials* warm_sites = nullptr);

/// Variational lower bound at the tree's current times with fixed location
/// statistics. Times are point-estimated in s = logit(t), so the time prior
/// enters as a density in s. If `grad` is given it receives the gradient with respect to
/// s_i = log[t_i / (1 - t_i)] for the nodes of time_variables(). Returns
/// -inf when the times violate the ordering.
double lower_bound(const Tree& tree, const EStepStats& stats, const QHyper& q, Eigen::VectorXd* grad = nullptr);

/// Joint quasi-Newton maximization of the bound over all internal times.
/// Returns false (times unchanged) if the line search failed at the start.
bool m_step_times(Tree& tree, const EStepStats& stats, const QHyper& q, const LbfgsOptions& options = {});

/// Conjugate update of q(1/sigma2); coordinate-wise golden section search
/// over alpha and beta unless fixed; then the conjugate update of q(c).
void update_hyper(const Tree& tree, const EStepStats& stats, QHyper& q, const EmConfig& config);

/// The (alpha, beta) objective: structure factor plus the time terms with
/// q(c) at its optimum, i.e. S(alpha, beta) - (a_c + |I|) log(b_c - sum_i J_i log(1 - t_i)).
double alpha_beta_objective(const Tree& tree, const HyperPrior& prior, double alpha, double beta);

/// KL divergence between Gamma(shape, rate) distributions.
double gamma_kl(const GammaParams& q, const GammaParams& p);

struct EmResult {
  Tree tree;
  QHyper q;
  double bound = 0.0;
  std::vector<double> history;  // bound after each cycle
  int cycles = 0;
  bool flagged = false;         // a line search failed at some cycle
  std::optional<LeafPotentials> sites;  // EP sites for probit data
};

EmResult run_em(Tree tree, const Dataset& data, QHyper q, const EmConfig& config = {},
                const LeafPotentials* warm_sites = nullptr);

struct SearchEntry {
  Tree tree;
  double bound = 0.0;
  QHyper q;
  bool flagged = false;
  std::optional<LeafPotentials> sites;
};

struct SearchLogRecord {
  int move_id = 0;
  int detached_node = -1;
  int n_candidates = 0;
  double best_bound = 0.0;
};

struct SearchConfig {
  int k_best = 10;
  int max_iters = 100;     // subtree moves
  int stall = 50;          // stop after this many moves without a K-best change
  int n_refine = 3;        // candidates per move that get full EM
  bool ddt = false;        // constrain alpha = beta = 0 (binary trees only)
  Hyperparams init{};      // starting point
  bool sigma2_from_data = true;  // replace init.sigma2 by the average column variance (gaussian data)
  EmConfig em{};

  void validate() const;
};

struct SearchResult {
  std::vector<SearchEntry> kbest;  // sorted by bound, descending
  std::vector<SearchLogRecord> log;
};

/// Greedy sequential construction: each point joins at the candidate
/// (edge midpoint or branch point) with the best prior times likelihood.
Tree sequential_init(const Dataset& data, const Hyperparams& hyper, std::span<const int> order);

/// K-best greedy structure search driven by EM.
SearchResult greedy_search(const Dataset& data, const SearchConfig& config, Rng& rng,
                           const std::function<void(const SearchLogRecord&)>& on_move = {});

}  // namespace pydt

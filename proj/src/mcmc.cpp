#include "pydt/mcmc.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "pydt/belief_propagation.hpp"
#include "pydt/density.hpp"
#include "pydt/errors.hpp"
#include "pydt/generative.hpp"
#include "pydt/optimize.hpp"
#include "pydt/probit.hpp"

namespace pydt {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double attachment_time(const Tree& tree, const Attachment& where) {
  return where.kind == Attachment::Kind::Node ? tree.at(where.node).time : where.time;
}

double draw_gamma(const GammaParams& g, Rng& rng) {
  return std::gamma_distribution<double>(g.shape, 1.0 / g.rate)(rng);
}

double log_gamma_density(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double log_beta_density(double x, double a, double b) {
  return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x);
}

}  // namespace

void McmcConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("mcmc: iterations must be >= 0");
  if (burn_in < 0) throw std::invalid_argument("mcmc: burn-in must be >= 0");
  if (thin < 1) throw std::invalid_argument("mcmc: thin must be >= 1");
  if (moves_per_sweep < -1) throw std::invalid_argument("mcmc: moves per sweep must be >= 0 (or -1 for N)");
  if (check_every < 1) throw std::invalid_argument("mcmc: check interval must be >= 1");
  if (max_reattach_attempts < 1) throw std::invalid_argument("mcmc: reattach attempts must be >= 1");
}

ChainState init_chain(const Dataset& data, const Hyperparams& hyper, Rng& rng, bool constant_likelihood) {
  hyper.validate();
  if (data.rows() < 1) throw DataError("mcmc: no data");
  ChainState state;
  state.hyper = hyper;
  state.constant_likelihood = constant_likelihood;
  state.tree = sample_tree(data.rows(), data.dim(), hyper, rng, false);
  if (data.likelihood == Likelihood::Probit) {
    check_binary(data.values);
    state.binary = data.values;
    state.leaf_values = Eigen::MatrixXd::Zero(data.rows(), data.dim());
    for (int i = 0; i < data.rows(); ++i)
      for (int d = 0; d < data.dim(); ++d) {
        const double y = data.values(i, d);
        state.leaf_values(i, d) = std::isnan(y) ? 0.0 : (y == 1.0 ? 1.0 : -1.0);
      }
  } else {
    state.leaf_values = data.values;
  }
  state.log_ml = recompute_log_ml(state);
  return state;
}

double recompute_log_ml(const ChainState& state) {
  if (state.constant_likelihood) return 0.0;
  return marginal_likelihood(state.tree, state.hyper.sigma2, state.leaf_values);
}

double subtree_prior_correction(const Tree& detached, NodeId subtree, const Attachment& old_where,
                                const Attachment& new_where, const Hyperparams& hyper) {
  const double q_old = attachment_log_prob(detached, hyper, old_where);
  const double q_new = attachment_log_prob(detached, hyper, new_where);
  Tree t = detached;
  t.attach(subtree, old_where);
  const double prior_old = log_prior(t, hyper);
  t.detach(subtree);
  t.attach(subtree, new_where);
  const double prior_new = log_prior(t, hyper);
  return (prior_new - q_new) - (prior_old - q_old);
}

bool subtree_move(ChainState& state, Rng& rng, int max_attempts) {
  Tree& tree = state.tree;
  const std::vector<NodeId> movable = tree.movable_nodes();
  if (movable.empty()) return false;
  ++state.moves_proposed;
  const NodeId s = movable[std::uniform_int_distribution<std::size_t>(0, movable.size() - 1)(rng)];
  const double t_s = tree.at(s).time;
  const double prior_old = log_prior(tree, state.hyper);

  const Attachment old_where = tree.detach(s);
  // Truncated prior walk: redraw until the divergence precedes the subtree root.
  Attachment where;
  bool found = false;
  for (int attempt = 0; attempt < max_attempts && !found; ++attempt) {
    where = sample_attachment(tree, state.hyper, rng);
    found = attachment_time(tree, where) < t_s;
  }
  if (!found) {
    tree.attach(s, old_where);
    ++state.reattach_failures;
    return false;
  }
  const double q_old = attachment_log_prob(tree, state.hyper, old_where);
  const double q_new = attachment_log_prob(tree, state.hyper, where);

  tree.attach(s, where);
  const double prior_new = log_prior(tree, state.hyper);
  const double log_ml_new = recompute_log_ml(state);
  const auto movable_new = static_cast<double>(tree.movable_nodes().size());

  // Prior and proposal cancel exactly for leaves; for larger subtrees the
  // walk proposal is only the single-point prior and the ratio corrects it.
  const double log_accept = (log_ml_new - state.log_ml) + (prior_new - prior_old) - (q_new - q_old) +
                            std::log(static_cast<double>(movable.size())) - std::log(movable_new);
  if (std::log(std::uniform_real_distribution<double>(0.0, 1.0)(rng)) < log_accept) {
    state.log_ml = log_ml_new;
    ++state.moves_accepted;
    return true;
  }
  tree.detach(s);
  tree.attach(s, old_where);
  return false;
}

GammaParams c_conditional(const Tree& tree, const Hyperparams& hyper) {
  GammaParams g{hyper.prior.a_c, hyper.prior.b_c};
  HarmonicTable h(hyper.alpha, hyper.beta);
  for (NodeId id : tree.internal_nodes()) {
    g.shape += 1.0;
    g.rate -= h.j(child_counts(tree, id)) * std::log1p(-tree.at(id).time);
  }
  return g;
}

void gibbs_c(ChainState& state, Rng& rng) { state.hyper.c = draw_gamma(c_conditional(state.tree, state.hyper), rng); }

GammaParams precision_conditional(const Tree& tree, const Eigen::MatrixXd& locations, const HyperPrior& prior) {
  GammaParams g{prior.a_sigma2, prior.b_sigma2};
  for (NodeId id : tree.preorder()) {
    const Node& node = tree.at(id);
    if (node.is_root()) continue;
    const double dt = node.time - tree.at(node.parent).time;
    const auto delta = locations.row(id.value) - locations.row(node.parent.value);
    g.shape += 0.5 * tree.dim();
    g.rate += delta.squaredNorm() / (2.0 * dt);
  }
  return g;
}

void gibbs_sigma2(ChainState& state, Rng& rng) {
  if (state.constant_likelihood) {
    state.hyper.sigma2 = 1.0 / draw_gamma({state.hyper.prior.a_sigma2, state.hyper.prior.b_sigma2}, rng);
    return;
  }
  const BeliefPropagation bp(state.tree, state.hyper.sigma2, LeafPotentials::observed(state.leaf_values));
  const Eigen::MatrixXd x = bp.sample_locations(rng);
  state.hyper.sigma2 = 1.0 / draw_gamma(precision_conditional(state.tree, x, state.hyper.prior), rng);
  state.log_ml = recompute_log_ml(state);
}

double alpha_beta_log_target(const Tree& tree, const Hyperparams& hyper, double alpha, double beta) {
  if (!(alpha > 0.0) || !(beta > 0.0 && beta < 1.0)) return kNegInf;
  Hyperparams h = hyper;
  h.alpha = alpha;
  h.beta = beta;
  const double s = structure_factor(tree, alpha, beta);
  if (!std::isfinite(s)) return kNegInf;
  return s + times_factor(tree, h) + log_gamma_density(alpha, hyper.prior.a_alpha, hyper.prior.b_alpha) +
         log_beta_density(beta, hyper.prior.a_beta, hyper.prior.b_beta);
}

void slice_alpha_beta(ChainState& state, Rng& rng) {
  Hyperparams& h = state.hyper;
  if (!(h.alpha > 0.0)) h.alpha = h.prior.a_alpha / h.prior.b_alpha;
  if (!(h.beta > 0.0)) h.beta = h.prior.a_beta / (h.prior.a_beta + h.prior.b_beta);

  auto log_alpha_target = [&](double u) {
    const double a = std::exp(u);
    return alpha_beta_log_target(state.tree, h, a, h.beta) + u;
  };
  h.alpha = std::exp(slice_sample(log_alpha_target, std::log(h.alpha), 1.0, rng));

  auto logit_beta_target = [&](double v) {
    const double b = 1.0 / (1.0 + std::exp(-v));
    if (!(b > 0.0 && b < 1.0)) return kNegInf;
    return alpha_beta_log_target(state.tree, h, h.alpha, b) + std::log(b) + std::log1p(-b);
  };
  const double v = std::log(h.beta) - std::log1p(-h.beta);
  h.beta = 1.0 / (1.0 + std::exp(-slice_sample(logit_beta_target, v, 1.0, rng)));
}

void update_latents(ChainState& state, Rng& rng) {
  if (!state.binary) return;
  const Tree& tree = state.tree;
  const BeliefPropagation bp(tree, state.hyper.sigma2, LeafPotentials::observed(state.leaf_values));
  const Eigen::MatrixXd x = bp.sample_locations(rng);
  for (int i = 0; i < tree.num_leaves(); ++i) {
    const NodeId leaf = tree.leaf(i);
    const NodeId parent = tree.at(leaf).parent;
    const double var = state.hyper.sigma2 * (1.0 - tree.at(parent).time);
    for (int d = 0; d < tree.dim(); ++d) {
      const double y = (*state.binary)(i, d);
      const int obs = std::isnan(y) ? -1 : static_cast<int>(y);
      state.leaf_values(i, d) = aux_slice_update(state.leaf_values(i, d), x(parent.value, d), var, obs, rng);
    }
  }
  state.log_ml = recompute_log_ml(state);
}

McmcResult run_mcmc(ChainState state, const McmcConfig& config, Rng& rng,
                    const std::function<void(const SampleRecord&)>& on_sample) {
  config.validate();
  McmcResult result;
  const int moves = config.moves_per_sweep < 0 ? state.tree.num_leaves() : config.moves_per_sweep;
  long since_check = 0;
  for (int it = 1; it <= config.iterations; ++it) {
    for (int k = 0; k < moves; ++k) {
      subtree_move(state, rng, config.max_reattach_attempts);
      if (++since_check >= config.check_every) {
        since_check = 0;
        const double fresh = recompute_log_ml(state);
        const double err = std::abs(fresh - state.log_ml);
        result.max_cache_error = std::max(result.max_cache_error, err);
        if (!(err <= 1e-6 * std::max(1.0, std::abs(fresh))))
          throw NumericalError("mcmc: cached marginal likelihood drifted from recompute");
      }
    }
    update_latents(state, rng);
    if (config.update_c) gibbs_c(state, rng);
    if (config.update_sigma2) gibbs_sigma2(state, rng);
    if (config.update_alpha_beta) slice_alpha_beta(state, rng);
    if (!std::isfinite(state.log_ml)) throw NumericalError("mcmc: non-finite marginal likelihood");
    if (it > config.burn_in && (it - config.burn_in) % config.thin == 0) {
      SampleRecord rec{it, state.log_ml, state.hyper, state.tree, state.leaf_values};
      if (on_sample) on_sample(rec);
      result.samples.push_back(std::move(rec));
    }
  }
  result.acceptance_rate =
      state.moves_proposed ? static_cast<double>(state.moves_accepted) / static_cast<double>(state.moves_proposed) : 0.0;
  result.final_state = std::move(state);
  return result;
}

}  // namespace pydt

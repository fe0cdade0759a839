#include "pydt/predictive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "pydt/density.hpp"

namespace pydt {

namespace {

double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

double MixtureDensity::total_weight() const {
  double s = 0.0;
  for (const auto& c : components) s += c.weight;
  return s;
}

double MixtureDensity::log_density(const Eigen::VectorXd& x) const {
  if (components.empty()) throw std::invalid_argument("mixture: no components");
  if (x.size() != dim()) throw std::invalid_argument("mixture: dimension mismatch");
  std::vector<double> terms;
  terms.reserve(components.size());
  for (const auto& c : components) {
    if (c.weight <= 0.0) continue;
    double lp = std::log(c.weight);
    for (Eigen::Index d = 0; d < x.size(); ++d) lp += log_normal_pdf(x[d], c.mean[d], c.var[d]);
    terms.push_back(lp);
  }
  return log_sum_exp(terms);
}

Eigen::VectorXd MixtureDensity::sample(Rng& rng) const {
  if (components.empty()) throw std::invalid_argument("mixture: no components");
  std::vector<double> w;
  w.reserve(components.size());
  for (const auto& c : components) w.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  const auto& c = components[pick(rng)];
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd x(c.mean.size());
  for (Eigen::Index d = 0; d < x.size(); ++d) x[d] = c.mean[d] + std::sqrt(c.var[d]) * normal(rng);
  return x;
}

void MixtureDensity::validate(double tol) const {
  if (components.empty()) throw std::invalid_argument("mixture: no components");
  const int D = dim();
  for (const auto& c : components) {
    if (!(c.weight >= 0.0)) throw std::invalid_argument("mixture: negative weight");
    if (c.mean.size() != D || c.var.size() != D) throw std::invalid_argument("mixture: ragged components");
    if (!(c.var.array() > 0.0).all() || !c.var.allFinite()) throw std::invalid_argument("mixture: bad variance");
  }
  if (std::abs(total_weight() - 1.0) > tol) throw std::invalid_argument("mixture: weights do not sum to one");
}

std::vector<WalkOutcome> walk_outcomes(const Tree& tree, const Hyperparams& hyper) {
  hyper.validate();
  if (tree.empty()) throw std::invalid_argument("walk_outcomes: empty tree");
  std::vector<WalkOutcome> out;
  // Probability that the walk enters the edge above each node.
  std::vector<double> reach(static_cast<std::size_t>(tree.capacity()), 0.0);
  const NodeId top = tree.at(tree.root()).children.front();
  reach[static_cast<std::size_t>(top.value)] = 1.0;
  for (NodeId v : tree.preorder(top)) {
    const Node& node = tree.at(v);
    const double r = reach[static_cast<std::size_t>(v.value)];
    const double t_p = tree.at(node.parent).time;
    const double ls = log_survival(t_p, node.time, node.count, hyper.c, hyper.alpha, hyper.beta);
    out.push_back({Attachment::on_edge(v, 0.0), r * -std::expm1(ls), t_p});
    if (node.is_leaf()) continue;
    const double at_node = r * std::exp(ls);
    const std::vector<int> counts = child_counts(tree, v);
    const std::vector<double> p = branch_probs(counts, hyper.alpha, hyper.beta);
    for (std::size_t k = 0; k < node.children.size(); ++k) {
      reach[static_cast<std::size_t>(node.children[k].value)] = at_node * p[k];
    }
    const double open = at_node * p.back();
    if (open > 0.0) out.push_back({Attachment::at_node(v, node.time), open, node.time});
  }
  return out;
}

MixtureDensity predictive_mixture(const BeliefPropagation& bp, const Hyperparams& hyper, int n_time_samples,
                                  Rng& rng) {
  if (n_time_samples < 1) throw std::invalid_argument("predictive_mixture: n_time_samples must be >= 1");
  const Tree& tree = bp.tree();
  const auto problems = validate(tree);
  if (!problems.empty()) throw std::invalid_argument("predictive_mixture: invalid tree: " + problems.front());
  const int D = bp.dim();
  const double sigma2 = bp.sigma2();
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  MixtureDensity mix;
  auto add = [&](double weight, double t, auto&& marginal) {
    MixtureDensity::Component comp{weight, Eigen::VectorXd(D), Eigen::VectorXd(D)};
    for (int d = 0; d < D; ++d) {
      const GaussMsg m = marginal(d);
      comp.mean[d] = m.mean;
      comp.var[d] = m.var + sigma2 * (1.0 - t);
    }
    mix.components.push_back(std::move(comp));
  };

  for (const WalkOutcome& o : walk_outcomes(tree, hyper)) {
    if (!(o.mass > 0.0)) continue;
    const Node& node = tree.at(o.where.node);
    if (o.where.kind == Attachment::Kind::Node) {
      add(o.mass, node.time, [&](int d) { return bp.marginal(o.where.node, d); });
      continue;
    }
    const double t_p = o.t_start;
    const double ls = log_survival(t_p, node.time, node.count, hyper.c, hyper.alpha, hyper.beta);
    const double p_div = -std::expm1(ls);
    const double lo = std::nextafter(t_p, 1.0);
    const double hi = std::min(std::nextafter(node.time, 0.0), kMaxDivergenceTime);
    for (int s = 0; s < n_time_samples; ++s) {
      // Inverse-CDF draw of the unit exponential truncated to the edge.
      const double e = -std::log1p(-unif(rng) * p_div);
      double t = divergence_time_from_exponential(t_p, node.count, hyper.c, hyper.alpha, hyper.beta, e);
      t = std::clamp(t, lo, hi);
      add(o.mass / n_time_samples, t, [&](int d) { return bp.marginal_on_edge(o.where.node, t, d); });
    }
  }
  return mix;
}

MixtureDensity predictive_mixture(const Tree& tree, const Hyperparams& hyper, const LeafPotentials& leaves,
                                  int n_time_samples, Rng& rng) {
  const BeliefPropagation bp(tree, hyper.sigma2, leaves);
  return predictive_mixture(bp, hyper, n_time_samples, rng);
}

double log_predictive_density(std::span<const MixtureDensity> ensemble, const Eigen::VectorXd& x,
                              std::span<const double> log_weights) {
  if (ensemble.empty()) throw std::invalid_argument("predictive density: empty ensemble");
  if (!log_weights.empty() && log_weights.size() != ensemble.size())
    throw std::invalid_argument("predictive density: one weight per member required");
  const double log_norm =
      log_weights.empty() ? std::log(static_cast<double>(ensemble.size())) : log_sum_exp(log_weights);
  std::vector<double> terms(ensemble.size());
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    if (ensemble[i].dim() != x.size()) throw std::invalid_argument("predictive density: dimension mismatch");
    terms[i] = ensemble[i].log_density(x) + (log_weights.empty() ? 0.0 : log_weights[i]);
  }
  return log_sum_exp(terms) - log_norm;
}

}  // namespace pydt

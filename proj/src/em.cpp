#include "pydt/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include <boost/math/special_functions/digamma.hpp>

#include "pydt/density.hpp"
#include "pydt/divergence.hpp"
#include "pydt/errors.hpp"
#include "pydt/generative.hpp"

namespace pydt {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double expected_log(const GammaParams& g) { return boost::math::digamma(g.shape) - std::log(g.rate); }

double logistic(double s) { return 1.0 / (1.0 + std::exp(-s)); }

double logit(double t) { return std::log(t) - std::log1p(-t); }

LeafPotentials gaussian_potentials(const Dataset& data) { return LeafPotentials::observed(data.values); }

// Probit leaves before any EP: unit-variance pseudo observations at +-1.
LeafPotentials probit_pseudo_potentials(const Eigen::MatrixXd& y) {
  LeafPotentials p = LeafPotentials::flat(static_cast<int>(y.rows()), static_cast<int>(y.cols()));
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index d = 0; d < y.cols(); ++d)
      if (!std::isnan(y(i, d))) p.set(static_cast<int>(i), static_cast<int>(d), GaussMsg::gaussian(y(i, d) == 1.0 ? 1.0 : -1.0, 1.0));
  return p;
}

double average_column_variance(const Eigen::MatrixXd& x) {
  double total = 0.0;
  int cols = 0;
  for (Eigen::Index d = 0; d < x.cols(); ++d) {
    double s = 0.0, s2 = 0.0;
    int n = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double v = x(i, d);
      if (std::isnan(v)) continue;
      s += v;
      s2 += v * v;
      ++n;
    }
    if (n < 2) continue;
    const double mean = s / n;
    total += (s2 - n * mean * mean) / (n - 1);
    ++cols;
  }
  const double v = cols ? total / cols : 1.0;
  return std::isfinite(v) && v > 1e-12 ? v : 1.0;
}

// Edge-location terms of the bound that depend on the times, for one edge:
// -D/2 log(2 pi dt) - <1/sigma2> b / dt.
double edge_term(double dt, double b, double lambda, int dim) {
  return -0.5 * dim * std::log(2.0 * std::numbers::pi * dt) - lambda * b / dt;
}

}  // namespace

QHyper QHyper::from_point(const Hyperparams& h) {
  h.validate();
  QHyper q;
  q.c = {10.0, 10.0 / h.c};
  q.precision = {10.0, 10.0 * h.sigma2};
  q.alpha = h.alpha;
  q.beta = h.beta;
  q.prior = h.prior;
  return q;
}

Hyperparams QHyper::point() const {
  Hyperparams h;
  h.c = c.mean();
  h.sigma2 = 1.0 / precision.mean();
  h.alpha = alpha;
  h.beta = beta;
  h.prior = prior;
  return h;
}

void EmConfig::validate() const {
  if (max_cycles < 0) throw std::invalid_argument("em: max cycles must be >= 0");
  if (!(tolerance >= 0.0)) throw std::invalid_argument("em: tolerance must be >= 0");
  if (hyper_rounds < 1) throw std::invalid_argument("em: hyperparameter rounds must be >= 1");
  if (!(alpha_max > 0.0)) throw std::invalid_argument("em: alpha_max must be > 0");
  if (!(beta_max > 0.0 && beta_max < 1.0)) throw std::invalid_argument("em: beta_max must be in (0,1)");
}

void SearchConfig::validate() const {
  if (k_best < 1) throw std::invalid_argument("search: K must be >= 1");
  if (max_iters < 0) throw std::invalid_argument("search: max iterations must be >= 0");
  if (stall < 1) throw std::invalid_argument("search: stall window must be >= 1");
  if (n_refine < 1) throw std::invalid_argument("search: candidates refined per move must be >= 1");
  em.validate();
}

std::vector<NodeId> time_variables(const Tree& tree) { return tree.internal_nodes(); }

double gamma_kl(const GammaParams& q, const GammaParams& p) {
  return (q.shape - p.shape) * boost::math::digamma(q.shape) - std::lgamma(q.shape) + std::lgamma(p.shape) +
         p.shape * (std::log(q.rate) - std::log(p.rate)) + q.shape * (p.rate - q.rate) / q.rate;
}

EStepStats e_step(const Tree& tree, const QHyper& q, const Dataset& data, const EpOptions& ep,
                  const LeafPotentials* warm_sites) {
  EStepStats stats;
  const double lambda = q.precision.mean();
  const double sigma2 = 1.0 / lambda;
  if (data.likelihood == Likelihood::Probit) {
    stats.leaves = run_ep(tree, sigma2, data.values, ep, warm_sites).sites;
  } else {
    stats.leaves = gaussian_potentials(data);
  }
  const BeliefPropagation bp(tree, sigma2, stats.leaves);
  stats.log_ml = bp.log_marginal_likelihood();
  if (!std::isfinite(stats.log_ml)) throw NumericalError("em: non-finite marginal likelihood");
  stats.b = Eigen::VectorXd::Zero(tree.capacity());
  const int dim = tree.dim();
  double edge_sum = 0.0;
  for (NodeId v : tree.preorder()) {
    const Node& node = tree.at(v);
    if (node.is_root()) continue;
    double b = 0.0;
    for (int d = 0; d < dim; ++d) b += 0.5 * bp.edge_expected_sq(v, d);
    stats.b(v.value) = b;
    ++stats.edges;
    edge_sum += edge_term(node.time - tree.at(node.parent).time, b, lambda, dim);
  }
  // At these times and this precision the location part of the bound is
  // exactly the log marginal likelihood.
  stats.const_h = stats.log_ml - edge_sum - 0.5 * dim * stats.edges * std::log(lambda);
  return stats;
}

namespace {

// The bound as a function of the internal times only; everything that does
// not move during the M-step is folded into `constant`.
struct TimeProblem {
  struct Edge {
    int child = -1;   // variable index, or -1 for a leaf at t = 1
    int parent = -1;  // variable index, or -1 for the root at t = 0
    double b = 0.0;
  };
  std::vector<NodeId> vars;
  std::vector<double> weight;  // <c> J_i per variable
  std::vector<Edge> edges;
  double lambda = 0.0;
  int dim = 0;
  double constant = kNegInf;

  TimeProblem(const Tree& tree, const EStepStats& stats, const QHyper& q) : vars(time_variables(tree)) {
    dim = tree.dim();
    lambda = q.precision.mean();
    std::unordered_map<std::int32_t, int> index;
    for (std::size_t k = 0; k < vars.size(); ++k) index[vars[k].value] = static_cast<int>(k);
    const double structure = structure_factor(tree, q.alpha, q.beta);
    if (!std::isfinite(structure)) return;
    HarmonicTable harmonic(q.alpha, q.beta);
    const double c_mean = q.c.mean();
    for (NodeId v : vars) weight.push_back(c_mean * harmonic.j(child_counts(tree, v)));
    for (NodeId v : tree.preorder()) {
      const Node& node = tree.at(v);
      if (node.is_root()) continue;
      Edge e;
      if (auto it = index.find(v.value); it != index.end()) e.child = it->second;
      if (auto it = index.find(node.parent.value); it != index.end()) e.parent = it->second;
      e.b = stats.b(v.value);
      edges.push_back(e);
    }
    const GammaParams prior_c{q.prior.a_c, q.prior.b_c};
    const GammaParams prior_lambda{q.prior.a_sigma2, q.prior.b_sigma2};
    constant = structure + static_cast<double>(vars.size()) * expected_log(q.c) +
               0.5 * dim * static_cast<double>(edges.size()) * expected_log(q.precision) + stats.const_h -
               gamma_kl(q.c, prior_c) - gamma_kl(q.precision, prior_lambda);
  }

  // Value at times t; gradient with respect to s = logit(t) if requested.
  double operator()(const std::vector<double>& t, Eigen::VectorXd* grad) const {
    if (!std::isfinite(constant)) return kNegInf;
    std::vector<double> gt(vars.size(), 0.0);
    double value = constant;
    for (std::size_t k = 0; k < vars.size(); ++k) {
      const double tk = t[k];
      if (!(tk > 0.0 && tk < 1.0)) return kNegInf;
      // Time density in s = logit(t): the Jacobian t (1 - t) turns the
      // exponent cJ - 1 into cJ and adds log t, keeping the bound finite
      // as times approach 1.
      value += weight[k] * std::log1p(-tk) + std::log(tk);
      gt[k] += 1.0 / tk - weight[k] / (1.0 - tk);
    }
    for (const Edge& e : edges) {
      const double tc = e.child < 0 ? 1.0 : t[static_cast<std::size_t>(e.child)];
      const double tp = e.parent < 0 ? 0.0 : t[static_cast<std::size_t>(e.parent)];
      const double dt = tc - tp;
      if (!(dt > 0.0)) return kNegInf;
      value += edge_term(dt, e.b, lambda, dim);
      const double d_dt = -0.5 * dim / dt + lambda * e.b / (dt * dt);
      if (e.child >= 0) gt[static_cast<std::size_t>(e.child)] += d_dt;
      if (e.parent >= 0) gt[static_cast<std::size_t>(e.parent)] -= d_dt;
    }
    if (grad) {
      grad->resize(static_cast<Eigen::Index>(vars.size()));
      for (std::size_t k = 0; k < vars.size(); ++k) (*grad)(static_cast<Eigen::Index>(k)) = gt[k] * t[k] * (1.0 - t[k]);
    }
    return value;
  }
};

}  // namespace

double lower_bound(const Tree& tree, const EStepStats& stats, const QHyper& q, Eigen::VectorXd* grad) {
  const TimeProblem problem(tree, stats, q);
  std::vector<double> t;
  for (NodeId v : problem.vars) t.push_back(tree.at(v).time);
  return problem(t, grad);
}

bool m_step_times(Tree& tree, const EStepStats& stats, const QHyper& q, const LbfgsOptions& options) {
  const TimeProblem problem(tree, stats, q);
  const std::size_t n = problem.vars.size();
  if (n == 0) return true;
  std::vector<double> t0(n);
  Eigen::VectorXd s0(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    t0[k] = tree.at(problem.vars[k]).time;
    s0(static_cast<Eigen::Index>(k)) = logit(t0[k]);
  }
  // Unmoved coordinates keep their exact time: the logit round trip can
  // collapse edges only a few ulps long.
  auto times_at = [&](const Eigen::VectorXd& s) {
    std::vector<double> t(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double sk = s(static_cast<Eigen::Index>(k));
      t[k] = sk == s0(static_cast<Eigen::Index>(k)) ? t0[k] : logistic(sk);
    }
    return t;
  };
  const Objective f = [&](const Eigen::VectorXd& s, Eigen::VectorXd& g) { return problem(times_at(s), &g); };
  const LbfgsResult r = maximize_lbfgs(f, s0, options);
  const std::vector<double> t = times_at(r.x);
  for (std::size_t k = 0; k < n; ++k) tree.at(problem.vars[k]).time = t[k];
  return !(r.line_search_failed && r.iterations <= 1);
}

namespace {

// The (alpha, beta) objective with internal nodes grouped by their sorted
// child counts, since many nodes share small count patterns.
struct AlphaBetaProblem {
  struct Group {
    std::vector<int> counts;
    int multiplicity = 0;
    double log_survival = 0.0;  // sum of log(1 - t) over the group
  };
  std::vector<Group> groups;
  double shape = 0.0;
  double rate0 = 0.0;

  AlphaBetaProblem(const Tree& tree, const HyperPrior& prior) : shape(prior.a_c), rate0(prior.b_c) {
    std::map<std::vector<int>, std::size_t> index;
    for (NodeId id : tree.internal_nodes()) {
      std::vector<int> counts = child_counts(tree, id);
      std::sort(counts.begin(), counts.end());
      auto [it, inserted] = index.try_emplace(counts, groups.size());
      if (inserted) groups.push_back({counts, 0, 0.0});
      Group& g = groups[it->second];
      ++g.multiplicity;
      g.log_survival += std::log1p(-tree.at(id).time);
      shape += 1.0;
    }
  }

  double operator()(double alpha, double beta) const {
    HarmonicTable harmonic(alpha, beta);
    double s = 0.0, rate = rate0;
    for (const Group& g : groups) {
      s += g.multiplicity * structure_factor_node(g.counts, alpha, beta);
      rate -= harmonic.j(g.counts) * g.log_survival;
    }
    if (!std::isfinite(s)) return kNegInf;
    // q(c) maximized out in closed form: the c-evidence of the time terms.
    return s - shape * std::log(rate);
  }
};

}  // namespace

double alpha_beta_objective(const Tree& tree, const HyperPrior& prior, double alpha, double beta) {
  return AlphaBetaProblem(tree, prior)(alpha, beta);
}

void update_hyper(const Tree& tree, const EStepStats& stats, QHyper& q, const EmConfig& config) {
  const int dim = tree.dim();
  double rate = q.prior.b_sigma2;
  for (NodeId v : tree.preorder()) {
    const Node& node = tree.at(v);
    if (node.is_root()) continue;
    rate += stats.b(v.value) / (node.time - tree.at(node.parent).time);
  }
  q.precision = {q.prior.a_sigma2 + 0.5 * dim * stats.edges, rate};

  if (!config.fix_alpha_beta) {
    const AlphaBetaProblem objective(tree, q.prior);
    double best = objective(q.alpha, q.beta);
    for (int round = 0; round < config.hyper_rounds; ++round) {
      const double alpha_old = q.alpha, beta_old = q.beta;
      const double a = golden_section_max([&](double x) { return objective(x, q.beta); }, 0.0, config.alpha_max);
      if (const double v = objective(a, q.beta); v > best) {
        best = v;
        q.alpha = a;
      }
      const double b = golden_section_max([&](double x) { return objective(q.alpha, x); }, 0.0, config.beta_max);
      if (const double v = objective(q.alpha, b); v > best) {
        best = v;
        q.beta = b;
      }
      if (std::abs(q.alpha - alpha_old) < 1e-6 && std::abs(q.beta - beta_old) < 1e-6) break;
    }
  }
  q.c = c_conditional(tree, q.point());
}

EmResult run_em(Tree tree, const Dataset& data, QHyper q, const EmConfig& config, const LeafPotentials* warm_sites) {
  config.validate();
  EmResult result;
  EStepStats stats = e_step(tree, q, data, config.ep, warm_sites);
  double bound = lower_bound(tree, stats, q);
  for (int cycle = 0; cycle < config.max_cycles; ++cycle) {
    if (!m_step_times(tree, stats, q, config.lbfgs)) result.flagged = true;
    update_hyper(tree, stats, q, config);
    stats = e_step(tree, q, data, config.ep, data.likelihood == Likelihood::Probit ? &stats.leaves : nullptr);
    const double next = lower_bound(tree, stats, q);
    result.history.push_back(next);
    result.cycles = cycle + 1;
    const double gain = next - bound;
    bound = next;
    if (gain < config.tolerance * std::max(1.0, std::abs(bound))) break;
  }
  result.tree = std::move(tree);
  result.q = q;
  result.bound = bound;
  if (data.likelihood == Likelihood::Probit) result.sites = std::move(stats.leaves);
  return result;
}

Tree sequential_init(const Dataset& data, const Hyperparams& hyper, std::span<const int> order) {
  hyper.validate();
  const int n = data.rows();
  if (n < 1) throw DataError("search: no data");
  if (static_cast<int>(order.size()) != n) throw std::invalid_argument("sequential_init: order must cover every row");
  const LeafPotentials pot =
      data.likelihood == Likelihood::Probit ? probit_pseudo_potentials(data.values) : gaussian_potentials(data);
  const int dim = data.dim();
  Tree tree(dim);
  tree.add_leaf(order[0], Attachment::at_node(tree.root(), 0.0));
  std::vector<GaussMsg> up(static_cast<std::size_t>(dim));
  for (std::size_t k = 1; k < order.size(); ++k) {
    const int i = order[k];
    for (int d = 0; d < dim; ++d) up[static_cast<std::size_t>(d)] = pot.at(i, d);
    const BeliefPropagation bp(tree, hyper.sigma2, pot);
    double best = kNegInf;
    Attachment best_where;
    for (NodeId v : tree.preorder()) {
      const Node& node = tree.at(v);
      if (node.is_root()) continue;
      std::vector<Attachment> cands;
      const double t_p = tree.at(node.parent).time;
      if (const double mid = 0.5 * (t_p + node.time); mid > t_p && mid < node.time) cands.push_back(Attachment::on_edge(v, mid));
      if (node.is_internal()) cands.push_back(Attachment::at_node(v, node.time));
      for (const Attachment& where : cands) {
        const double score = bp.attach_score(where, 1.0, up) + attachment_log_prob(tree, hyper, where);
        if (score > best) {
          best = score;
          best_where = where;
        }
      }
    }
    if (!std::isfinite(best)) throw NumericalError("search: no feasible attachment during initialization");
    tree.add_leaf(i, best_where);
  }
  return tree;
}

namespace {

LeafPotentials entry_potentials(const SearchEntry& e, const Dataset& data) {
  if (e.sites) return *e.sites;
  return gaussian_potentials(data);
}

// Returns true if the list changed.
bool insert_kbest(std::vector<SearchEntry>& kbest, SearchEntry entry, int k) {
  const std::uint64_t h = structure_hash(entry.tree);
  for (auto& e : kbest) {
    if (structure_hash(e.tree) != h) continue;
    if (!(entry.bound > e.bound)) return false;
    // Re-fitting a known structure only counts as progress if it is material.
    const bool material = entry.bound - e.bound > 1e-6 * std::max(1.0, std::abs(e.bound));
    e = std::move(entry);
    std::stable_sort(kbest.begin(), kbest.end(), [](const SearchEntry& a, const SearchEntry& b) { return a.bound > b.bound; });
    return material;
  }
  if (static_cast<int>(kbest.size()) >= k && !(entry.bound > kbest.back().bound)) return false;
  auto pos = std::find_if(kbest.begin(), kbest.end(), [&](const SearchEntry& e) { return entry.bound > e.bound; });
  kbest.insert(pos, std::move(entry));
  if (static_cast<int>(kbest.size()) > k) kbest.pop_back();
  return true;
}

SearchEntry to_entry(EmResult&& r) {
  SearchEntry e;
  e.tree = std::move(r.tree);
  e.bound = r.bound;
  e.q = r.q;
  e.flagged = r.flagged;
  e.sites = std::move(r.sites);
  return e;
}

}  // namespace

SearchResult greedy_search(const Dataset& data, const SearchConfig& config, Rng& rng,
                           const std::function<void(const SearchLogRecord&)>& on_move) {
  config.validate();
  if (data.rows() < 1) throw DataError("search: no data");
  if (data.likelihood == Likelihood::Probit) check_binary(data.values);
  Hyperparams hyper = config.init;
  if (config.ddt) hyper.alpha = hyper.beta = 0.0;
  if (config.sigma2_from_data && data.likelihood == Likelihood::Gaussian) hyper.sigma2 = average_column_variance(data.values);
  hyper.validate();
  EmConfig em = config.em;
  if (config.ddt) em.fix_alpha_beta = true;

  std::vector<int> order(static_cast<std::size_t>(data.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  SearchResult result;
  {
    Tree init = sequential_init(data, hyper, order);
    insert_kbest(result.kbest, to_entry(run_em(std::move(init), data, QHyper::from_point(hyper), em)), config.k_best);
  }

  int stall = 0;
  for (int move = 1; move <= config.max_iters; ++move) {
    const SearchEntry current = result.kbest.front();
    const std::vector<NodeId> movable = current.tree.movable_nodes();
    if (movable.empty()) break;
    const NodeId s = movable[std::uniform_int_distribution<std::size_t>(0, movable.size() - 1)(rng)];
    const Hyperparams h = current.q.point();
    const LeafPotentials pot = entry_potentials(current, data);
    const int dim = data.dim();

    std::vector<GaussMsg> up(static_cast<std::size_t>(dim));
    {
      const BeliefPropagation full(current.tree, h.sigma2, pot);
      for (int d = 0; d < dim; ++d) up[static_cast<std::size_t>(d)] = full.up(s, d);
    }
    const double t_s = current.tree.at(s).time;
    Tree detached = current.tree;
    detached.detach(s);

    std::vector<Attachment> cands;
    for (NodeId v : detached.preorder()) {
      const Node& node = detached.at(v);
      if (node.is_root()) continue;
      const double t_p = detached.at(node.parent).time;
      if (!(t_p < t_s)) continue;
      if (const double mid = 0.5 * (t_p + std::min(node.time, t_s)); mid > t_p && mid < t_s && mid < node.time)
        cands.push_back(Attachment::on_edge(v, mid));
      if (node.is_internal() && node.time < t_s) cands.push_back(Attachment::at_node(v, node.time));
    }
    std::vector<double> scores(cands.size());
    {
      const BeliefPropagation bp(detached, h.sigma2, pot);
      for (std::size_t k = 0; k < cands.size(); ++k) scores[k] = bp.attach_score(cands[k], t_s, up);
    }
    for (std::size_t k = 0; k < cands.size(); ++k) {
      if (!std::isfinite(scores[k])) continue;
      detached.attach(s, cands[k]);
      scores[k] += log_prior(detached, h);
      detached.detach(s);
    }

    std::vector<std::size_t> ranked;
    for (std::size_t k = 0; k < cands.size(); ++k)
      if (std::isfinite(scores[k])) ranked.push_back(k);
    std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    if (static_cast<int>(ranked.size()) > config.n_refine) ranked.resize(static_cast<std::size_t>(config.n_refine));

    SearchLogRecord rec;
    rec.move_id = move;
    rec.detached_node = s.value;
    rec.n_candidates = static_cast<int>(cands.size());
    rec.best_bound = kNegInf;
    bool changed = false;
    for (std::size_t k : ranked) {
      Tree cand = detached;
      cand.attach(s, cands[k]);
      EmResult r = run_em(std::move(cand), data, current.q, em, current.sites ? &*current.sites : nullptr);
      rec.best_bound = std::max(rec.best_bound, r.bound);
      changed |= insert_kbest(result.kbest, to_entry(std::move(r)), config.k_best);
    }
    result.log.push_back(rec);
    if (on_move) on_move(rec);
    stall = changed ? 0 : stall + 1;
    if (stall >= config.stall) break;
  }
  return result;
}

}  // namespace pydt

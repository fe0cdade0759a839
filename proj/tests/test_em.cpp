#include "doctest.h"
#include "test_support.hpp"

#include <cmath>
#include <numbers>
#include <set>

#include "pydt/density.hpp"
#include "pydt/em.hpp"

using namespace pydt;
using doctest::Approx;

namespace {

Dataset dataset_of(const Eigen::MatrixXd& x, Likelihood lik = Likelihood::Gaussian) {
  Dataset d;
  d.values = x;
  d.likelihood = lik;
  return d;
}

// Moderate hyperparameters keep all divergence times well inside (0, 1).
Tree moderate_tree(int n, int dim, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Hyperparams h = Hyperparams::make(1.0 + 2.0 * u(rng), 0.5 + u(rng), u(rng), 0.5 * u(rng));
  return sample_tree(n, dim, h, rng, true);
}

QHyper random_q(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  QHyper q;
  q.c = {2.0 + 10.0 * u(rng), 2.0 + 5.0 * u(rng)};
  q.precision = {2.0 + 10.0 * u(rng), 2.0 + 10.0 * u(rng)};
  q.alpha = u(rng);
  q.beta = 0.5 * u(rng);
  return q;
}

Eigen::VectorXd times_of(const Tree& t) {
  const auto vars = time_variables(t);
  Eigen::VectorXd s(static_cast<Eigen::Index>(vars.size()));
  for (std::size_t k = 0; k < vars.size(); ++k) s(static_cast<Eigen::Index>(k)) = t.at(vars[k]).time;
  return s;
}

}  // namespace

TEST_CASE("Gamma KL matches quadrature") {
  const GammaParams q{3.5, 2.0}, p{1.5, 0.7};
  auto log_pdf = [](double x, const GammaParams& g) {
    return g.shape * std::log(g.rate) - std::lgamma(g.shape) + (g.shape - 1) * std::log(x) - g.rate * x;
  };
  const double kl = testing::simpson(
      [&](double x) { return x <= 0 ? 0.0 : std::exp(log_pdf(x, q)) * (log_pdf(x, q) - log_pdf(x, p)); }, 0, 40, 200000);
  CHECK(gamma_kl(q, p) == Approx(kl).epsilon(1e-7));
  CHECK(gamma_kl(q, q) == Approx(0.0).scale(1.0));
}

TEST_CASE("e-step statistics: single leaf and the two-point dense oracle") {
  Tree t1(2);
  t1.add_leaf(0, Attachment::at_node(t1.root(), 0.0));
  Eigen::MatrixXd x1(1, 2);
  x1 << 1.5, -0.5;
  QHyper q = QHyper::from_point(Hyperparams::make(1, 0.7, 0, 0));
  EStepStats s1 = e_step(t1, q, dataset_of(x1));
  CHECK(s1.b(t1.leaf(0).value) == Approx(0.5 * (1.5 * 1.5 + 0.25)).epsilon(1e-14));
  CHECK(s1.edges == 1);

  const double ta = 0.35, s2 = 0.8;
  Tree t2(1);
  NodeId l0 = t2.add_leaf(0, Attachment::at_node(t2.root(), 0.0));
  NodeId l1 = t2.add_leaf(1, Attachment::on_edge(l0, ta));
  NodeId a = t2.at(l0).parent;
  Eigen::MatrixXd x2(2, 1);
  x2 << 0.4, 1.3;
  q = QHyper::from_point(Hyperparams::make(1, s2, 0, 0));
  EStepStats st = e_step(t2, q, dataset_of(x2));
  const double prec = 1 / (s2 * ta) + 2 / (s2 * (1 - ta));
  const double v = 1 / prec;
  const double m = v * (x2(0, 0) + x2(1, 0)) / (s2 * (1 - ta));
  CHECK(st.b(a.value) == Approx(0.5 * (m * m + v)).epsilon(1e-8));
  CHECK(st.b(l0.value) == Approx(0.5 * ((x2(0, 0) - m) * (x2(0, 0) - m) + v)).epsilon(1e-8));
  CHECK(st.b(l1.value) == Approx(0.5 * ((x2(1, 0) - m) * (x2(1, 0) - m) + v)).epsilon(1e-8));
}

TEST_CASE("bound at the e-step times decomposes into its named terms") {
  Rng rng(501);
  for (int rep = 0; rep < 20; ++rep) {
    Tree t = moderate_tree(2 + rep % 8, 1 + rep % 3, rng);
    const Dataset data = dataset_of(leaf_data(t));
    const QHyper q = random_q(rng);
    const EStepStats st = e_step(t, q, data);
    double expected = structure_factor(t, q.alpha, q.beta) + st.log_ml;
    const double elog_c = boost::math::digamma(q.c.shape) - std::log(q.c.rate);
    const double elog_l = boost::math::digamma(q.precision.shape) - std::log(q.precision.rate);
    for (NodeId id : t.internal_nodes())
      expected += elog_c + (q.c.mean() * j_factor(child_counts(t, id), q.alpha, q.beta) - 1) * std::log1p(-t.at(id).time) +
                  std::log(t.at(id).time * (1 - t.at(id).time));
    expected += 0.5 * t.dim() * st.edges * (elog_l - std::log(q.precision.mean()));
    expected -= gamma_kl(q.c, {q.prior.a_c, q.prior.b_c}) + gamma_kl(q.precision, {q.prior.a_sigma2, q.prior.b_sigma2});
    CHECK(lower_bound(t, st, q) == Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("analytic bound gradient matches central differences") {
  Rng rng(502);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    Tree t = moderate_tree(2 + rep % 11, 1 + rep % 3, rng);
    const Dataset data = dataset_of(leaf_data(t));
    const QHyper q = random_q(rng);
    const EStepStats st = e_step(t, q, data);
    Eigen::VectorXd g;
    lower_bound(t, st, q, &g);
    const auto vars = time_variables(t);
    for (std::size_t k = 0; k < vars.size(); ++k) {
      const double t0 = t.at(vars[k]).time;
      const double s0 = std::log(t0) - std::log1p(-t0);
      auto f = [&](double s) {
        Tree w = t;
        w.at(vars[k]).time = 1 / (1 + std::exp(-s));
        return lower_bound(w, st, q);
      };
      // Edges can be ~1e-3 long, so the step must be far smaller than that.
      const double h = 1e-5;
      const double fd = (-f(s0 + 2 * h) + 8 * f(s0 + h) - 8 * f(s0 - h) + f(s0 - 2 * h)) / (12 * h);
      const double gk = g(static_cast<Eigen::Index>(k));
      const double rel = std::abs(gk - fd) / std::max({std::abs(gk), std::abs(fd), 1.0});
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("one-node bound: barrier, unimodality and the 1D optimum") {
  Tree t(1);
  NodeId l0 = t.add_leaf(0, Attachment::at_node(t.root(), 0.0));
  t.add_leaf(1, Attachment::on_edge(l0, 0.5));
  const NodeId a = t.at(l0).parent;
  Eigen::MatrixXd x(2, 1);
  x << 0.8, 1.2;
  QHyper q = QHyper::from_point(Hyperparams::make(1, 1, 0, 0));
  const EStepStats st = e_step(t, q, dataset_of(x));
  auto f = [&](double ta) {
    Tree w = t;
    w.at(a).time = ta;
    return lower_bound(w, st, q);
  };
  CHECK(f(1e-12) < f(0.5) - 1e3);
  CHECK(f(1 - 1e-12) < f(0.5) - 1e3);
  CHECK(f(0.0) == -std::numeric_limits<double>::infinity());

  int peaks = 0;
  const int grid = 2000;
  for (int i = 1; i < grid - 1; ++i) {
    const double t0 = (i - 1.0) / grid, t1 = double(i) / grid, t2 = (i + 1.0) / grid;
    if (i == 1) continue;
    if (f(t1) > f(t0) && f(t1) > f(t2)) ++peaks;
  }
  CHECK(peaks == 1);

  const double golden = golden_section_max(f, 1e-9, 1 - 1e-9, 1e-12);
  Tree opt = t;
  LbfgsOptions tight;
  tight.gradient_tolerance = 1e-10;
  tight.value_tolerance = 0.0;
  CHECK(m_step_times(opt, st, q, tight));
  CHECK(opt.at(a).time == Approx(golden).epsilon(1e-6));
}

TEST_CASE("m-step never lowers the bound and keeps times ordered") {
  Rng rng(503);
  for (int rep = 0; rep < 100; ++rep) {
    Tree t = moderate_tree(2 + rep % 15, 1 + rep % 3, rng);
    const Dataset data = dataset_of(leaf_data(t));
    const QHyper q = random_q(rng);
    const EStepStats st = e_step(t, q, data);
    const double before = lower_bound(t, st, q);
    m_step_times(t, st, q);
    CHECK(lower_bound(t, st, q) >= before);
    CHECK(validate(t).empty());
    const Eigen::VectorXd times = times_of(t);
    CHECK((times.array() > 0.0).all());
    CHECK((times.array() < 1.0).all());
  }
}

TEST_CASE("hyperparameter updates") {
  SUBCASE("no internal nodes leave q(c) at the prior") {
    Tree t(1);
    t.add_leaf(0, Attachment::at_node(t.root(), 0.0));
    Eigen::MatrixXd x(1, 1);
    x << 0.3;
    QHyper q = QHyper::from_point(Hyperparams::make(2, 1, 0.5, 0.1));
    const EStepStats st = e_step(t, q, dataset_of(x));
    update_hyper(t, st, q, EmConfig{});
    CHECK(q.c.shape == q.prior.a_c);
    CHECK(q.c.rate == q.prior.b_c);
  }

  SUBCASE("alpha and beta sit at the grid argmax of their coordinate objectives") {
    Rng rng(504);
    Tree t = sample_tree(12, 1, Hyperparams::make(1.5, 1, 1.0, 0.3), rng, true);
    const Dataset data = dataset_of(leaf_data(t));
    QHyper q = QHyper::from_point(Hyperparams::make(1.5, 1, 0.5, 0.2));
    const EStepStats st = e_step(t, q, data);
    EmConfig cfg;
    update_hyper(t, st, q, cfg);
    auto grid_argmax = [&](const std::function<double(double)>& f, double lo, double hi) {
      double best = lo, best_v = f(lo);
      for (int i = 0; i <= 20000; ++i) {
        const double x = lo + (hi - lo) * i / 20000;
        if (f(x) > best_v) best_v = f(x), best = x;
      }
      const double step = (hi - lo) / 20000;
      const double a = std::max(lo, best - step), b = std::min(hi, best + step);
      for (int i = 0; i <= 2000; ++i) {
        const double x = a + (b - a) * i / 2000;
        if (f(x) > best_v) best_v = f(x), best = x;
      }
      return best;
    };
    const double a_grid = grid_argmax([&](double a) { return alpha_beta_objective(t, q.prior, a, q.beta); }, 0, cfg.alpha_max);
    const double b_grid = grid_argmax([&](double b) { return alpha_beta_objective(t, q.prior, q.alpha, b); }, 0, cfg.beta_max);
    CHECK(q.alpha == Approx(a_grid).epsilon(1e-4).scale(1.0));
    CHECK(q.beta == Approx(b_grid).epsilon(1e-4).scale(1.0));
  }

  SUBCASE("precision update agrees with the Gibbs conditional in expectation") {
    Rng rng(505);
    Tree t = moderate_tree(10, 2, rng);
    const Dataset data = dataset_of(leaf_data(t));
    QHyper q = QHyper::from_point(Hyperparams::make(1.5, 0.8, 0.5, 0.2));
    const EStepStats st = e_step(t, q, data);
    update_hyper(t, st, q, EmConfig{});
    const BeliefPropagation bp(t, 1.0 / QHyper::from_point(Hyperparams::make(1.5, 0.8, 0.5, 0.2)).precision.mean(),
                               LeafPotentials::observed(data.values));
    double rate = 0.0, shape = 0.0;
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) {
      const GammaParams g = precision_conditional(t, bp.sample_locations(rng), q.prior);
      rate += g.rate / draws;
      shape = g.shape;
    }
    CHECK(q.precision.shape == shape);
    CHECK(q.precision.rate == Approx(rate).epsilon(0.01));
  }
}

TEST_CASE("EM bound is monotone across cycles") {
  Rng rng(506);
  for (int rep = 0; rep < 20; ++rep) {
    Tree truth = moderate_tree(5 + rep, 1 + rep % 3, rng);
    const Dataset data = dataset_of(leaf_data(truth));
    std::vector<int> order(static_cast<std::size_t>(data.rows()));
    std::iota(order.begin(), order.end(), 0);
    const Hyperparams h0 = Hyperparams::make(1, 1, 0.5, 0.2);
    EmConfig cfg;
    cfg.max_cycles = 20;
    cfg.tolerance = 0.0;
    const EmResult r = run_em(sequential_init(data, h0, order), data, QHyper::from_point(h0), cfg);
    REQUIRE(!r.history.empty());
    for (std::size_t i = 1; i < r.history.size(); ++i)
      CHECK(r.history[i] >= r.history[i - 1] - 1e-9 * std::max(1.0, std::abs(r.history[i - 1])));
    CHECK(validate(r.tree).empty());
  }
}

TEST_CASE("probit EM runs on binary data") {
  Rng rng(507);
  Eigen::MatrixXd y(8, 3);
  for (int i = 0; i < 8; ++i)
    for (int d = 0; d < 3; ++d) y(i, d) = (i < 4) == (d != 1) ? 1.0 : 0.0;
  y(2, 1) = std::nan("");
  const Dataset data = dataset_of(y, Likelihood::Probit);
  std::vector<int> order{0, 1, 2, 3, 4, 5, 6, 7};
  const Hyperparams h0 = Hyperparams::make(1, 1, 0.5, 0.2);
  EmConfig cfg;
  cfg.max_cycles = 10;
  const EmResult r = run_em(sequential_init(data, h0, order), data, QHyper::from_point(h0), cfg);
  CHECK(std::isfinite(r.bound));
  REQUIRE(r.sites.has_value());
  CHECK(r.sites->rows() == 8);
}

TEST_CASE("greedy search on three points finds the enumerated optimum") {
  Eigen::MatrixXd x(3, 2);
  x << 0.0, 0.1, 0.2, -0.1, 2.5, 2.0;
  const Dataset data = dataset_of(x);
  const Hyperparams h0 = Hyperparams::make(1, 1, 0.5, 0.2);
  EmConfig cfg;
  double best = -std::numeric_limits<double>::infinity();
  std::uint64_t best_hash = 0;
  // Three binary shapes (each point as outgroup) and the flat tree.
  for (int shape = 0; shape < 4; ++shape) {
    Tree t(2);
    const int out = shape % 3;
    const int p = (out + 1) % 3, r = (out + 2) % 3;
    NodeId lp = t.add_leaf(p, Attachment::at_node(t.root(), 0.0));
    t.add_leaf(r, Attachment::on_edge(lp, 0.6));
    if (shape < 3) {
      t.add_leaf(out, Attachment::on_edge(t.at(lp).parent, 0.3));
    } else {
      t.add_leaf(out, Attachment::at_node(t.at(lp).parent, 0.6));
    }
    const EmResult er = run_em(t, data, QHyper::from_point(h0), cfg);
    if (er.bound > best) best = er.bound, best_hash = structure_hash(er.tree);
  }
  SearchConfig sc;
  sc.init = h0;
  sc.sigma2_from_data = false;
  sc.max_iters = 30;
  Rng rng(508);
  const SearchResult res = greedy_search(data, sc, rng);
  REQUIRE(!res.kbest.empty());
  CHECK(structure_hash(res.kbest.front().tree) == best_hash);
  // The search may refine the same structure past a single EM run.
  CHECK(res.kbest.front().bound >= best - 1e-4 * std::abs(best));
}

TEST_CASE("greedy search keeps a sorted, distinct, deterministic K-best list") {
  Rng data_rng(509);
  Tree truth = moderate_tree(15, 2, data_rng);
  const Dataset data = dataset_of(leaf_data(truth));
  SearchConfig sc;
  sc.max_iters = 15;
  sc.k_best = 5;
  auto run = [&] {
    Rng rng(77);
    return greedy_search(data, sc, rng);
  };
  const SearchResult a = run(), b = run();
  REQUIRE(a.kbest.size() == b.kbest.size());
  CHECK(a.kbest.size() <= 5);
  std::set<std::uint64_t> hashes;
  for (std::size_t i = 0; i < a.kbest.size(); ++i) {
    CHECK(a.kbest[i].bound == b.kbest[i].bound);
    CHECK(structure_hash(a.kbest[i].tree) == structure_hash(b.kbest[i].tree));
    hashes.insert(structure_hash(a.kbest[i].tree));
    if (i) CHECK(a.kbest[i - 1].bound >= a.kbest[i].bound);
    CHECK(validate(a.kbest[i].tree).empty());
  }
  CHECK(hashes.size() == a.kbest.size());
  CHECK(a.log.size() == b.log.size());
  for (const auto& rec : a.log) CHECK(rec.n_candidates > 0);
}

TEST_CASE("binary-constrained search yields binary trees") {
  Rng data_rng(510);
  Tree truth = moderate_tree(12, 2, data_rng);
  const Dataset data = dataset_of(leaf_data(truth));
  SearchConfig sc;
  sc.ddt = true;
  sc.max_iters = 10;
  Rng rng(5);
  const SearchResult r = greedy_search(data, sc, rng);
  for (const auto& e : r.kbest) {
    CHECK(e.q.alpha == 0.0);
    CHECK(e.q.beta == 0.0);
    for (NodeId id : e.tree.internal_nodes()) CHECK(e.tree.at(id).degree() == 2);
  }
  sc.k_best = 0;
  CHECK_THROWS_AS(greedy_search(data, sc, rng), std::invalid_argument);
}

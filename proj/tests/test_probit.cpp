#include "doctest.h"
#include "test_support.hpp"

#include <cmath>
#include <numbers>

#include "pydt/probit.hpp"

using namespace pydt;
using doctest::Approx;

namespace {

double phi_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Tilted moments by quadrature over +-12 cavity standard deviations.
TiltedMoments quadrature_moments(double mu, double v, int y) {
  const double s = 2.0 * y - 1.0, sd = std::sqrt(v);
  auto w = [&](double x) { return log_normal_pdf(x, mu, v) + std::log(phi_cdf(s * x)); };
  const double lo = mu - 12 * sd, hi = mu + 12 * sd;
  const double z = testing::simpson([&](double x) { return std::exp(w(x)); }, lo, hi, 200000);
  const double m1 = testing::simpson([&](double x) { return x * std::exp(w(x)); }, lo, hi, 200000) / z;
  const double m2 = testing::simpson([&](double x) { return (x - m1) * (x - m1) * std::exp(w(x)); }, lo, hi, 200000) / z;
  return {std::log(z), m1, m2};
}

}  // namespace

TEST_CASE("log normal cdf is accurate in both tails") {
  CHECK(log_normal_cdf(0.0) == Approx(std::log(0.5)).epsilon(1e-15));
  for (double z : {-40.0, -31.0, -29.0, -10.0, -6.5, -3.0, 2.0, 7.0, 10.0}) {
    // Mills-ratio continued fraction as an independent reference in the lower tail.
    double ref;
    if (z < -5.0) {
      const double x = -z;
      double cf = x;
      for (int k = 200; k >= 1; --k) cf = x + k / cf;
      ref = -0.5 * x * x - 0.5 * std::log(2 * std::numbers::pi) - std::log(cf);
    } else {
      ref = std::log(phi_cdf(z));
    }
    CHECK(log_normal_cdf(z) == Approx(ref).epsilon(1e-10));
  }
  CHECK(normal_cdf(1.0) == Approx(0.8413447460685429).epsilon(1e-14));
}

TEST_CASE("probit moments for a standard cavity") {
  const TiltedMoments t = probit_moments(0.0, 1.0, 1);
  CHECK(std::exp(t.log_z) == Approx(0.5).epsilon(1e-14));
  CHECK(t.mean == Approx(0.5641895835).epsilon(1e-9));
  CHECK(t.var == Approx(0.6816901138).epsilon(1e-9));
  CHECK_THROWS(probit_moments(0.0, 0.0, 1));
  CHECK_THROWS(probit_moments(0.0, 1.0, 2));
}

TEST_CASE("probit moments match quadrature") {
  Rng rng(301);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 30; ++rep) {
    const double mu = -4 + 8 * u(rng), v = 0.05 + 4 * u(rng);
    const int y = rep % 2;
    const TiltedMoments a = probit_moments(mu, v, y), b = quadrature_moments(mu, v, y);
    CHECK(a.log_z == Approx(b.log_z).epsilon(1e-6).scale(1.0));
    CHECK(a.mean == Approx(b.mean).epsilon(1e-6).scale(1.0));
    CHECK(a.var == Approx(b.var).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("probit moment symmetries and limits") {
  const TiltedMoments a = probit_moments(0.7, 1.3, 1), b = probit_moments(-0.7, 1.3, 0);
  CHECK(a.mean == Approx(-b.mean).epsilon(1e-14));
  CHECK(a.var == Approx(b.var).epsilon(1e-14));
  const TiltedMoments c = probit_moments(0.4, 1e-10, 0);
  CHECK(c.mean == Approx(0.4).epsilon(1e-8));
  CHECK(c.log_z == Approx(std::log(phi_cdf(-0.4))).epsilon(1e-8));
}

TEST_CASE("log Z derivatives reproduce the tilted moments") {
  const double h = 1e-4;
  for (double mu : {-2.0, -0.3, 0.8, 3.0})
    for (double v : {0.2, 1.0, 3.0}) {
      const TiltedMoments t = probit_moments(mu, v, 1);
      const double d1 = (probit_moments(mu + h, v, 1).log_z - probit_moments(mu - h, v, 1).log_z) / (2 * h);
      const double d2 =
          (probit_moments(mu + h, v, 1).log_z - 2 * t.log_z + probit_moments(mu - h, v, 1).log_z) / (h * h);
      CHECK(d1 == Approx((t.mean - mu) / v).epsilon(1e-6).scale(1.0));
      CHECK(d2 == Approx((t.var - v) / (v * v)).epsilon(1e-5).scale(1.0));
    }
}

TEST_CASE("EP on a single latent matches quadrature") {
  Tree t(1);
  t.add_leaf(0, Attachment::at_node(t.root(), 0.0));
  const double s2 = 2.0;
  for (int y : {0, 1}) {
    Eigen::MatrixXd obs(1, 1);
    obs(0, 0) = y;
    EpOptions opts;
    opts.tolerance = 1e-12;
    opts.max_sweeps = 200;
    const EpResult ep = run_ep(t, s2, obs, opts);
    CHECK(ep.converged);
    const BeliefPropagation bp(t, s2, ep.sites);
    const GaussMsg post = bp.marginal(t.leaf(0), 0);
    const TiltedMoments q = quadrature_moments(0.0, s2, y);
    CHECK(post.mean == Approx(q.mean).epsilon(1e-6).scale(1.0));
    CHECK(post.var == Approx(q.var).epsilon(1e-6).scale(1.0));
    CHECK(ep.log_evidence == Approx(q.log_z).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("EP evidence on a two-leaf tree is close to exact") {
  for (double ta : {0.2, 0.5, 0.8}) {
    Tree t(1);
    NodeId l0 = t.add_leaf(0, Attachment::at_node(t.root(), 0.0));
    t.add_leaf(1, Attachment::on_edge(l0, ta));
    const double s2 = 1.5;
    for (int y0 : {0, 1})
      for (int y1 : {0, 1}) {
        Eigen::MatrixXd obs(2, 1);
        obs << y0, y1;
        const EpResult ep = run_ep(t, s2, obs);
        // Exact: integrate the branch-point location; given it, the leaves
        // are independent with closed-form probit integrals.
        const double var_leaf = s2 * (1 - ta);
        auto g = [&](double xa) {
          const double p0 = phi_cdf((2 * y0 - 1) * xa / std::sqrt(1 + var_leaf));
          const double p1 = phi_cdf((2 * y1 - 1) * xa / std::sqrt(1 + var_leaf));
          return std::exp(log_normal_pdf(xa, 0, s2 * ta)) * p0 * p1;
        };
        const double sd = std::sqrt(s2 * ta);
        const double exact = testing::simpson(g, -12 * sd, 12 * sd, 100000);
        CHECK(std::exp(ep.log_evidence) == Approx(exact).epsilon(0.02));
      }
  }
}

TEST_CASE("EP: agreeing observations give positive latent means, order does not matter") {
  auto f = testing::four_point_tree(0.2, 0.4);
  Eigen::MatrixXd obs = Eigen::MatrixXd::Ones(4, 1);
  const EpResult ep = run_ep(f.tree, 1.0, obs);
  const BeliefPropagation bp(f.tree, 1.0, ep.sites);
  for (int i = 0; i < 4; ++i) CHECK(bp.marginal(f.tree.leaf(i), 0).mean > 0.0);

  Eigen::MatrixXd mixed(4, 2);
  mixed << 1, 0, 0, 1, 1, std::nan(""), 0, 0;
  Tree t2(2);
  {
    NodeId l0 = t2.add_leaf(0, Attachment::at_node(t2.root(), 0.0));
    t2.add_leaf(1, Attachment::on_edge(l0, 0.3));
    t2.add_leaf(2, Attachment::on_edge(l0, 0.6));
    t2.add_leaf(3, Attachment::on_edge(t2.leaf(1), 0.5));
  }
  EpOptions opts;
  opts.tolerance = 1e-10;
  opts.max_sweeps = 500;
  const int o1[] = {0, 1, 2, 3}, o2[] = {3, 1, 0, 2};
  const EpResult a = run_ep(t2, 1.3, mixed, opts, nullptr, o1);
  const EpResult b = run_ep(t2, 1.3, mixed, opts, nullptr, o2);
  for (int i = 0; i < 4; ++i)
    for (int d = 0; d < 2; ++d) {
      CHECK(a.sites.mean(i, d) == Approx(b.sites.mean(i, d)).epsilon(1e-5).scale(1.0));
      CHECK(a.sites.at(i, d).precision() == Approx(b.sites.at(i, d).precision()).epsilon(1e-5).scale(1.0));
    }
  CHECK(a.sites.at(2, 1).is_flat());
  CHECK(a.log_evidence == Approx(b.log_evidence).epsilon(1e-5));
  CHECK_THROWS(run_ep(t2, 1.0, Eigen::MatrixXd::Constant(4, 2, 0.5)));
}

TEST_CASE("auxiliary slice update samples the tilted conditional") {
  Rng rng(302);
  const double m = -0.4, v = 0.9;
  std::vector<double> draws;
  double x = 0.0;
  for (int i = 0; i < 50000; ++i) {
    x = aux_slice_update(x, m, v, 1, rng);
    if (i % 5 == 4) draws.push_back(x);
  }
  const double lo = m - 12 * std::sqrt(v);
  auto density = [&](double s) { return std::exp(log_normal_pdf(s, m, v)) * phi_cdf(s); };
  const double z = testing::simpson(density, lo, m + 12 * std::sqrt(v), 100000);
  auto cdf = [&](double s) {
    if (s <= lo) return 0.0;
    return testing::simpson(density, lo, s, 2000) / z;
  };
  CHECK(testing::ks_pvalue(draws, cdf) > 0.01);

  // Flipping y mirrors the distribution about zero when the prior is mirrored too.
  double s1 = 0.0, s0 = 0.0;
  x = 0.0;
  double x0 = 0.0;
  for (int i = 0; i < 20000; ++i) {
    x = aux_slice_update(x, 0.5, 1.0, 1, rng);
    x0 = aux_slice_update(x0, -0.5, 1.0, 0, rng);
    s1 += x;
    s0 += x0;
  }
  CHECK(s1 / 20000 == Approx(-s0 / 20000).epsilon(0.05));

  // A strong prior far on the observed side dominates.
  double mean = 0.0;
  x = 3.0;
  for (int i = 0; i < 5000; ++i) {
    x = aux_slice_update(x, 3.0, 0.01, 1, rng);
    mean += x / 5000;
  }
  CHECK(mean == Approx(3.0).epsilon(0.01));
}

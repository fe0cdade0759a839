#include "pydt/probit.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "pydt/optimize.hpp"

namespace pydt {

namespace {

double log_normal_density(double z) { return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi); }

}  // namespace

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double log_normal_cdf(double z) {
  if (z > 6.0) return std::log1p(-0.5 * std::erfc(z / std::numbers::sqrt2));
  if (z > -30.0) return std::log(0.5 * std::erfc(-z / std::numbers::sqrt2));
  // Asymptotic tail: Phi(z) ~ phi(z)/(-z) * (1 - 1/z^2 + 3/z^4 - 15/z^6 + 105/z^8).
  const double r = 1.0 / (z * z);
  const double series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
  return log_normal_density(z) - std::log(-z) + std::log(series);
}

TiltedMoments probit_moments(double cavity_mean, double cavity_var, int y) {
  if (!(cavity_var > 0.0)) throw std::invalid_argument("probit_moments: cavity variance must be > 0");
  if (y != 0 && y != 1) throw std::invalid_argument("probit_moments: y must be 0 or 1");
  const double s = 2.0 * y - 1.0;
  const double scale = std::sqrt(1.0 + cavity_var);
  const double z = s * cavity_mean / scale;
  TiltedMoments out;
  out.log_z = log_normal_cdf(z);
  const double ratio = std::exp(log_normal_density(z) - out.log_z);
  out.mean = cavity_mean + s * cavity_var * ratio / scale;
  out.var = cavity_var - cavity_var * cavity_var * ratio * (z + ratio) / (1.0 + cavity_var);
  return out;
}

void check_binary(const Eigen::MatrixXd& y) {
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index d = 0; d < y.cols(); ++d) {
      const double v = y(i, d);
      if (!(std::isnan(v) || v == 0.0 || v == 1.0))
        throw std::invalid_argument("binary data: entry (" + std::to_string(i) + ", " + std::to_string(d) +
                                    ") is not 0 or 1");
    }
}

EpResult run_ep(const Tree& tree, double sigma2, const Eigen::MatrixXd& y, const EpOptions& options,
                const LeafPotentials* warm_start, std::span<const int> order) {
  check_binary(y);
  const int n = tree.num_leaves();
  const int dim = tree.dim();
  if (y.rows() < n || y.cols() != dim) throw std::invalid_argument("run_ep: observation shape mismatch");

  EpResult result;
  result.sites = warm_start ? *warm_start : LeafPotentials::flat(n, dim);
  // Natural parameters of each site; zero precision means "no site yet".
  Eigen::MatrixXd tau = Eigen::MatrixXd::Zero(n, dim), nu = Eigen::MatrixXd::Zero(n, dim);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < dim; ++d) {
      const GaussMsg m = result.sites.at(i, d);
      if (!m.is_flat() && !std::isnan(y(i, d))) {
        tau(i, d) = 1.0 / m.var;
        nu(i, d) = m.mean / m.var;
      } else {
        result.sites.set(i, d, GaussMsg::flat());
      }
    }

  std::vector<int> visit(static_cast<std::size_t>(n));
  std::iota(visit.begin(), visit.end(), 0);
  if (!order.empty()) {
    if (static_cast<int>(order.size()) != n) throw std::invalid_argument("run_ep: order must list every leaf");
    visit.assign(order.begin(), order.end());
  }

  const double keep = 1.0 - options.damping;
  for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
    double change = 0.0;
    for (int i : visit) {
      const BeliefPropagation bp(tree, sigma2, result.sites);
      const NodeId leaf = tree.leaf(i);
      for (int d = 0; d < dim; ++d) {
        if (std::isnan(y(i, d))) continue;
        const GaussMsg cavity = bp.outside(leaf, d);
        const TiltedMoments t = probit_moments(cavity.mean, cavity.var, static_cast<int>(y(i, d)));
        const double tau_target = 1.0 / t.var - 1.0 / cavity.var;
        const double nu_target = t.mean / t.var - cavity.mean / cavity.var;
        const double tau_new = keep * tau(i, d) + options.damping * tau_target;
        const double nu_new = keep * nu(i, d) + options.damping * nu_target;
        if (!(tau_new > 0.0)) {
          ++result.skipped_updates;
          continue;
        }
        change = std::max({change, std::abs(tau_new - tau(i, d)), std::abs(nu_new - nu(i, d))});
        tau(i, d) = tau_new;
        nu(i, d) = nu_new;
        result.sites.set(i, d, GaussMsg::gaussian(nu_new / tau_new, 1.0 / tau_new));
      }
    }
    result.sweeps = sweep + 1;
    if (change < options.tolerance) {
      result.converged = true;
      break;
    }
  }

  // Site normalizers so that each site reproduces its tilted mass under the
  // final cavity; the evidence is then the Gaussian evidence of the sites.
  const BeliefPropagation bp(tree, sigma2, result.sites);
  for (int i = 0; i < n; ++i) {
    const NodeId leaf = tree.leaf(i);
    for (int d = 0; d < dim; ++d) {
      if (std::isnan(y(i, d))) continue;
      GaussMsg site = result.sites.at(i, d);
      if (site.is_flat()) continue;
      const GaussMsg cavity = bp.outside(leaf, d);
      const TiltedMoments t = probit_moments(cavity.mean, cavity.var, static_cast<int>(y(i, d)));
      site.log_z = t.log_z - log_normal_pdf(cavity.mean, site.mean, cavity.var + site.var);
      result.sites.set(i, d, site);
    }
  }
  result.log_evidence = BeliefPropagation(tree, sigma2, result.sites).log_marginal_likelihood();
  return result;
}

double aux_slice_update(double x, double prior_mean, double prior_var, int y, Rng& rng) {
  if (!(prior_var > 0.0)) throw std::invalid_argument("aux_slice_update: prior variance must be > 0");
  if (y < 0) return prior_mean + std::sqrt(prior_var) * std::normal_distribution<double>(0.0, 1.0)(rng);
  const double s = 2.0 * y - 1.0;
  auto log_f = [&](double v) { return log_normal_pdf(v, prior_mean, prior_var) + log_normal_cdf(s * v); };
  return slice_sample(log_f, x, std::sqrt(prior_var), rng);
}

}  // namespace pydt

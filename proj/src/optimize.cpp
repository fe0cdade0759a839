#include "pydt/optimize.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace pydt {

LbfgsResult maximize_lbfgs(const Objective& f, const Eigen::VectorXd& x0, const LbfgsOptions& options) {
  LbfgsResult result;
  result.x = x0;
  const Eigen::Index n = x0.size();
  Eigen::VectorXd grad(n);
  result.value = f(result.x, grad);
  if (!std::isfinite(result.value)) throw std::invalid_argument("lbfgs: infeasible starting point");
  if (n == 0) {
    result.converged = true;
    return result;
  }

  // Work with the negated objective so the usual descent formulas apply.
  Eigen::VectorXd g = -grad;
  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    result.iterations = iter + 1;
    if (g.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
      result.converged = true;
      return result;
    }

    // Two-loop recursion.
    Eigen::VectorXd q = g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t i = s_hist.size(); i-- > 0;) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    double gamma = 1.0;
    if (!s_hist.empty()) gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    Eigen::VectorXd dir = gamma * q;
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(dir);
      dir += s_hist[i] * (alpha[i] - beta);
    }
    dir = -dir;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      // Not a descent direction: reset memory and use steepest descent.
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -g;
      slope = -g.squaredNorm();
    }
    if (s_hist.empty()) {
      const double scale = 1.0 / std::max(1.0, dir.lpNorm<Eigen::Infinity>());
      dir *= scale;
      slope *= scale;
    }

    // Backtracking Armijo search on the negated objective.
    double step = 1.0;
    Eigen::VectorXd x_new, grad_new(n);
    double value_new = -std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int k = 0; k < 60; ++k) {
      x_new = result.x + step * dir;
      value_new = f(x_new, grad_new);
      if (std::isfinite(value_new) && -value_new <= -result.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      result.line_search_failed = true;
      return result;
    }

    const Eigen::VectorXd g_new = -grad_new;
    const Eigen::VectorXd s = x_new - result.x;
    const Eigen::VectorXd y = g_new - g;
    const double improvement = value_new - result.value;
    result.x = x_new;
    result.value = value_new;
    g = g_new;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > options.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    if (improvement < options.value_tolerance * std::max(1.0, std::abs(result.value))) {
      result.converged = true;
      return result;
    }
  }
  return result;
}

double golden_section_max(const std::function<double(double)>& f, double lo, double hi, double tol) {
  if (!(hi > lo)) throw std::invalid_argument("golden_section_max: empty interval");
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return fc >= fd ? c : d;
}

double slice_sample(const std::function<double(double)>& log_f, double x, double width, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double fx = log_f(x);
  if (!std::isfinite(fx)) throw std::invalid_argument("slice_sample: current point has zero density");
  const double level = fx + std::log(u(rng));
  double left = x - width * u(rng);
  double right = left + width;
  while (log_f(left) > level) left -= width;
  while (log_f(right) > level) right += width;
  for (;;) {
    const double proposal = left + (right - left) * u(rng);
    if (log_f(proposal) > level) return proposal;
    if (proposal < x) left = proposal;
    else right = proposal;
  }
}

}  // namespace pydt

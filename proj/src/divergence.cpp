#include "pydt/divergence.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace pydt {

namespace {

void check_c(double c) {
  if (!(c > 0.0)) throw std::invalid_argument("divergence: c must be > 0");
}

void check_time(double t) {
  if (!(t >= 0.0 && t < 1.0)) throw std::invalid_argument("divergence: t must be in [0,1), got " + std::to_string(t));
}

}  // namespace

double DivergenceFn::rate(double t) const { return a_rate(t, c); }
double DivergenceFn::cumulative(double t) const { return A_cum(t, c); }

double DivergenceFn::inverse_cumulative(double a) const {
  check_c(c);
  if (!(a >= 0.0)) throw std::invalid_argument("divergence: cumulative rate must be >= 0");
  return -std::expm1(-a / c);
}

double a_rate(double t, double c) {
  check_c(c);
  check_time(t);
  return c / (1.0 - t);
}

double A_cum(double t, double c) {
  check_c(c);
  check_time(t);
  return -c * std::log1p(-t);
}

double h_gen(int n, double alpha, double beta) {
  if (n < 0) throw std::invalid_argument("h_gen: n must be >= 0");
  double sum = 0.0;
  for (int i = 1; i <= n; ++i) sum += std::exp(std::lgamma(i - beta) - std::lgamma(i + 1.0 + alpha));
  return sum;
}

double j_factor(std::span<const int> counts, double alpha, double beta) {
  if (counts.size() < 2) throw std::invalid_argument("j_factor: need at least two branches");
  int m = 0;
  double sum = 0.0;
  for (int n : counts) {
    if (n < 1) throw std::invalid_argument("j_factor: counts must be >= 1");
    m += n;
    sum += h_gen(n - 1, alpha, beta);
  }
  return h_gen(m - 1, alpha, beta) - sum;
}

double HarmonicTable::operator()(int n) {
  if (n < 0) throw std::invalid_argument("h_gen: n must be >= 0");
  while (static_cast<int>(prefix_.size()) <= n) {
    const auto i = static_cast<double>(prefix_.size());
    prefix_.push_back(prefix_.back() + std::exp(std::lgamma(i - beta_) - std::lgamma(i + 1.0 + alpha_)));
  }
  return prefix_[static_cast<std::size_t>(n)];
}

double HarmonicTable::j(std::span<const int> counts) {
  if (counts.size() < 2) throw std::invalid_argument("j_factor: need at least two branches");
  int m = 0;
  double sum = 0.0;
  for (int n : counts) {
    if (n < 1) throw std::invalid_argument("j_factor: counts must be >= 1");
    m += n;
    sum += (*this)(n - 1);
  }
  return (*this)(m - 1) - sum;
}

double log_divergence_scale(int m, double alpha, double beta) {
  if (m < 1) throw std::invalid_argument("divergence: m must be >= 1");
  return std::lgamma(m + 1.0 + alpha) - std::lgamma(m - beta);
}

double divergence_time_from_exponential(double t_start, int m, double c, double alpha, double beta, double e) {
  check_c(c);
  check_time(t_start);
  // 1 - t_d = (1 - t_start) exp(-e * scale / c)
  const double log_one_minus =
      std::log1p(-t_start) - e * std::exp(log_divergence_scale(m, alpha, beta)) / c;
  return -std::expm1(log_one_minus);
}

double sample_divergence_time(double t_start, int m, double c, double alpha, double beta, Rng& rng) {
  std::exponential_distribution<double> exp1(1.0);
  const double t = divergence_time_from_exponential(t_start, m, c, alpha, beta, exp1(rng));
  return std::min(t, kMaxDivergenceTime);
}

double log_survival(double s, double t, int m, double c, double alpha, double beta) {
  if (t >= 1.0) return -std::numeric_limits<double>::infinity();
  return (A_cum(s, c) - A_cum(t, c)) * std::exp(-log_divergence_scale(m, alpha, beta));
}

std::vector<double> branch_probs(std::span<const int> counts, double alpha, double beta) {
  const auto k = static_cast<int>(counts.size());
  if (k < 2) throw std::invalid_argument("branch_probs: need at least two branches");
  const double new_branch = alpha + beta * k;
  if (new_branch < 0.0) throw std::invalid_argument("branch_probs: alpha + beta*K < 0");
  const int m = std::accumulate(counts.begin(), counts.end(), 0);
  std::vector<double> p(static_cast<std::size_t>(k) + 1);
  double used = 0.0;
  for (int i = 0; i < k; ++i) {
    if (counts[static_cast<std::size_t>(i)] < 1) throw std::invalid_argument("branch_probs: counts must be >= 1");
    p[static_cast<std::size_t>(i)] = (counts[static_cast<std::size_t>(i)] - beta) / (m + alpha);
    used += p[static_cast<std::size_t>(i)];
  }
  // The residual keeps the vector summing to one; an exact zero stays zero so
  // that alpha = beta = 0 can never open a third branch.
  const double direct = new_branch / (m + alpha);
  const double residual = 1.0 - used;
  if (std::abs(residual - direct) > 1e-9) throw std::logic_error("branch_probs: probabilities do not sum to one");
  p[static_cast<std::size_t>(k)] = direct == 0.0 ? 0.0 : std::max(0.0, residual);
  return p;
}

}  // namespace pydt

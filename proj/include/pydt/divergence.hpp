#pragma once

#include <random>
#include <span>
#include <vector>

namespace pydt {

using Rng = std::mt19937_64;

/// Largest divergence time handed out by the samplers. Draws closer to 1
/// than this are clamped so that every edge keeps a representable length.
inline constexpr double kMaxDivergenceTime = 1.0 - 1e-9;

/// Divergence function a(t) = c / (1 - t) with cumulative rate
/// A(t) = -c log(1 - t). A(1) is infinite, so every path diverges before t = 1.
struct DivergenceFn {
  double c = 1.0;

  double rate(double t) const;
  double cumulative(double t) const;
  /// Inverse of cumulative(): the t with A(t) = a.
  double inverse_cumulative(double a) const;
};

double a_rate(double t, double c);
double A_cum(double t, double c);

/// H_n^{alpha,beta} = sum_{i=1}^n Gamma(i - beta) / Gamma(i + 1 + alpha).
double h_gen(int n, double alpha, double beta);

/// J = H_{sum n_k - 1} - sum_k H_{n_k - 1} for a branch point with counts n.
double j_factor(std::span<const int> counts, double alpha, double beta);

/// Prefix sums of h_gen for fixed (alpha, beta), grown on demand.
class HarmonicTable {
 public:
  HarmonicTable(double alpha, double beta) : alpha_(alpha), beta_(beta), prefix_{0.0} {}

  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  double operator()(int n);
  double j(std::span<const int> counts);

 private:
  double alpha_;
  double beta_;
  std::vector<double> prefix_;
};

/// log[Gamma(m + 1 + alpha) / Gamma(m - beta)]; the divergence hazard along a
/// branch traversed m times is a(t) times exp(-this).
double log_divergence_scale(int m, double alpha, double beta);

/// Divergence time for a path entering an edge at t_start that has been
/// traversed m times, given the unit-exponential draw `e`:
/// A(t_d) = A(t_start) + e * Gamma(m+1+alpha)/Gamma(m-beta).
double divergence_time_from_exponential(double t_start, int m, double c, double alpha, double beta, double e);

/// Same as above with e ~ Exponential(1) drawn from `rng`. The result is
/// clamped to kMaxDivergenceTime.
double sample_divergence_time(double t_start, int m, double c, double alpha, double beta, Rng& rng);

/// log P(no divergence in [s, t]) for a branch traversed m times.
double log_survival(double s, double t, int m, double c, double alpha, double beta);

/// Probabilities of following each existing branch (entries 0..K-1) and of
/// opening a new branch (entry K) at a branch point with counts b.
std::vector<double> branch_probs(std::span<const int> counts, double alpha, double beta);

}  // namespace pydt

#pragma once

#include <stdexcept>
#include <string>

namespace pydt {

/// Gamma(shape, rate) and Beta priors on the model hyperparameters.
struct HyperPrior {
  double a_alpha = 2.0;
  double b_alpha = 0.5;
  double a_beta = 1.0;
  double b_beta = 1.0;
  double a_c = 1.0;
  double b_c = 1.0;
  double a_sigma2 = 1.0;  // prior on the precision 1/sigma2
  double b_sigma2 = 1.0;
};

/// Model hyperparameters: smoothness c, diffusion variance sigma2 and the
/// Pitman-Yor concentration/discount pair (alpha, beta).
struct Hyperparams {
  double c = 1.0;
  double sigma2 = 1.0;
  double alpha = 0.0;
  double beta = 0.0;
  HyperPrior prior{};

  static Hyperparams make(double c, double sigma2, double alpha, double beta) {
    Hyperparams h;
    h.c = c;
    h.sigma2 = sigma2;
    h.alpha = alpha;
    h.beta = beta;
    h.validate();
    return h;
  }

  void validate() const {
    if (!(c > 0.0)) throw std::invalid_argument("hyperparams: c must be > 0, got " + std::to_string(c));
    if (!(sigma2 > 0.0))
      throw std::invalid_argument("hyperparams: sigma2 must be > 0, got " + std::to_string(sigma2));
    if (!(alpha >= 0.0))
      throw std::invalid_argument("hyperparams: alpha must be >= 0, got " + std::to_string(alpha));
    if (!(beta >= 0.0 && beta < 1.0))
      throw std::invalid_argument("hyperparams: beta must be in [0,1), got " + std::to_string(beta));
    const HyperPrior& p = prior;
    for (double v : {p.a_alpha, p.b_alpha, p.a_beta, p.b_beta, p.a_c, p.b_c, p.a_sigma2, p.b_sigma2}) {
      if (!(v > 0.0)) throw std::invalid_argument("hyperparams: prior parameters must be > 0");
    }
  }
};

}  // namespace pydt

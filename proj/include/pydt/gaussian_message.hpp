#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace pydt {

/// Scaled one-dimensional Gaussian potential exp(log_z) * N(x; mean, var).
/// var == 0 encodes a point mass at `mean`; var == +inf encodes the flat
/// potential exp(log_z).
struct GaussMsg {
  double log_z = 0.0;
  double mean = 0.0;
  double var = std::numeric_limits<double>::infinity();

  static GaussMsg flat(double log_z = 0.0) { return {log_z, 0.0, std::numeric_limits<double>::infinity()}; }
  static GaussMsg point(double x, double log_z = 0.0) { return {log_z, x, 0.0}; }
  static GaussMsg gaussian(double mean, double var, double log_z = 0.0) { return {log_z, mean, var}; }

  bool is_flat() const { return std::isinf(var); }
  bool is_point() const { return var == 0.0; }
  double precision() const { return is_flat() ? 0.0 : 1.0 / var; }
  GaussMsg normalized() const { return {0.0, mean, var}; }
};

inline double log_normal_pdf(double x, double mean, double var) {
  const double r = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * r * r / var;
}

/// Integrates N(x_child; x_parent, w) against a potential on x_child,
/// giving a potential on x_parent.
inline GaussMsg through_edge(const GaussMsg& m, double w) {
  if (!(w > 0.0)) throw std::invalid_argument("degenerate edge: non-positive variance");
  if (m.is_flat()) return m;
  return {m.log_z, m.mean, m.var + w};
}

inline GaussMsg multiply(const GaussMsg& a, const GaussMsg& b) {
  if (a.is_flat()) return {a.log_z + b.log_z, b.mean, b.var};
  if (b.is_flat()) return {a.log_z + b.log_z, a.mean, a.var};
  if (a.is_point() && b.is_point()) throw std::invalid_argument("product of two point masses");
  if (a.is_point()) return {a.log_z + b.log_z + log_normal_pdf(a.mean, b.mean, b.var), a.mean, 0.0};
  if (b.is_point()) return {a.log_z + b.log_z + log_normal_pdf(b.mean, a.mean, a.var), b.mean, 0.0};
  const double v = a.var + b.var;
  return {a.log_z + b.log_z + log_normal_pdf(a.mean, b.mean, v), (a.mean * b.var + b.mean * a.var) / v,
          a.var * b.var / v};
}

}  // namespace pydt

#pragma once

#include <span>
#include <vector>

#include "pydt/hyperparams.hpp"
#include "pydt/tree.hpp"

namespace pydt {

/// Branch-point combinatorics of one internal node, in log space:
/// prod_{k=3}^{K} [alpha + (k-1) beta] * prod_l Gamma(n_l - beta)
///   / (Gamma(m + alpha) * Gamma(1 - beta)^{K-1}).
/// The divergence-rate term a(t_b) is accounted for in times_factor().
double structure_factor_node(std::span<const int> counts, double alpha, double beta);
double structure_factor_node(const Tree& tree, NodeId node, double alpha, double beta);

/// Sum of structure_factor_node over internal nodes.
double structure_factor(const Tree& tree, double alpha, double beta);

/// Sum over edges into internal nodes of (A(t_a) - A(t_b)) H_{m(b)-1} plus
/// log a(t_b) for every internal node b.
double times_factor(const Tree& tree, const Hyperparams& hyper);

/// Sum of Gaussian log densities N(x_b; x_a, sigma2 (t_b - t_a) I) over edges.
/// A root without a location is taken to sit at the origin.
double locations_factor(const Tree& tree, double sigma2);

/// Structure and times: the prior over the tree without locations.
double log_prior(const Tree& tree, const Hyperparams& hyper);

/// Full joint: structure + times + locations.
double log_joint(const Tree& tree, const Hyperparams& hyper);

/// Per-node time prior log[c (1 - t)^{c J - 1}].
double time_node_density(double t, std::span<const int> counts, const Hyperparams& hyper);

/// Log probability of generating `tree` by adding the data points one at a
/// time in `ordering` (a permutation of leaf indices). Location terms are
/// included when `with_locations` is set. Equal to log_joint for every
/// ordering; kept as an independent route for testing.
double sequential_log_prob(const Tree& tree, std::span<const int> ordering, const Hyperparams& hyper,
                           bool with_locations = true);

/// Counts n_k^b of a node's children.
std::vector<int> child_counts(const Tree& tree, NodeId node);

}  // namespace pydt

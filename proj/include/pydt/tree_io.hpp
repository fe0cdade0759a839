#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "pydt/hyperparams.hpp"
#include "pydt/tree.hpp"

namespace pydt {

/// Tree as JSON: {"dim", "nodes": [...]} with nodes in preorder and ids
/// renumbered 0..n-1 in that order, so equal trees serialize identically.
/// Each node has "id", "parent" (-1 for the root), "time", "leaf" (leaves
/// only) and "location" when set.
nlohmann::json tree_to_json(const Tree& tree);

/// Inverse of tree_to_json. Throws DataError on malformed input.
Tree tree_from_json(const nlohmann::json& j);

/// Text form used in files: two-space indented JSON with a trailing newline.
std::string dump_json(const nlohmann::json& j);

/// Newick string with branch lengths in time units. Leaves are labelled by
/// `labels[leaf_index]` when given, else by the leaf index.
std::string to_newick(const Tree& tree, const std::vector<std::string>& labels = {});

/// Flattened dendrogram for plotting: one record per node with its time,
/// parent, leaf count, degree and the probability (alpha + beta K)/(m + alpha)
/// that a new path opens a further branch there.
nlohmann::json dendrogram_json(const Tree& tree, const Hyperparams& hyper);

nlohmann::json hyper_to_json(const Hyperparams& hyper);
Hyperparams hyper_from_json(const nlohmann::json& j);

/// Row-major nested arrays; NaN becomes null and back.
nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

/// 64-bit FNV-1a hash of a byte string, as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace pydt

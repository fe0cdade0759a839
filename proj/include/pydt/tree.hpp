#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pydt {

/// Handle into a tree's node arena. Stable across structural edits; a handle
/// only becomes invalid when the node it names is spliced out (see
/// Tree::detach), which is reported back to the caller.
struct NodeId {
  std::int32_t value = -1;

  constexpr bool valid() const { return value >= 0; }
  friend constexpr bool operator==(NodeId a, NodeId b) { return a.value == b.value; }
  friend constexpr bool operator!=(NodeId a, NodeId b) { return a.value != b.value; }
  friend constexpr bool operator<(NodeId a, NodeId b) { return a.value < b.value; }
};

inline constexpr NodeId kNoNode{};

enum class NodeKind { Root, Internal, Leaf };

struct Node {
  NodeKind kind = NodeKind::Internal;
  double time = 0.0;
  NodeId parent{};
  std::vector<NodeId> children;
  int count = 0;       // m(b): number of leaves below (and including) this node
  int leaf_index = -1;  // data row, leaves only
  std::optional<Eigen::VectorXd> location;
  bool alive = true;

  bool is_leaf() const { return kind == NodeKind::Leaf; }
  bool is_root() const { return kind == NodeKind::Root; }
  bool is_internal() const { return kind == NodeKind::Internal; }
  int degree() const { return static_cast<int>(children.size()); }
};

/// Where a point or subtree joins the tree: either on the edge above `node`
/// at `time`, or as an extra child of the branch point `node`.
struct Attachment {
  enum class Kind { Edge, Node };
  Kind kind = Kind::Edge;
  NodeId node{};
  double time = 0.0;

  static Attachment on_edge(NodeId below, double t) { return {Kind::Edge, below, t}; }
  static Attachment at_node(NodeId n, double t) { return {Kind::Node, n, t}; }
};

/// Rooted multifurcating tree over [0,1] time. The root is an explicit node
/// at t = 0 with at most one child; leaves sit at t = 1.
class Tree {
 public:
  explicit Tree(int dim = 1);

  int dim() const { return dim_; }
  NodeId root() const { return root_; }
  int num_leaves() const { return leaf_count_; }
  bool empty() const { return leaf_count_ == 0; }

  const Node& at(NodeId id) const { return nodes_[static_cast<std::size_t>(id.value)]; }
  Node& at(NodeId id) { return nodes_[static_cast<std::size_t>(id.value)]; }

  /// Arena capacity; node ids are in [0, capacity()).
  int capacity() const { return static_cast<int>(nodes_.size()); }
  int num_nodes() const { return capacity() - static_cast<int>(free_.size()); }

  NodeId leaf(int leaf_index) const;

  std::vector<NodeId> preorder(NodeId from) const;
  std::vector<NodeId> preorder() const { return preorder(root_); }
  std::vector<NodeId> postorder(NodeId from) const;
  std::vector<NodeId> postorder() const { return postorder(root_); }

  /// All internal nodes reachable from the root, in preorder.
  std::vector<NodeId> internal_nodes() const;

  /// Creates an unattached leaf for data row `leaf_index`.
  NodeId make_leaf(int leaf_index);

  /// Joins the detached subtree rooted at `subtree` at `where`. Returns the
  /// newly created branch node for edge attachments, otherwise `where.node`.
  NodeId attach(NodeId subtree, const Attachment& where);

  /// Adds a new leaf at `where` (first point: Attachment::at_node(root)).
  NodeId add_leaf(int leaf_index, const Attachment& where);

  /// Unlinks the subtree rooted at `subtree`. A parent left with a single
  /// child is spliced out and freed. Returns the position the subtree held,
  /// so that attach(subtree, result) restores an equivalent tree.
  Attachment detach(NodeId subtree);

  /// Counts recomputed from scratch, indexed by node id (-1 for dead nodes).
  std::vector<int> recount() const;

  /// Nodes that may be detached by subtree moves: everything except the root
  /// and the root's child.
  std::vector<NodeId> movable_nodes() const;

  /// Incremented by every structural edit; lets caches detect staleness.
  std::uint64_t revision() const { return revision_; }

  bool is_ancestor(NodeId ancestor, NodeId node) const;
  NodeId lca(NodeId a, NodeId b) const;

 private:
  NodeId allocate(Node node);
  void release(NodeId id);
  void add_count(NodeId from, int delta);

  int dim_;
  NodeId root_;
  std::vector<Node> nodes_;
  std::vector<NodeId> free_;
  std::vector<NodeId> leaves_;  // leaves_[leaf_index]
  int leaf_count_ = 0;
  std::uint64_t revision_ = 0;
};

/// Human-readable invariant violations; empty iff the tree is well formed.
std::vector<std::string> validate(const Tree& tree);

/// Divergence time of the most recent common ancestor of two data points.
double mrca_time(const Tree& tree, int leaf_i, int leaf_j);

/// Canonical structural hash: children ordered by their minimum leaf index.
/// Ignores times, so it identifies a topology.
std::uint64_t structure_hash(const Tree& tree);

/// Leaf indices below a node, sorted.
std::vector<int> leaf_set(const Tree& tree, NodeId node);

}  // namespace pydt

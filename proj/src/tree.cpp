#include "pydt/tree.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace pydt {

Tree::Tree(int dim) : dim_(dim) {
  if (dim < 1) throw std::invalid_argument("tree dimension must be >= 1");
  Node r;
  r.kind = NodeKind::Root;
  r.time = 0.0;
  root_ = allocate(std::move(r));
}

NodeId Tree::allocate(Node node) {
  node.alive = true;
  if (!free_.empty()) {
    NodeId id = free_.back();
    free_.pop_back();
    nodes_[static_cast<std::size_t>(id.value)] = std::move(node);
    return id;
  }
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::int32_t>(nodes_.size() - 1)};
}

void Tree::release(NodeId id) {
  Node& n = at(id);
  n = Node{};
  n.alive = false;
  free_.push_back(id);
}

NodeId Tree::leaf(int leaf_index) const {
  if (leaf_index < 0 || leaf_index >= static_cast<int>(leaves_.size()) ||
      !leaves_[static_cast<std::size_t>(leaf_index)].valid()) {
    throw std::out_of_range("unknown leaf index " + std::to_string(leaf_index));
  }
  return leaves_[static_cast<std::size_t>(leaf_index)];
}

std::vector<NodeId> Tree::preorder(NodeId from) const {
  std::vector<NodeId> out;
  std::vector<NodeId> stack{from};
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    out.push_back(id);
    const auto& ch = at(id).children;
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
  }
  return out;
}

std::vector<NodeId> Tree::postorder(NodeId from) const {
  std::vector<NodeId> out = preorder(from);
  // Reversed preorder visits every child before its parent.
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<NodeId> Tree::internal_nodes() const {
  std::vector<NodeId> out;
  for (NodeId id : preorder()) {
    if (at(id).is_internal()) out.push_back(id);
  }
  return out;
}

NodeId Tree::make_leaf(int leaf_index) {
  if (leaf_index < 0) throw std::invalid_argument("leaf index must be >= 0");
  if (leaf_index < static_cast<int>(leaves_.size()) && leaves_[static_cast<std::size_t>(leaf_index)].valid()) {
    throw std::invalid_argument("duplicate leaf index " + std::to_string(leaf_index));
  }
  ++revision_;
  Node n;
  n.kind = NodeKind::Leaf;
  n.time = 1.0;
  n.count = 1;
  n.leaf_index = leaf_index;
  NodeId id = allocate(std::move(n));
  if (leaf_index >= static_cast<int>(leaves_.size())) leaves_.resize(static_cast<std::size_t>(leaf_index) + 1);
  leaves_[static_cast<std::size_t>(leaf_index)] = id;
  ++leaf_count_;
  return id;
}

void Tree::add_count(NodeId from, int delta) {
  for (NodeId id = from; id.valid(); id = at(id).parent) at(id).count += delta;
}

NodeId Tree::attach(NodeId subtree, const Attachment& where) {
  if (at(subtree).parent.valid()) throw std::logic_error("attach: subtree is still attached");
  const int moved = at(subtree).count;
  ++revision_;
  if (where.kind == Attachment::Kind::Node) {
    Node& host = at(where.node);
    if (host.is_leaf()) throw std::logic_error("attach: cannot attach below a leaf");
    if (host.is_root() && !host.children.empty()) throw std::logic_error("attach: root already has a child");
    if (!host.is_root() && !(host.time < at(subtree).time)) {
      throw std::logic_error("attach: branch point must precede the subtree root");
    }
    host.children.push_back(subtree);
    at(subtree).parent = where.node;
    add_count(where.node, moved);
    return where.node;
  }

  const NodeId below = where.node;
  const NodeId above = at(below).parent;
  if (!above.valid()) throw std::logic_error("attach: edge has no parent");
  if (!(where.time > at(above).time && where.time < at(below).time && where.time < at(subtree).time)) {
    std::ostringstream msg;
    msg << "attach: time " << where.time << " outside edge (" << at(above).time << ", " << at(below).time
        << ") or not before subtree root " << at(subtree).time;
    throw std::logic_error(msg.str());
  }
  Node mid;
  mid.kind = NodeKind::Internal;
  mid.time = where.time;
  mid.parent = above;
  mid.children = {below, subtree};
  mid.count = at(below).count;
  NodeId mid_id = allocate(std::move(mid));
  auto& siblings = at(above).children;
  *std::find(siblings.begin(), siblings.end(), below) = mid_id;
  at(below).parent = mid_id;
  at(subtree).parent = mid_id;
  add_count(mid_id, moved);
  return mid_id;
}

NodeId Tree::add_leaf(int leaf_index, const Attachment& where) {
  NodeId leaf_id = make_leaf(leaf_index);
  attach(leaf_id, where);
  return leaf_id;
}

Attachment Tree::detach(NodeId subtree) {
  const NodeId parent = at(subtree).parent;
  if (!parent.valid()) throw std::logic_error("detach: node is not attached");
  if (at(parent).is_root()) throw std::logic_error("detach: cannot detach the root's child");
  const int moved = at(subtree).count;
  ++revision_;
  auto& siblings = at(parent).children;
  siblings.erase(std::find(siblings.begin(), siblings.end(), subtree));
  at(subtree).parent = kNoNode;
  add_count(parent, -moved);

  if (siblings.size() >= 2) return Attachment::at_node(parent, at(parent).time);

  // Parent is left with one child: splice it out.
  const NodeId only = siblings.front();
  const NodeId grand = at(parent).parent;
  const double t = at(parent).time;
  auto& upper = at(grand).children;
  *std::find(upper.begin(), upper.end(), parent) = only;
  at(only).parent = grand;
  release(parent);
  return Attachment::on_edge(only, t);
}

std::vector<int> Tree::recount() const {
  std::vector<int> counts(nodes_.size(), -1);
  for (NodeId id : postorder()) {
    const Node& n = at(id);
    int c = n.is_leaf() ? 1 : 0;
    for (NodeId ch : n.children) c += counts[static_cast<std::size_t>(ch.value)];
    counts[static_cast<std::size_t>(id.value)] = c;
  }
  return counts;
}

std::vector<NodeId> Tree::movable_nodes() const {
  std::vector<NodeId> out;
  for (NodeId id : preorder()) {
    const Node& n = at(id);
    if (n.is_root() || at(n.parent).is_root()) continue;
    out.push_back(id);
  }
  return out;
}

bool Tree::is_ancestor(NodeId ancestor, NodeId node) const {
  for (NodeId id = node; id.valid(); id = at(id).parent) {
    if (id == ancestor) return true;
  }
  return false;
}

NodeId Tree::lca(NodeId a, NodeId b) const {
  std::vector<NodeId> path;
  for (NodeId id = a; id.valid(); id = at(id).parent) path.push_back(id);
  for (NodeId id = b; id.valid(); id = at(id).parent) {
    if (std::find(path.begin(), path.end(), id) != path.end()) return id;
  }
  throw std::logic_error("lca: nodes are not in the same tree");
}

std::vector<std::string> validate(const Tree& tree) {
  std::vector<std::string> problems;
  auto describe = [](NodeId id) { return "node " + std::to_string(id.value); };
  const Node& root = tree.at(tree.root());
  if (!root.is_root()) problems.push_back("root node has wrong kind");
  if (root.time != 0.0) problems.push_back("root time is not 0");
  if (root.parent.valid()) problems.push_back("root has a parent");
  if (root.degree() > 1) problems.push_back("root has " + std::to_string(root.degree()) + " children");
  if (root.degree() == 0 && tree.num_leaves() > 0) problems.push_back("root has no child but tree has leaves");

  const std::vector<int> counts = tree.recount();
  std::vector<int> seen_leaves;
  for (NodeId id : tree.preorder()) {
    const Node& n = tree.at(id);
    if (!n.alive) {
      problems.push_back(describe(id) + " is dead but reachable");
      continue;
    }
    for (NodeId ch : n.children) {
      if (tree.at(ch).parent != id) problems.push_back(describe(ch) + " has inconsistent parent link");
      if (!(tree.at(ch).time > n.time)) {
        std::ostringstream msg;
        msg << "time order violated at " << describe(ch) << ": child " << tree.at(ch).time << " <= parent "
            << n.time;
        problems.push_back(msg.str());
      }
    }
    switch (n.kind) {
      case NodeKind::Root:
        if (id != tree.root()) problems.push_back(describe(id) + " is a second root");
        break;
      case NodeKind::Internal:
        if (n.degree() < 2) problems.push_back("K_b < 2 at " + describe(id));
        if (!(n.time > 0.0 && n.time < 1.0)) problems.push_back("internal time outside (0,1) at " + describe(id));
        break;
      case NodeKind::Leaf:
        if (n.degree() != 0) problems.push_back("leaf " + describe(id) + " has children");
        if (n.time != 1.0) problems.push_back("leaf time is not 1 at " + describe(id));
        seen_leaves.push_back(n.leaf_index);
        break;
    }
    if (counts[static_cast<std::size_t>(id.value)] != n.count) {
      problems.push_back("count mismatch at " + describe(id) + ": stored " + std::to_string(n.count) +
                         ", actual " + std::to_string(counts[static_cast<std::size_t>(id.value)]));
    }
  }
  std::sort(seen_leaves.begin(), seen_leaves.end());
  for (std::size_t i = 0; i < seen_leaves.size(); ++i) {
    if (seen_leaves[i] != static_cast<int>(i)) {
      problems.push_back("leaf indices are not a permutation of 0..N-1");
      break;
    }
  }
  if (static_cast<int>(seen_leaves.size()) != tree.num_leaves()) {
    problems.push_back("reachable leaves (" + std::to_string(seen_leaves.size()) + ") != registered leaves (" +
                       std::to_string(tree.num_leaves()) + ")");
  }
  return problems;
}

double mrca_time(const Tree& tree, int leaf_i, int leaf_j) {
  if (leaf_i == leaf_j) throw std::invalid_argument("mrca_time: leaves must differ");
  return tree.at(tree.lca(tree.leaf(leaf_i), tree.leaf(leaf_j))).time;
}

namespace {

struct Canonical {
  int min_leaf;
  std::uint64_t hash;
};

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  // splitmix-style combine
  v += 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  v = (v ^ (v >> 30)) * 0xbf58476d1ce4e5b9ULL;
  v = (v ^ (v >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (v ^ (v >> 31));
}

Canonical canonical(const Tree& tree, NodeId id) {
  const Node& n = tree.at(id);
  if (n.is_leaf()) return {n.leaf_index, mix(0x51ed270b27ULL, static_cast<std::uint64_t>(n.leaf_index))};
  std::vector<Canonical> parts;
  for (NodeId ch : n.children) parts.push_back(canonical(tree, ch));
  std::sort(parts.begin(), parts.end(), [](const Canonical& a, const Canonical& b) { return a.min_leaf < b.min_leaf; });
  std::uint64_t h = 0xc0ffeeULL + parts.size();
  for (const auto& p : parts) h = mix(h, p.hash);
  return {parts.empty() ? -1 : parts.front().min_leaf, h};
}

}  // namespace

std::uint64_t structure_hash(const Tree& tree) { return canonical(tree, tree.root()).hash; }

std::vector<int> leaf_set(const Tree& tree, NodeId node) {
  std::vector<int> out;
  for (NodeId id : tree.preorder(node)) {
    if (tree.at(id).is_leaf()) out.push_back(tree.at(id).leaf_index);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace pydt

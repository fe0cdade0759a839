#include "pydt/tree_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "pydt/data_io.hpp"
#include "pydt/density.hpp"
#include "pydt/errors.hpp"

namespace pydt {

using nlohmann::json;

namespace {

json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(std::isnan(v[i]) ? json(nullptr) : json(v[i]));
  return a;
}

double number_or_nan(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!j.is_number()) throw DataError("expected a number, found " + j.dump());
  return j.get<double>();
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw DataError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DataError(std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace

json tree_to_json(const Tree& tree) {
  const std::vector<NodeId> order = tree.preorder();
  std::vector<int> new_id(static_cast<std::size_t>(tree.capacity()), -1);
  for (std::size_t i = 0; i < order.size(); ++i) new_id[static_cast<std::size_t>(order[i].value)] = static_cast<int>(i);
  json nodes = json::array();
  for (NodeId v : order) {
    const Node& n = tree.at(v);
    json rec;
    rec["id"] = new_id[static_cast<std::size_t>(v.value)];
    rec["parent"] = n.parent.valid() ? new_id[static_cast<std::size_t>(n.parent.value)] : -1;
    rec["time"] = n.time;
    if (n.is_leaf()) rec["leaf"] = n.leaf_index;
    if (n.location) rec["location"] = vector_to_json(*n.location);
    nodes.push_back(std::move(rec));
  }
  json j;
  j["dim"] = tree.dim();
  j["nodes"] = std::move(nodes);
  return j;
}

Tree tree_from_json(const json& j) {
  const int dim = field<int>(j, "dim");
  if (dim < 1) throw DataError("tree: dim must be >= 1");
  const json& nodes = j.at("nodes");
  if (!nodes.is_array() || nodes.empty()) throw DataError("tree: 'nodes' must be a non-empty array");
  const auto n = static_cast<int>(nodes.size());
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::vector<double> time(static_cast<std::size_t>(n));
  std::vector<int> leaf(static_cast<std::size_t>(n), -1);
  std::vector<std::vector<int>> children(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const json& rec = nodes[static_cast<std::size_t>(i)];
    if (field<int>(rec, "id") != i) throw DataError("tree: node ids must be 0..n-1 in preorder");
    const int p = field<int>(rec, "parent");
    const double t = field<double>(rec, "time");
    if (i == 0 ? (p != -1 || t != 0.0) : (p < 0 || p >= i))
      throw DataError("tree: node " + std::to_string(i) + " has an invalid parent");
    parent[static_cast<std::size_t>(i)] = p;
    time[static_cast<std::size_t>(i)] = t;
    if (rec.contains("leaf")) leaf[static_cast<std::size_t>(i)] = field<int>(rec, "leaf");
    if (i > 0) children[static_cast<std::size_t>(p)].push_back(i);
  }
  if (n == 1) return Tree(dim);
  if (children[0].size() != 1) throw DataError("tree: the root must have exactly one child");
  for (int i = 1; i < n; ++i) {
    const auto k = children[static_cast<std::size_t>(i)].size();
    const bool is_leaf = leaf[static_cast<std::size_t>(i)] >= 0;
    if (is_leaf ? k != 0 : k < 2) throw DataError("tree: node " + std::to_string(i) + " has a bad child count");
    if (!(time[static_cast<std::size_t>(i)] > time[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])]))
      throw DataError("tree: node " + std::to_string(i) + " does not come after its parent");
    if (is_leaf && time[static_cast<std::size_t>(i)] != 1.0) throw DataError("tree: leaves must sit at time 1");
    if (!is_leaf && !(time[static_cast<std::size_t>(i)] < 1.0)) throw DataError("tree: internal time must be < 1");
  }
  auto leftmost = [&](int v) {
    while (!children[static_cast<std::size_t>(v)].empty()) v = children[static_cast<std::size_t>(v)].front();
    return v;
  };

  // Replays the tree as a sequence of point insertions: the first leaf hangs
  // from the root, every internal node is created by the leftmost leaf of its
  // second child, and further children join it as branch-point attachments.
  Tree tree(dim);
  std::vector<NodeId> map(static_cast<std::size_t>(n));
  map[0] = tree.root();
  try {
    const int first = leftmost(children[0].front());
    map[static_cast<std::size_t>(first)] =
        tree.add_leaf(leaf[static_cast<std::size_t>(first)], Attachment::at_node(tree.root(), 0.0));
    for (int b = 1; b < n; ++b) {
      const auto& ch = children[static_cast<std::size_t>(b)];
      if (ch.empty()) continue;
      const double tb = time[static_cast<std::size_t>(b)];
      const NodeId below = map[static_cast<std::size_t>(leftmost(ch[0]))];
      for (std::size_t k = 1; k < ch.size(); ++k) {
        const int l = leftmost(ch[k]);
        const Attachment where =
            k == 1 ? Attachment::on_edge(below, tb) : Attachment::at_node(map[static_cast<std::size_t>(b)], tb);
        map[static_cast<std::size_t>(l)] = tree.add_leaf(leaf[static_cast<std::size_t>(l)], where);
        if (k == 1) map[static_cast<std::size_t>(b)] = tree.at(map[static_cast<std::size_t>(l)]).parent;
      }
    }
  } catch (const std::logic_error& e) {
    throw DataError(std::string("tree: ") + e.what());
  }
  if (tree.num_leaves() > 0) {
    for (int i = 0; i < tree.num_leaves(); ++i) {
      if (!tree.leaf(i).valid()) throw DataError("tree: leaf indices must be 0..N-1");
    }
  }
  for (int i = 0; i < n; ++i) {
    const json& rec = nodes[static_cast<std::size_t>(i)];
    if (!rec.contains("location")) continue;
    const json& loc = rec.at("location");
    if (!loc.is_array() || static_cast<int>(loc.size()) != dim) throw DataError("tree: location has wrong size");
    Eigen::VectorXd x(dim);
    for (int d = 0; d < dim; ++d) x[d] = number_or_nan(loc[static_cast<std::size_t>(d)]);
    tree.at(map[static_cast<std::size_t>(i)]).location = std::move(x);
  }
  const auto problems = validate(tree);
  if (!problems.empty()) throw DataError("tree: " + problems.front());
  return tree;
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

std::string to_newick(const Tree& tree, const std::vector<std::string>& labels) {
  if (tree.empty()) return ";";
  std::ostringstream out;
  auto rec = [&](auto&& self, NodeId v) -> void {
    const Node& n = tree.at(v);
    if (n.is_leaf()) {
      const auto idx = static_cast<std::size_t>(n.leaf_index);
      out << (idx < labels.size() ? labels[idx] : std::to_string(n.leaf_index));
    } else {
      out << '(';
      for (std::size_t k = 0; k < n.children.size(); ++k) {
        if (k) out << ',';
        self(self, n.children[k]);
      }
      out << ')';
    }
    out << ':' << format_double(n.time - tree.at(n.parent).time);
  };
  rec(rec, tree.at(tree.root()).children.front());
  out << ';';
  return out.str();
}

json dendrogram_json(const Tree& tree, const Hyperparams& hyper) {
  const json base = tree_to_json(tree);
  json out = json::array();
  for (const NodeId v : tree.preorder()) {
    const Node& n = tree.at(v);
    const json& src = base["nodes"][out.size()];
    json rec;
    rec["id"] = src["id"];
    rec["parent"] = src["parent"];
    rec["time"] = n.time;
    rec["leaves"] = n.count;
    rec["degree"] = n.degree();
    if (n.is_leaf()) rec["leaf"] = n.leaf_index;
    if (n.is_internal()) rec["new_branch_prob"] = (hyper.alpha + hyper.beta * n.degree()) / (n.count + hyper.alpha);
    out.push_back(std::move(rec));
  }
  return out;
}

json hyper_to_json(const Hyperparams& h) {
  const HyperPrior& p = h.prior;
  return {{"c", h.c},
          {"sigma2", h.sigma2},
          {"alpha", h.alpha},
          {"beta", h.beta},
          {"prior",
           {{"a_alpha", p.a_alpha},
            {"b_alpha", p.b_alpha},
            {"a_beta", p.a_beta},
            {"b_beta", p.b_beta},
            {"a_c", p.a_c},
            {"b_c", p.b_c},
            {"a_sigma2", p.a_sigma2},
            {"b_sigma2", p.b_sigma2}}}};
}

Hyperparams hyper_from_json(const json& j) {
  Hyperparams h;
  h.c = field<double>(j, "c");
  h.sigma2 = field<double>(j, "sigma2");
  h.alpha = field<double>(j, "alpha");
  h.beta = field<double>(j, "beta");
  if (j.contains("prior")) {
    const json& p = j.at("prior");
    h.prior = {field<double>(p, "a_alpha"), field<double>(p, "b_alpha"), field<double>(p, "a_beta"),
               field<double>(p, "b_beta"),  field<double>(p, "a_c"),     field<double>(p, "b_c"),
               field<double>(p, "a_sigma2"), field<double>(p, "b_sigma2")};
  }
  try {
    h.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  return h;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vector_to_json(m.row(i).transpose()));
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.is_array()) throw DataError("matrix: expected an array of rows");
  if (j.empty()) return {};
  const auto cols = j.front().size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].size() != cols) throw DataError("matrix: ragged rows");
    for (std::size_t k = 0; k < cols; ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = number_or_nan(j[i][k]);
  }
  return m;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace pydt

#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "causalabs/errors.hpp"

namespace causalabs {

/// Nodes are identified by nonempty labels, compared by string equality.
using NodeId = std::string;
using Edge = std::pair<NodeId, NodeId>;
using NodeSet = std::set<NodeId>;

namespace detail {

inline bool edges_acyclic(const std::vector<NodeId>& nodes, const std::set<Edge>& edges) {
  std::map<NodeId, std::size_t> indegree;
  std::map<NodeId, std::vector<NodeId>> out;
  for (const auto& n : nodes) indegree[n] = 0;
  for (const auto& e : edges) {
    out[e.first].push_back(e.second);
    ++indegree[e.second];
  }
  std::deque<NodeId> ready;
  for (const auto& n : nodes)
    if (indegree[n] == 0) ready.push_back(n);
  std::size_t seen = 0;
  while (!ready.empty()) {
    NodeId n = ready.front();
    ready.pop_front();
    ++seen;
    for (const auto& c : out[n])
      if (--indegree[c] == 0) ready.push_back(c);
  }
  return seen == nodes.size();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dag
// ---------------------------------------------------------------------------

/// Immutable directed acyclic graph over an ordered node list. The
/// declaration order of nodes is part of the value: it fixes tie-breaks in
/// topological_order and the indexing conventions used by the engine.
class Dag {
 public:
  Dag() = default;

  Dag(std::vector<NodeId> nodes, std::vector<Edge> edges) : nodes_(std::move(nodes)) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].empty()) fail(Errc::invalid_graph, "empty node label");
      if (!pos_.emplace(nodes_[i], i).second)
        fail(Errc::duplicate_node, "duplicate node '" + nodes_[i] + "'");
    }
    for (const auto& e : edges) {
      require_node(e.first);
      require_node(e.second);
      if (e.first == e.second) fail(Errc::invalid_graph, "self loop at '" + e.first + "'");
      edges_.insert(e);
    }
    if (!detail::edges_acyclic(nodes_, edges_)) fail(Errc::invalid_graph, "graph contains a directed cycle");
  }

  const std::vector<NodeId>& nodes() const { return nodes_; }
  const std::set<Edge>& edges() const { return edges_; }

  bool has_node(const NodeId& n) const { return pos_.count(n) != 0; }
  bool has_edge(const NodeId& a, const NodeId& b) const { return edges_.count({a, b}) != 0; }

  /// Position of a node in the declaration order.
  std::size_t index_of(const NodeId& n) const {
    auto it = pos_.find(n);
    if (it == pos_.end()) fail(Errc::unknown_node, "unknown node '" + n + "'");
    return it->second;
  }

  /// Direct parents, in declaration order.
  std::vector<NodeId> parents(const NodeId& n) const {
    require_node(n);
    std::vector<NodeId> out;
    for (const auto& m : nodes_)
      if (has_edge(m, n)) out.push_back(m);
    return out;
  }

  /// Direct children, in declaration order.
  std::vector<NodeId> children(const NodeId& n) const {
    require_node(n);
    std::vector<NodeId> out;
    for (const auto& m : nodes_)
      if (has_edge(n, m)) out.push_back(m);
    return out;
  }

  /// All nodes with a directed path to n, excluding n. Declaration order.
  std::vector<NodeId> ancestors(const NodeId& n) const { return reach(n, /*forward=*/false); }

  /// All nodes reachable from n by a directed path, excluding n. Declaration order.
  std::vector<NodeId> descendants(const NodeId& n) const { return reach(n, /*forward=*/true); }

  /// Kahn's algorithm; ties broken by declaration order, so the result is
  /// deterministic for a given node list.
  std::vector<NodeId> topological_order() const {
    std::map<NodeId, std::size_t> indegree;
    for (const auto& n : nodes_) indegree[n] = 0;
    for (const auto& e : edges_) ++indegree[e.second];
    std::vector<bool> emitted(nodes_.size(), false);
    std::vector<NodeId> order;
    order.reserve(nodes_.size());
    while (order.size() < nodes_.size()) {
      bool advanced = false;
      for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (emitted[i] || indegree[nodes_[i]] != 0) continue;
        emitted[i] = true;
        order.push_back(nodes_[i]);
        for (const auto& c : children_of(nodes_[i])) --indegree[c];
        advanced = true;
        break;
      }
      if (!advanced) fail(Errc::invalid_graph, "graph contains a directed cycle");
    }
    return order;
  }

  bool operator==(const Dag& other) const { return nodes_ == other.nodes_ && edges_ == other.edges_; }

 private:
  void require_node(const NodeId& n) const {
    if (!has_node(n)) fail(Errc::unknown_node, "unknown node '" + n + "'");
  }

  std::vector<NodeId> children_of(const NodeId& n) const {
    std::vector<NodeId> out;
    for (const auto& m : nodes_)
      if (has_edge(n, m)) out.push_back(m);
    return out;
  }

  std::vector<NodeId> reach(const NodeId& n, bool forward) const {
    require_node(n);
    NodeSet seen;
    std::deque<NodeId> frontier{n};
    while (!frontier.empty()) {
      NodeId cur = frontier.front();
      frontier.pop_front();
      for (const auto& e : edges_) {
        NodeId from = forward ? e.first : e.second;
        NodeId to = forward ? e.second : e.first;
        if (from == cur && !seen.count(to) && to != n) {
          seen.insert(to);
          frontier.push_back(to);
        }
      }
    }
    std::vector<NodeId> out;
    for (const auto& m : nodes_)
      if (seen.count(m)) out.push_back(m);
    return out;
  }

  std::vector<NodeId> nodes_;
  std::map<NodeId, std::size_t> pos_;
  std::set<Edge> edges_;
};

/// True when the sets of nodes and edges coincide, ignoring declaration order.
inline bool same_graph(const Dag& a, const Dag& b) {
  return NodeSet(a.nodes().begin(), a.nodes().end()) == NodeSet(b.nodes().begin(), b.nodes().end()) &&
         a.edges() == b.edges();
}

// ---------------------------------------------------------------------------
// Graphical abstraction operations
// ---------------------------------------------------------------------------

/// Merge two nodes into one. The merged node takes the earlier of the two
/// declaration positions; incoming edges are the union of incoming edges
/// minus internal ones, outgoing edges the union of outgoing ones. Throws
/// merge_creates_cycle when the result would not be acyclic.
inline Dag merge_nodes(const Dag& g, const NodeId& a, const NodeId& b, const NodeId& merged) {
  std::size_t ia = g.index_of(a), ib = g.index_of(b);
  if (a == b) fail(Errc::invalid_graph, "cannot merge node '" + a + "' with itself");
  if (merged.empty()) fail(Errc::invalid_graph, "empty merged node label");
  for (const auto& n : g.nodes())
    if (n != a && n != b && n == merged)
      fail(Errc::duplicate_node, "merged label '" + merged + "' collides with an existing node");

  std::size_t keep = std::min(ia, ib);
  std::vector<NodeId> nodes;
  for (std::size_t i = 0; i < g.nodes().size(); ++i) {
    if (i == keep)
      nodes.push_back(merged);
    else if (i != ia && i != ib)
      nodes.push_back(g.nodes()[i]);
  }
  std::set<Edge> edges;
  for (const auto& e : g.edges()) {
    NodeId u = (e.first == a || e.first == b) ? merged : e.first;
    NodeId v = (e.second == a || e.second == b) ? merged : e.second;
    if (u == v) continue;
    edges.insert({u, v});
  }
  if (!detail::edges_acyclic(nodes, edges))
    fail(Errc::merge_creates_cycle, "merging '" + a + "' and '" + b + "' creates a directed cycle");
  return Dag(nodes, std::vector<Edge>(edges.begin(), edges.end()));
}

/// Delete a node, adding edges from each of its parents to each of its
/// children. Only valid when the node has at most one child (deleting a
/// confounder is not a graphical abstraction step).
inline Dag delete_node(const Dag& g, const NodeId& n) {
  auto ch = g.children(n);
  if (ch.size() >= 2)
    fail(Errc::is_confounder,
         "cannot delete '" + n + "': it has children '" + ch[0] + "' and '" + ch[1] + "'");
  auto pa = g.parents(n);
  std::vector<NodeId> nodes;
  for (const auto& m : g.nodes())
    if (m != n) nodes.push_back(m);
  std::set<Edge> edges;
  for (const auto& e : g.edges())
    if (e.first != n && e.second != n) edges.insert(e);
  for (const auto& p : pa)
    for (const auto& c : ch) edges.insert({p, c});
  return Dag(nodes, std::vector<Edge>(edges.begin(), edges.end()));
}

// ---------------------------------------------------------------------------
// Admg
// ---------------------------------------------------------------------------

/// Acyclic directed mixed graph: a DAG plus unordered bidirected edges.
/// Bidirected pairs are stored normalized (lexicographically smaller label
/// first); the directed part must be acyclic.
class Admg {
 public:
  Admg() = default;

  Admg(std::vector<NodeId> nodes, std::vector<Edge> directed, std::vector<Edge> bidirected)
      : dag_(std::move(nodes), std::move(directed)) {
    for (const auto& e : bidirected) {
      dag_.index_of(e.first);
      dag_.index_of(e.second);
      if (e.first == e.second) fail(Errc::invalid_graph, "bidirected self loop at '" + e.first + "'");
      bidirected_.insert(normalize(e));
    }
  }

  explicit Admg(Dag dag) : dag_(std::move(dag)) {}

  const std::vector<NodeId>& nodes() const { return dag_.nodes(); }
  const std::set<Edge>& directed() const { return dag_.edges(); }
  const std::set<Edge>& bidirected() const { return bidirected_; }
  const Dag& directed_part() const { return dag_; }

  bool has_node(const NodeId& n) const { return dag_.has_node(n); }
  bool has_directed(const NodeId& a, const NodeId& b) const { return dag_.has_edge(a, b); }
  bool has_bidirected(const NodeId& a, const NodeId& b) const { return bidirected_.count(normalize({a, b})) != 0; }

  std::vector<NodeId> parents(const NodeId& n) const { return dag_.parents(n); }
  std::vector<NodeId> children(const NodeId& n) const { return dag_.children(n); }
  std::vector<NodeId> ancestors(const NodeId& n) const { return dag_.ancestors(n); }
  std::vector<NodeId> descendants(const NodeId& n) const { return dag_.descendants(n); }

  static Edge normalize(const Edge& e) {
    return e.first <= e.second ? e : Edge{e.second, e.first};
  }

  bool operator==(const Admg& other) const {
    return dag_ == other.dag_ && bidirected_ == other.bidirected_;
  }

 private:
  Dag dag_;
  std::set<Edge> bidirected_;
};

inline bool same_graph(const Admg& a, const Admg& b) {
  return same_graph(a.directed_part(), b.directed_part()) && a.bidirected() == b.bidirected();
}

/// The canonical DAG of an ADMG: one fresh latent node per bidirected edge,
/// with directed edges to both endpoints. Latent labels are deterministic
/// ("u(a,b)", primed on collision) and listed after the original nodes.
struct CanonicalDag {
  Dag dag;
  std::vector<NodeId> latents;
};

inline CanonicalDag to_canonical_dag(const Admg& g) {
  std::vector<NodeId> nodes = g.nodes();
  NodeSet taken(nodes.begin(), nodes.end());
  std::vector<NodeId> latents;
  std::vector<Edge> edges(g.directed().begin(), g.directed().end());
  for (const auto& e : g.bidirected()) {
    NodeId u = "u(" + e.first + "," + e.second + ")";
    while (taken.count(u)) u += "'";
    taken.insert(u);
    nodes.push_back(u);
    latents.push_back(u);
    edges.push_back({u, e.first});
    edges.push_back({u, e.second});
  }
  return CanonicalDag{Dag(std::move(nodes), std::move(edges)), std::move(latents)};
}

// ---------------------------------------------------------------------------
// d-separation
// ---------------------------------------------------------------------------

namespace detail {

/// Nodes reachable from `sources` along trails that are active given `z`,
/// on a DAG (Shachter-style two-direction reachability).
inline NodeSet active_reachable(const Dag& g, const NodeSet& sources, const NodeSet& z) {
  NodeSet anc_z = z;
  for (const auto& n : z)
    for (const auto& a : g.ancestors(n)) anc_z.insert(a);

  // Direction encodes how the trail enters a node: `up` via an edge leaving
  // it (coming from a child), `down` via an edge pointing into it.
  enum Dir { up = 0, down = 1 };
  std::set<std::pair<NodeId, int>> visited;
  std::deque<std::pair<NodeId, int>> frontier;
  for (const auto& s : sources) frontier.push_back({s, up});
  NodeSet reachable;
  while (!frontier.empty()) {
    auto [n, d] = frontier.front();
    frontier.pop_front();
    if (!visited.insert({n, d}).second) continue;
    if (!z.count(n)) reachable.insert(n);
    if (d == up && !z.count(n)) {
      for (const auto& p : g.parents(n)) frontier.push_back({p, up});
      for (const auto& c : g.children(n)) frontier.push_back({c, down});
    } else if (d == down) {
      if (!z.count(n))
        for (const auto& c : g.children(n)) frontier.push_back({c, down});
      if (anc_z.count(n))
        for (const auto& p : g.parents(n)) frontier.push_back({p, up});
    }
  }
  return reachable;
}

inline void require_disjoint(const NodeSet& a, const NodeSet& b, const char* what) {
  for (const auto& n : a)
    if (b.count(n)) fail(Errc::invalid_query, std::string(what) + " share node '" + n + "'");
}

}  // namespace detail

/// m-separation of x and y given z in an ADMG, decided on the canonical DAG
/// with the fresh latents never conditioned. Sets must be pairwise disjoint.
inline bool d_separated(const Admg& g, const NodeSet& x, const NodeSet& y, const NodeSet& z) {
  for (const auto& s : {&x, &y, &z})
    for (const auto& n : *s) g.directed_part().index_of(n);
  detail::require_disjoint(x, y, "x and y");
  detail::require_disjoint(x, z, "x and z");
  detail::require_disjoint(y, z, "y and z");
  CanonicalDag cd = to_canonical_dag(g);
  NodeSet reach = detail::active_reachable(cd.dag, x, z);
  for (const auto& n : y)
    if (reach.count(n)) return false;
  return true;
}

inline bool d_separated(const Dag& g, const NodeSet& x, const NodeSet& y, const NodeSet& z) {
  return d_separated(Admg(g), x, y, z);
}

// ---------------------------------------------------------------------------
// Latent projection
// ---------------------------------------------------------------------------

/// Project a DAG onto a set of observed nodes. Directed edge a -> b when a
/// directed path runs from a to b through latent intermediates only;
/// bidirected a <-> b when some latent reaches both a and b through latent
/// intermediates. Latent chains are handled by the path closure.
inline Admg latent_projection(const Dag& g, const NodeSet& observed) {
  for (const auto& n : observed) g.index_of(n);
  std::vector<NodeId> obs_nodes;
  for (const auto& n : g.nodes())
    if (observed.count(n)) obs_nodes.push_back(n);

  // Observed nodes reachable from `start` by nonempty directed paths whose
  // intermediate nodes are all latent.
  auto reach_through_latents = [&](const NodeId& start) {
    NodeSet out;
    NodeSet seen_latent;
    std::deque<NodeId> frontier{start};
    while (!frontier.empty()) {
      NodeId cur = frontier.front();
      frontier.pop_front();
      for (const auto& c : g.children(cur)) {
        if (observed.count(c)) {
          out.insert(c);
        } else if (!seen_latent.count(c)) {
          seen_latent.insert(c);
          frontier.push_back(c);
        }
      }
    }
    return out;
  };

  std::vector<Edge> directed;
  for (const auto& a : obs_nodes)
    for (const auto& b : reach_through_latents(a))
      directed.push_back({a, b});

  std::vector<Edge> bidirected;
  std::set<Edge> seen;
  for (const auto& u : g.nodes()) {
    if (observed.count(u)) continue;
    NodeSet reached = reach_through_latents(u);
    for (auto it = reached.begin(); it != reached.end(); ++it)
      for (auto jt = std::next(it); jt != reached.end(); ++jt)
        if (seen.insert(Admg::normalize({*it, *jt})).second) bidirected.push_back({*it, *jt});
  }
  return Admg(obs_nodes, directed, bidirected);
}

// ---------------------------------------------------------------------------
// Surgeries
// ---------------------------------------------------------------------------

/// Remove all edges into each node of xs: directed edges pointing at it and
/// bidirected edges touching it.
inline Admg surgery_remove_incoming(const Admg& g, const NodeSet& xs) {
  for (const auto& n : xs) g.directed_part().index_of(n);
  std::vector<Edge> directed;
  for (const auto& e : g.directed())
    if (!xs.count(e.second)) directed.push_back(e);
  std::vector<Edge> bidirected;
  for (const auto& e : g.bidirected())
    if (!xs.count(e.first) && !xs.count(e.second)) bidirected.push_back(e);
  return Admg(g.nodes(), directed, bidirected);
}

/// Remove all directed edges leaving each node of zs; bidirected edges stay.
inline Admg surgery_remove_outgoing(const Admg& g, const NodeSet& zs) {
  for (const auto& n : zs) g.directed_part().index_of(n);
  std::vector<Edge> directed;
  for (const auto& e : g.directed())
    if (!zs.count(e.first)) directed.push_back(e);
  return Admg(g.nodes(), directed, std::vector<Edge>(g.bidirected().begin(), g.bidirected().end()));
}

/// The members of z that are not ancestors (via directed edges) of any node
/// of w, in declaration order.
inline std::vector<NodeId> non_ancestors_in(const Admg& g, const NodeSet& z, const NodeSet& w) {
  for (const auto& n : z) g.directed_part().index_of(n);
  for (const auto& n : w) g.directed_part().index_of(n);
  NodeSet anc_w = w;
  for (const auto& n : w)
    for (const auto& a : g.ancestors(n)) anc_w.insert(a);
  std::vector<NodeId> out;
  for (const auto& n : g.nodes())
    if (z.count(n) && !anc_w.count(n)) out.push_back(n);
  return out;
}

}  // namespace causalabs

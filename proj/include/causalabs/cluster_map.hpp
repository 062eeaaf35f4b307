#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "causalabs/errors.hpp"
#include "causalabs/graph.hpp"

namespace causalabs {

// ---------------------------------------------------------------------------
// ClusterMap
// ---------------------------------------------------------------------------

/// Assignment of low-level nodes to high-level nodes. Each low node either
/// belongs to exactly one high node's cluster or is marked removed
/// (std::nullopt). Every high node must own at least one low node.
class ClusterMap {
 public:
  ClusterMap() = default;

  ClusterMap(std::vector<NodeId> low_nodes, std::vector<NodeId> high_nodes,
             std::map<NodeId, std::optional<NodeId>> assignment)
      : low_nodes_(std::move(low_nodes)),
        high_nodes_(std::move(high_nodes)),
        assignment_(std::move(assignment)) {
    NodeSet lows(low_nodes_.begin(), low_nodes_.end());
    NodeSet highs(high_nodes_.begin(), high_nodes_.end());
    if (lows.size() != low_nodes_.size()) fail(Errc::duplicate_node, "duplicate low node");
    if (highs.size() != high_nodes_.size()) fail(Errc::duplicate_node, "duplicate high node");
    if (assignment_.size() != low_nodes_.size())
      fail(Errc::invalid_cluster_map, "assignment must cover exactly the low nodes");
    NodeSet hit;
    for (const auto& [low, image] : assignment_) {
      if (!lows.count(low)) fail(Errc::invalid_cluster_map, "assignment names unknown low node '" + low + "'");
      if (image) {
        if (!highs.count(*image))
          fail(Errc::invalid_cluster_map, "assignment names unknown high node '" + *image + "'");
        hit.insert(*image);
      }
    }
    for (const auto& h : high_nodes_)
      if (!hit.count(h))
        fail(Errc::invalid_cluster_map, "high node '" + h + "' has an empty cluster");
  }

  const std::vector<NodeId>& low_nodes() const { return low_nodes_; }
  const std::vector<NodeId>& high_nodes() const { return high_nodes_; }

  /// Image of a low node: the owning high node, or nullopt when removed.
  const std::optional<NodeId>& image(const NodeId& low) const {
    auto it = assignment_.find(low);
    if (it == assignment_.end()) fail(Errc::unknown_node, "unknown low node '" + low + "'");
    return it->second;
  }

  bool is_removed(const NodeId& low) const { return !image(low).has_value(); }

  /// Members of a high node's cluster, in low declaration order.
  std::vector<NodeId> cluster(const NodeId& high) const {
    bool known = std::find(high_nodes_.begin(), high_nodes_.end(), high) != high_nodes_.end();
    if (!known) fail(Errc::unknown_node, "unknown high node '" + high + "'");
    std::vector<NodeId> out;
    for (const auto& low : low_nodes_)
      if (image(low) == high) out.push_back(low);
    return out;
  }

  /// Removed low nodes, in low declaration order.
  std::vector<NodeId> removed() const {
    std::vector<NodeId> out;
    for (const auto& low : low_nodes_)
      if (is_removed(low)) out.push_back(low);
    return out;
  }

  /// Concatenated clusters of several high nodes, each cluster in low
  /// declaration order. This fixes the member ordering used everywhere a set
  /// of high nodes is expanded to low nodes.
  std::vector<NodeId> members_of(const std::vector<NodeId>& highs) const {
    std::vector<NodeId> out;
    for (const auto& h : highs)
      for (const auto& m : cluster(h)) out.push_back(m);
    return out;
  }

 private:
  std::vector<NodeId> low_nodes_;
  std::vector<NodeId> high_nodes_;
  std::map<NodeId, std::optional<NodeId>> assignment_;
};

// ---------------------------------------------------------------------------
// validate_cluster_map
// ---------------------------------------------------------------------------

/// One step of a graphical abstraction: merging two current nodes or
/// removing one.
struct GraphOp {
  enum class Kind { merge, remove };
  Kind kind = Kind::merge;
  NodeId a;       // merge: first operand; remove: the removed node
  NodeId b;       // merge: second operand
  NodeId result;  // merge: the merged node's name
};

/// Result of validate_cluster_map. When valid, `ops` replays on the low
/// graph to `final_graph`, which matches the high graph node-for-node via
/// `high_to_final`. When invalid, `failure` explains the obstruction.
struct MapWitness {
  bool valid = false;
  ClusterMap map;
  std::vector<GraphOp> ops;
  Dag final_graph;
  std::map<NodeId, NodeId> high_to_final;
  std::string failure;
};

namespace detail {

// Search state for the witness search. Live nodes are blocks of original low
// node indices; a block is either destined for a high cluster or removed.
// Blocks are identified by their minimum member, which is stable under
// merging.
struct VBlock {
  std::vector<std::size_t> members;  // sorted low node indices
  std::size_t target = SIZE_MAX;     // high node index, SIZE_MAX = removed
};

struct VState {
  std::vector<VBlock> blocks;                        // sorted by min member
  std::set<std::pair<std::size_t, std::size_t>> edges;  // positions into blocks

  std::string key() const {
    std::string k;
    for (const auto& b : blocks) {
      k += 't' + std::to_string(b.target) + ':';
      for (auto m : b.members) k += std::to_string(m) + ',';
      k += ';';
    }
    for (const auto& e : edges) k += std::to_string(e.first) + '>' + std::to_string(e.second) + ';';
    return k;
  }
};

struct VOp {
  GraphOp::Kind kind;
  std::size_t a;  // min member of first block
  std::size_t b;  // min member of second block (merge only)
};

inline bool vstate_acyclic(const VState& s) {
  std::vector<std::size_t> indegree(s.blocks.size(), 0);
  for (const auto& e : s.edges) ++indegree[e.second];
  std::vector<bool> done(s.blocks.size(), false);
  std::size_t emitted = 0;
  bool advanced = true;
  while (advanced) {
    advanced = false;
    for (std::size_t i = 0; i < s.blocks.size(); ++i) {
      if (done[i] || indegree[i] != 0) continue;
      done[i] = true;
      ++emitted;
      advanced = true;
      for (const auto& e : s.edges)
        if (e.first == i) --indegree[e.second];
    }
  }
  return emitted == s.blocks.size();
}

inline VState vstate_merge(const VState& s, std::size_t i, std::size_t j) {
  VState out;
  std::vector<std::size_t> remap(s.blocks.size());
  for (std::size_t k = 0; k < s.blocks.size(); ++k) {
    if (k == j) continue;
    VBlock b = s.blocks[k];
    if (k == i) {
      b.members.insert(b.members.end(), s.blocks[j].members.begin(), s.blocks[j].members.end());
      std::sort(b.members.begin(), b.members.end());
    }
    out.blocks.push_back(std::move(b));
  }
  std::sort(out.blocks.begin(), out.blocks.end(),
            [](const VBlock& a, const VBlock& b) { return a.members.front() < b.members.front(); });
  auto find_pos = [&](std::size_t old) {
    // locate the new block containing the old block's first member
    std::size_t probe = s.blocks[old].members.front();
    for (std::size_t k = 0; k < out.blocks.size(); ++k)
      if (std::binary_search(out.blocks[k].members.begin(), out.blocks[k].members.end(), probe)) return k;
    return SIZE_MAX;
  };
  for (const auto& e : s.edges) {
    std::size_t u = find_pos(e.first), v = find_pos(e.second);
    if (u != v) out.edges.insert({u, v});
  }
  return out;
}

inline VState vstate_remove(const VState& s, std::size_t i) {
  VState out;
  for (std::size_t k = 0; k < s.blocks.size(); ++k)
    if (k != i) out.blocks.push_back(s.blocks[k]);
  auto newpos = [&](std::size_t old) { return old < i ? old : old - 1; };
  std::vector<std::size_t> parents, children;
  for (const auto& e : s.edges) {
    if (e.first == i && e.second != i) children.push_back(newpos(e.second));
    if (e.second == i && e.first != i) parents.push_back(newpos(e.first));
    if (e.first != i && e.second != i) out.edges.insert({newpos(e.first), newpos(e.second)});
  }
  for (auto p : parents)
    for (auto c : children)
      if (p != c) out.edges.insert({p, c});
  return out;
}

}  // namespace detail

/// Decide whether `high` is a graphical abstraction of `low` witnessed by
/// `cm`, and if so produce one admissible operation sequence. Merges are
/// allowed between members of the same cluster and between removed nodes;
/// every intermediate graph must stay acyclic and removals must not delete a
/// node that currently has two distinct children. The search interleaves
/// merges and removals: neither merge-first nor remove-first is complete on
/// its own (removing a mediator can unblock a merge, merging children can
/// unblock a removal).
inline MapWitness validate_cluster_map(const Dag& low, const Dag& high, const ClusterMap& cm) {
  NodeSet low_set(low.nodes().begin(), low.nodes().end());
  NodeSet cm_low(cm.low_nodes().begin(), cm.low_nodes().end());
  if (low_set != cm_low) fail(Errc::invalid_cluster_map, "cluster map does not cover the low graph's nodes");
  NodeSet high_set(high.nodes().begin(), high.nodes().end());
  NodeSet cm_high(cm.high_nodes().begin(), cm.high_nodes().end());
  if (high_set != cm_high) fail(Errc::invalid_cluster_map, "cluster map is not onto the high graph's nodes");

  MapWitness w;
  w.map = cm;

  const auto& lows = low.nodes();
  std::map<NodeId, std::size_t> high_idx;
  for (std::size_t i = 0; i < high.nodes().size(); ++i) high_idx[high.nodes()[i]] = i;

  // High edge set as index pairs, for pruning and the goal test.
  std::set<std::pair<std::size_t, std::size_t>> high_edges;
  for (const auto& e : high.edges()) high_edges.insert({high_idx[e.first], high_idx[e.second]});

  // Initial state: one block per low node.
  detail::VState init;
  for (std::size_t i = 0; i < lows.size(); ++i) {
    detail::VBlock b;
    b.members = {i};
    const auto& img = cm.image(lows[i]);
    b.target = img ? high_idx[*img] : SIZE_MAX;
    init.blocks.push_back(b);
  }
  for (const auto& e : low.edges())
    init.edges.insert({low.index_of(e.first), low.index_of(e.second)});

  // Every edge between blocks destined for different clusters survives to the
  // final graph, so it must already be present between the high nodes.
  auto cross_cluster_violation = [&](const detail::VState& s) -> std::optional<std::pair<std::size_t, std::size_t>> {
    for (const auto& e : s.edges) {
      std::size_t tu = s.blocks[e.first].target, tv = s.blocks[e.second].target;
      if (tu == SIZE_MAX || tv == SIZE_MAX || tu == tv) continue;
      if (!high_edges.count({tu, tv})) return std::make_pair(tu, tv);
    }
    return std::nullopt;
  };

  if (auto bad = cross_cluster_violation(init)) {
    const NodeId& x = high.nodes()[bad->first];
    const NodeId& y = high.nodes()[bad->second];
    w.failure = "a low edge between the clusters of '" + x + "' and '" + y + "' forces the high edge " + x +
                " -> " + y + ", which is absent from the high graph";
    if (high_edges.count({bad->second, bad->first}))
      w.failure += " (together with the reverse edge this would make the clustering cyclic)";
    return w;
  }

  // When nothing is removed, the reachable final edge set is exactly the
  // cluster quotient, so missing high edges can be rejected up front.
  if (cm.removed().empty()) {
    std::set<std::pair<std::size_t, std::size_t>> forced;
    for (const auto& e : init.edges) {
      std::size_t tu = init.blocks[e.first].target, tv = init.blocks[e.second].target;
      if (tu != tv) forced.insert({tu, tv});
    }
    for (const auto& e : high_edges)
      if (!forced.count(e)) {
        w.failure = "high edge " + high.nodes()[e.first] + " -> " + high.nodes()[e.second] +
                    " has no counterpart between the clusters in the low graph";
        return w;
      }
  }

  auto is_goal = [&](const detail::VState& s) {
    if (s.blocks.size() != high.nodes().size()) return false;
    std::set<std::pair<std::size_t, std::size_t>> got;
    for (const auto& b : s.blocks)
      if (b.target == SIZE_MAX) return false;
    for (const auto& e : s.edges) got.insert({s.blocks[e.first].target, s.blocks[e.second].target});
    return got == high_edges;
  };

  // Depth-first search over states, memoizing states already shown fruitless.
  std::unordered_set<std::string> dead;
  std::vector<detail::VOp> plan;
  constexpr std::size_t kStateCap = 200000;
  bool capped = false;

  std::function<bool(const detail::VState&)> dfs = [&](const detail::VState& s) -> bool {
    if (is_goal(s)) return true;
    if (dead.size() > kStateCap) {
      capped = true;
      return false;
    }
    std::string k = s.key();
    if (dead.count(k)) return false;
    dead.insert(k);

    auto try_op = [&](const detail::VState& next, detail::VOp op) {
      if (cross_cluster_violation(next)) return false;
      plan.push_back(op);
      if (dfs(next)) return true;
      plan.pop_back();
      return false;
    };

    // Removals of currently deletable removed blocks.
    for (std::size_t i = 0; i < s.blocks.size(); ++i) {
      if (s.blocks[i].target != SIZE_MAX) continue;
      std::set<std::size_t> ch;
      for (const auto& e : s.edges)
        if (e.first == i) ch.insert(e.second);
      if (ch.size() >= 2) continue;
      if (try_op(detail::vstate_remove(s, i),
                 {GraphOp::Kind::remove, s.blocks[i].members.front(), SIZE_MAX}))
        return true;
    }
    // Merges within a cluster, then merges of removed blocks.
    for (int removed_pass = 0; removed_pass < 2; ++removed_pass) {
      for (std::size_t i = 0; i < s.blocks.size(); ++i) {
        for (std::size_t j = i + 1; j < s.blocks.size(); ++j) {
          bool both_removed = s.blocks[i].target == SIZE_MAX && s.blocks[j].target == SIZE_MAX;
          bool same_cluster = !both_removed && s.blocks[i].target == s.blocks[j].target &&
                              s.blocks[i].target != SIZE_MAX;
          if (removed_pass == 0 ? !same_cluster : !both_removed) continue;
          detail::VState next = detail::vstate_merge(s, i, j);
          if (!detail::vstate_acyclic(next)) continue;
          if (try_op(next, {GraphOp::Kind::merge, s.blocks[i].members.front(),
                            s.blocks[j].members.front()}))
            return true;
        }
      }
    }
    return false;
  };

  if (!dfs(init)) {
    if (capped) fail(Errc::size_limit, "cluster map witness search exceeded the state budget");
    // Diagnose the usual obstruction: a removed node that stays a confounder.
    std::vector<NodeId> blocked;
    for (const auto& r : cm.removed()) {
      std::set<std::optional<NodeId>> child_targets;
      for (const auto& c : low.children(r)) child_targets.insert(cm.image(c));
      if (child_targets.size() >= 2) blocked.push_back(r);
    }
    if (!blocked.empty()) {
      w.failure = "removed node '" + blocked.front() +
                  "' is a confounder: its children end up in distinct nodes, so no removal order deletes it";
    } else {
      w.failure = "no admissible sequence of merges and removals turns the low graph into the high graph";
    }
    return w;
  }

  // Replay the plan with concrete names to produce the witness operations.
  struct Live {
    NodeId name;
    std::vector<std::size_t> members;
    std::size_t target;
  };
  std::map<std::size_t, Live> live;  // keyed by min member
  for (std::size_t i = 0; i < lows.size(); ++i) {
    const auto& img = cm.image(lows[i]);
    live[i] = Live{lows[i], {i}, img ? high_idx[*img] : SIZE_MAX};
  }
  std::map<std::size_t, std::size_t> cluster_size;
  for (const auto& h : high.nodes()) cluster_size[high_idx[h]] = cm.cluster(h).size();

  Dag cur = low;
  auto unique_name = [&](NodeId base) {
    auto taken = [&](const NodeId& n) {
      for (const auto& [k, b] : live)
        if (b.name == n) return true;
      return false;
    };
    while (base.empty() || taken(base)) base += "'";
    return base;
  };

  for (const auto& op : plan) {
    if (op.kind == GraphOp::Kind::remove) {
      Live b = live.at(op.a);
      live.erase(op.a);
      w.ops.push_back({GraphOp::Kind::remove, b.name, "", b.name});
      cur = delete_node(cur, b.name);
    } else {
      Live a = live.at(op.a);
      Live b = live.at(op.b);
      live.erase(op.a);
      live.erase(op.b);
      Live merged;
      merged.members = a.members;
      merged.members.insert(merged.members.end(), b.members.begin(), b.members.end());
      std::sort(merged.members.begin(), merged.members.end());
      merged.target = a.target;
      NodeId base;
      if (merged.target != SIZE_MAX && merged.members.size() == cluster_size[merged.target]) {
        base = high.nodes()[merged.target];
      } else {
        for (auto m : merged.members) base += (base.empty() ? "" : "+") + lows[m];
      }
      merged.name = unique_name(base);
      w.ops.push_back({GraphOp::Kind::merge, a.name, b.name, merged.name});
      cur = merge_nodes(cur, a.name, b.name, merged.name);
      live[merged.members.front()] = merged;
    }
  }

  w.valid = true;
  w.final_graph = cur;
  for (const auto& [k, b] : live) w.high_to_final[high.nodes()[b.target]] = b.name;
  return w;
}

}  // namespace causalabs

#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "causalabs/abstraction.hpp"
#include "causalabs/cluster_map.hpp"
#include "causalabs/engine.hpp"
#include "causalabs/errors.hpp"
#include "causalabs/graph.hpp"

namespace causalabs {

/// Largest joint domain of a node set's cluster members accepted by the
/// low-level verifiers.
inline constexpr std::size_t kMaxClusterJointSize = 64;

/// One of the three interventional rewrite rules, instantiated on four
/// disjoint high node sets. y and z must be nonempty; x and w may be empty.
struct RuleQuery {
  int rule = 1;  // 1: drop an observation, 2: exchange action and
                 // observation, 3: drop an action
  std::vector<NodeId> x, y, z, w;
};

struct RuleDecision {
  int rule = 0;
  bool applicable = false;
  std::string statement;  // the separation test that decided it
};

namespace detail {

inline std::string render_set(const std::vector<NodeId>& xs) {
  std::string out = "{";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += xs[i];
  }
  return out + "}";
}

inline void require_rule_query(const Admg& g, const RuleQuery& q) {
  if (q.rule < 1 || q.rule > 3) fail(Errc::invalid_query, "rule must be 1, 2, or 3");
  if (q.y.empty() || q.z.empty()) fail(Errc::invalid_query, "the y and z sets must be nonempty");
  std::set<NodeId> seen;
  for (const auto* set : {&q.x, &q.y, &q.z, &q.w})
    for (const auto& n : *set) {
      if (!g.has_node(n)) fail(Errc::unknown_node, "unknown node '" + n + "'");
      if (!seen.insert(n).second) fail(Errc::invalid_query, "node '" + n + "' appears twice in the query");
    }
}

inline NodeSet union_of(const std::vector<NodeId>& a, const std::vector<NodeId>& b) {
  NodeSet out(a.begin(), a.end());
  out.insert(b.begin(), b.end());
  return out;
}

}  // namespace detail

/// Decide whether a rewrite rule applies in the given high-level graph, by
/// running the matching separation test in the matching surgered graph.
inline RuleDecision rule_applicable(const Admg& high, const RuleQuery& q) {
  detail::require_rule_query(high, q);
  NodeSet x(q.x.begin(), q.x.end()), y(q.y.begin(), q.y.end()), z(q.z.begin(), q.z.end());
  NodeSet given = detail::union_of(q.x, q.w);

  RuleDecision d;
  d.rule = q.rule;
  std::string ind = "(" + detail::render_set(q.y) + " _||_ " + detail::render_set(q.z) + " | " +
                    detail::render_set(q.x) + " u " + detail::render_set(q.w) + ")";
  if (q.rule == 1) {
    Admg g1 = surgery_remove_incoming(high, x);
    d.applicable = d_separated(g1, y, z, given);
    d.statement = ind + " after cutting edges into " + detail::render_set(q.x);
  } else if (q.rule == 2) {
    Admg g2 = surgery_remove_outgoing(surgery_remove_incoming(high, x), z);
    d.applicable = d_separated(g2, y, z, given);
    d.statement = ind + " after cutting edges into " + detail::render_set(q.x) + " and out of " +
                  detail::render_set(q.z);
  } else {
    Admg g1 = surgery_remove_incoming(high, x);
    std::vector<NodeId> zw = non_ancestors_in(g1, z, NodeSet(q.w.begin(), q.w.end()));
    Admg g3 = surgery_remove_incoming(g1, NodeSet(zw.begin(), zw.end()));
    d.applicable = d_separated(g3, y, z, given);
    d.statement = ind + " after cutting edges into " + detail::render_set(q.x) + " and into " +
                  detail::render_set(zw);
  }
  return d;
}

/// Extend a cluster map over the observed nodes to one over all low nodes,
/// keeping each latent as its own singleton cluster named after itself.
inline ClusterMap full_cluster_map(const CausalModel& low, const ClusterMap& cm) {
  NodeSet covered(cm.low_nodes().begin(), cm.low_nodes().end());
  for (const auto& l : low.latents)
    if (covered.count(l))
      fail(Errc::invalid_cluster_map, "latent node '" + l + "' must not appear in the cluster map");
  NodeSet observed;
  for (const auto& n : low.graph.nodes())
    if (!low.latents.count(n)) observed.insert(n);
  if (covered != observed)
    fail(Errc::invalid_cluster_map, "cluster map must cover exactly the observed low nodes");

  std::vector<NodeId> highs = cm.high_nodes();
  std::map<NodeId, std::optional<NodeId>> assignment;
  for (const auto& n : cm.low_nodes()) assignment[n] = cm.image(n);
  for (const auto& n : low.graph.nodes())
    if (low.latents.count(n)) {
      highs.push_back(n);
      assignment[n] = n;
    }
  return ClusterMap(low.graph.nodes(), highs, assignment);
}

/// Build the high-level graph over clusters of observed nodes: cluster the
/// low graph (latents staying as singletons), check the clustering is
/// reachable by merges and deletions, then project the latent singletons
/// away into bidirected edges.
inline Admg high_admg_from_cluster_map(const CausalModel& low, const ClusterMap& cm) {
  ClusterMap cm_full = full_cluster_map(low, cm);
  Dag clustered = clustered_graph(low.graph, cm_full);
  MapWitness w = validate_cluster_map(low.graph, clustered, cm_full);
  if (!w.valid) fail(Errc::invalid_cluster_map, w.failure);
  NodeSet keep(cm.high_nodes().begin(), cm.high_nodes().end());
  return latent_projection(clustered, keep);
}

namespace detail {

/// Conditional p(y | rest) tables carved out of one row of an interventional
/// kernel whose outputs are ordered [y-block, rest-block]. Returns false
/// when the conditioning mass is below tolerance.
inline bool conditional_slice(const Kernel& k, std::size_t row, std::size_t ny, std::size_t rest_index,
                              std::size_t nrest, std::vector<double>& out) {
  double mass = 0.0;
  for (std::size_t yi = 0; yi < ny; ++yi) mass += k.at(row, yi * nrest + rest_index);
  if (mass <= kValidityTol) return false;
  out.assign(ny, 0.0);
  for (std::size_t yi = 0; yi < ny; ++yi) out[yi] = k.at(row, yi * nrest + rest_index) / mass;
  return true;
}

}  // namespace detail

/// Check one rewrite rule numerically against the low model, reading the
/// high sets as clusters: both sides of the rule's equation are computed as
/// low-level conditional interventional distributions over the cluster
/// members and compared pointwise. Assignments whose conditioning event has
/// no mass on either side are skipped and counted; if every assignment is
/// skipped the comparison is vacuous and an error is raised.
inline AbstractionReport verify_rule_on_low(const CausalModel& low, const ClusterMap& cm,
                                            const RuleQuery& q, double tol = kSemanticTol) {
  validate_model(low);
  if (q.rule < 1 || q.rule > 3) fail(Errc::invalid_query, "rule must be 1, 2, or 3");
  if (q.y.empty() || q.z.empty()) fail(Errc::invalid_query, "the y and z sets must be nonempty");
  std::set<NodeId> seen;
  NodeSet highs(cm.high_nodes().begin(), cm.high_nodes().end());
  for (const auto* set : {&q.x, &q.y, &q.z, &q.w})
    for (const auto& n : *set) {
      if (!highs.count(n)) fail(Errc::unknown_node, "unknown high node '" + n + "'");
      if (!seen.insert(n).second) fail(Errc::invalid_query, "node '" + n + "' appears twice in the query");
    }

  std::vector<NodeId> xm = cm.members_of(q.x), ym = cm.members_of(q.y), zm = cm.members_of(q.z),
                      wm = cm.members_of(q.w);
  auto vars_of_members = [&](const std::vector<NodeId>& ms) {
    std::vector<Var> vs;
    for (const auto& m : ms) vs.push_back(low.var_of(m));
    return vs;
  };
  std::vector<Var> xv = vars_of_members(xm), yv = vars_of_members(ym), zv = vars_of_members(zm),
                   wv = vars_of_members(wm);
  std::size_t nx = joint_size(xv), ny = joint_size(yv), nz = joint_size(zv), nw = joint_size(wv);
  for (std::size_t s : {nx, ny, nz, nw})
    if (s > kMaxClusterJointSize)
      fail(Errc::size_limit, "a cluster set's joint domain exceeds " + std::to_string(kMaxClusterJointSize) +
                                 " values");

  auto concat = [](std::vector<NodeId> a, const std::vector<NodeId>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };

  AbstractionReport report;
  report.tolerance = tol;
  CheckEntry entry;
  entry.label = "do" + detail::render_set(q.x) + (q.rule == 1 ? " obs" : " do") + detail::render_set(q.z) +
                " -> " + detail::render_set(q.y) + " | " + detail::render_set(q.w);
  std::size_t compared = 0;

  auto compare = [&](const std::vector<double>& lhs, const std::vector<double>& rhs, std::size_t xi,
                     std::size_t zi, std::size_t wi) {
    double worst = 0.0;
    for (std::size_t yi = 0; yi < ny; ++yi) worst = std::max(worst, std::abs(lhs[yi] - rhs[yi]));
    entry.residual = std::max(entry.residual, worst);
    ++compared;
    if (worst > tol)
      entry.witnesses.push_back("x=" + detail::render_assignment(xv, unrank(xv, xi)) +
                                " z=" + detail::render_assignment(zv, unrank(zv, zi)) +
                                " w=" + detail::render_assignment(wv, unrank(wv, wi)));
  };

  std::vector<double> lhs, rhs;
  if (q.rule == 1) {
    report.check = "rule1_low";
    // p(y | do(x), z, w) against p(y | do(x), w)
    Kernel k = interventional(low, xm, concat(concat(ym, zm), wm));
    Kernel k_marg = interventional(low, xm, concat(ym, wm));
    for (std::size_t xi = 0; xi < nx; ++xi)
      for (std::size_t zi = 0; zi < nz; ++zi)
        for (std::size_t wi = 0; wi < nw; ++wi) {
          bool has_lhs = detail::conditional_slice(k, xi, ny, zi * nw + wi, nz * nw, lhs);
          bool has_rhs = detail::conditional_slice(k_marg, xi, ny, wi, nw, rhs);
          if (!has_lhs || !has_rhs) {
            ++entry.skipped;
            continue;
          }
          compare(lhs, rhs, xi, zi, wi);
        }
  } else if (q.rule == 2) {
    report.check = "rule2_low";
    // p(y | do(x), do(z), w) against p(y | do(x), z, w)
    Kernel k_do = interventional(low, concat(xm, zm), concat(ym, wm));
    Kernel k_obs = interventional(low, xm, concat(concat(ym, zm), wm));
    for (std::size_t xi = 0; xi < nx; ++xi)
      for (std::size_t zi = 0; zi < nz; ++zi)
        for (std::size_t wi = 0; wi < nw; ++wi) {
          bool has_lhs = detail::conditional_slice(k_do, xi * nz + zi, ny, wi, nw, lhs);
          bool has_rhs = detail::conditional_slice(k_obs, xi, ny, zi * nw + wi, nz * nw, rhs);
          if (!has_lhs || !has_rhs) {
            ++entry.skipped;
            continue;
          }
          compare(lhs, rhs, xi, zi, wi);
        }
  } else {
    report.check = "rule3_low";
    // p(y | do(x), do(z), w) against p(y | do(x), w)
    Kernel k_do = interventional(low, concat(xm, zm), concat(ym, wm));
    Kernel k_base = interventional(low, xm, concat(ym, wm));
    for (std::size_t xi = 0; xi < nx; ++xi)
      for (std::size_t zi = 0; zi < nz; ++zi)
        for (std::size_t wi = 0; wi < nw; ++wi) {
          bool has_lhs = detail::conditional_slice(k_do, xi * nz + zi, ny, wi, nw, lhs);
          bool has_rhs = detail::conditional_slice(k_base, xi, ny, wi, nw, rhs);
          if (!has_lhs || !has_rhs) {
            ++entry.skipped;
            continue;
          }
          compare(lhs, rhs, xi, zi, wi);
        }
  }

  if (compared == 0)
    fail(Errc::inconclusive_all_zero_mass, "every assignment had zero conditioning mass; nothing compared");
  report.add(std::move(entry));
  return report;
}

/// Build the clustered model over the clustered graph: each cluster becomes
/// one node whose domain is the product of its members' domains (labels
/// joined with commas) and whose mechanism is the low interventional kernel
/// from the parent clusters' members to its own members. Latents stay
/// latent singleton clusters.
inline CausalModel clustered_model(const CausalModel& low, const ClusterMap& cm) {
  validate_model(low);
  ClusterMap cm_full = full_cluster_map(low, cm);
  Dag hgraph = clustered_graph(low.graph, cm_full);

  CausalModel out;
  out.graph = hgraph;
  for (const auto& l : low.latents) out.latents.insert(l);

  auto product_var = [&](const NodeId& cluster) {
    std::vector<Var> members;
    for (const auto& m : cm_full.cluster(cluster)) members.push_back(low.var_of(m));
    Domain d;
    std::size_t n = joint_size(members);
    if (n > kMaxClusterJointSize)
      fail(Errc::size_limit, "cluster '" + cluster + "' has a joint domain over " +
                                 std::to_string(kMaxClusterJointSize) + " values");
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> digits = unrank(members, i);
      std::string label;
      for (std::size_t j = 0; j < members.size(); ++j) {
        if (j) label += ",";
        label += members[j].domain.values[digits[j]];
      }
      d.values.push_back(label);
    }
    return Var{cluster, d};
  };

  for (const auto& c : hgraph.nodes()) out.domains[c] = product_var(c).domain;
  for (const auto& c : hgraph.nodes()) {
    std::vector<NodeId> pa = hgraph.parents(c);
    Kernel mech = interventional(low, cm_full.members_of(pa), cm_full.cluster(c));
    // The flat index over concatenated member variables coincides with the
    // flat index over the product domains, so the table carries over.
    Kernel shaped;
    for (const auto& p : pa) shaped.inputs.push_back(Var{p, out.domains.at(p)});
    shaped.outputs = {Var{c, out.domains.at(c)}};
    shaped.table = std::move(mech.table);
    out.mechanisms[c] = std::move(shaped);
  }
  return out;
}

/// Verify that the clustered model reproduces the low model's behavior: the
/// observational distribution and every single-cluster interventional
/// kernel between observed clusters must match the low-level quantities
/// computed over the corresponding members.
inline AbstractionReport check_clustered_factorization(const CausalModel& low, const ClusterMap& cm,
                                                       double tol = kSemanticTol) {
  CausalModel clustered = clustered_model(low, cm);
  AbstractionReport report;
  report.check = "clustered_factorization";
  report.tolerance = tol;

  std::vector<NodeId> obs_clusters = cm.high_nodes();

  {
    CheckEntry entry;
    entry.label = "observational";
    Kernel high_k = interventional(clustered, {}, obs_clusters);
    Kernel low_k = interventional(low, {}, cm.members_of(obs_clusters));
    entry.residual = max_abs_diff(high_k.table, low_k.table);
    report.add(std::move(entry));
  }

  for (const auto& c : obs_clusters) {
    std::vector<NodeId> rest;
    for (const auto& d : obs_clusters)
      if (d != c) rest.push_back(d);
    if (rest.empty()) continue;
    CheckEntry entry;
    entry.label = "do(" + c + ")";
    Kernel high_k = interventional(clustered, {c}, rest);
    Kernel low_k = interventional(low, cm.members_of({c}), cm.members_of(rest));
    entry.residual = max_abs_diff(high_k.table, low_k.table);
    report.add(std::move(entry));
  }
  return report;
}

}  // namespace causalabs

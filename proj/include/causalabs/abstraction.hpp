#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "causalabs/cluster_map.hpp"
#include "causalabs/engine.hpp"
#include "causalabs/errors.hpp"
#include "causalabs/graph.hpp"
#include "causalabs/query.hpp"

namespace causalabs {

/// One deterministic surjective component per high node, mapping the joint
/// domain of the node's cluster members to the high node's domain.
using TauFamily = std::map<NodeId, TotalMap>;

/// One stochastic component per high node, mapping each high value to a
/// distribution over the cluster members' joint domain.
using EpsilonFamily = std::map<NodeId, Kernel>;

/// Per-target outcome of a verification pass.
struct CheckEntry {
  std::string label;
  double residual = 0.0;
  std::size_t skipped = 0;                // zero-mass assignments skipped
  std::vector<std::string> witnesses;     // violating assignments
};

/// Outcome of one abstraction check: per-entry residuals, an overall
/// verdict, and the tolerance the verdict used. pass holds exactly when
/// every residual is within tolerance.
struct AbstractionReport {
  std::string check;
  double tolerance = kSemanticTol;
  std::vector<CheckEntry> entries;
  double max_residual = 0.0;
  std::size_t skipped_total = 0;
  bool pass = true;

  void add(CheckEntry e) {
    max_residual = std::max(max_residual, e.residual);
    skipped_total += e.skipped;
    if (e.residual > tolerance) pass = false;
    entries.push_back(std::move(e));
  }
};

namespace detail {

inline std::string render_assignment(const std::vector<Var>& vars, const std::vector<std::size_t>& digits) {
  std::string out;
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (i) out += ",";
    out += vars[i].id + "=" + vars[i].domain.values[digits[i]];
  }
  return out;
}

inline std::string join_ids(const std::vector<NodeId>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ",";
    out += ids[i];
  }
  return out;
}

/// Member variables of one high node's cluster, in low declaration order.
inline std::vector<Var> cluster_vars(const CausalModel& low, const ClusterMap& cm, const NodeId& high) {
  std::vector<Var> out;
  for (const auto& m : cm.cluster(high)) out.push_back(low.var_of(m));
  return out;
}

/// Fetch and structurally check the tau component of one high node.
inline const TotalMap& tau_component(const CausalModel& low, const CausalModel& high, const ClusterMap& cm,
                                     const TauFamily& tau, const NodeId& node) {
  auto it = tau.find(node);
  if (it == tau.end()) fail(Errc::shape_mismatch, "no tau component for high node '" + node + "'");
  const TotalMap& f = it->second;
  f.validate();
  std::vector<Var> members = cluster_vars(low, cm, node);
  if (f.inputs != members)
    fail(Errc::shape_mismatch, "tau component of '" + node + "' does not take the cluster members " +
                                   join_ids(cm.cluster(node)) + " with their low domains");
  if (f.output.id != node || !(f.output.domain == high.domain_of(node)))
    fail(Errc::shape_mismatch, "tau component of '" + node + "' does not map into the high domain");
  if (!f.is_surjective())
    fail(Errc::not_surjective, "tau component of '" + node + "' misses a high value");
  return f;
}

/// Fetch and structurally check the epsilon component of one high node.
inline const Kernel& eps_component(const CausalModel& low, const CausalModel& high, const ClusterMap& cm,
                                   const EpsilonFamily& eps, const NodeId& node) {
  auto it = eps.find(node);
  if (it == eps.end()) fail(Errc::shape_mismatch, "no epsilon component for high node '" + node + "'");
  const Kernel& k = it->second;
  std::vector<Var> expect_in{Var{node, high.domain_of(node)}};
  if (k.inputs != expect_in)
    fail(Errc::shape_mismatch, "epsilon component of '" + node + "' must take the high node's domain");
  if (k.outputs != cluster_vars(low, cm, node))
    fail(Errc::shape_mismatch, "epsilon component of '" + node + "' must produce the cluster members of '" +
                                   node + "'");
  k.validate();
  return k;
}

/// Validate the (low, high, cm) triple and return the cluster map witness.
inline MapWitness require_valid_map(const CausalModel& low, const CausalModel& high, const ClusterMap& cm) {
  validate_model(low);
  validate_model(high);
  MapWitness w = validate_cluster_map(low.graph, high.graph, cm);
  if (!w.valid) fail(Errc::invalid_cluster_map, w.failure);
  return w;
}

/// Apply tau componentwise to a flat assignment of the concatenated cluster
/// members of `highs`, producing the flat index over the high variables.
inline std::size_t apply_tau_blocked(const std::vector<const TotalMap*>& taus,
                                     const std::vector<std::vector<Var>>& member_vars,
                                     const std::vector<Var>& flat_members, std::size_t flat_index) {
  std::vector<std::size_t> digits = unrank(flat_members, flat_index);
  std::size_t high_index = 0;
  std::size_t offset = 0;
  for (std::size_t b = 0; b < taus.size(); ++b) {
    std::vector<std::size_t> sub(digits.begin() + offset, digits.begin() + offset + member_vars[b].size());
    offset += member_vars[b].size();
    std::size_t member_index = rank(member_vars[b], sub);
    std::size_t high_digit = taus[b]->table[member_index];
    high_index = high_index * taus[b]->output.domain.size() + high_digit;
  }
  return high_index;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Naturality (cause-focused abstraction)
// ---------------------------------------------------------------------------

/// Verify the commuting square of every high mechanism: pushing the low
/// interventional kernel from the parent clusters to the node's cluster
/// through tau must match applying tau to the parents and then the high
/// mechanism. Models and the cluster map are validated first.
inline AbstractionReport check_naturality(const CausalModel& low, const CausalModel& high,
                                          const ClusterMap& cm, const TauFamily& tau,
                                          double tol = kSemanticTol) {
  detail::require_valid_map(low, high, cm);
  AbstractionReport report;
  report.check = "naturality";
  report.tolerance = tol;

  for (const auto& node : high.graph.nodes()) {
    const TotalMap& tau_a = detail::tau_component(low, high, cm, tau, node);
    std::vector<NodeId> pa = high.graph.parents(node);
    std::vector<const TotalMap*> pa_taus;
    std::vector<std::vector<Var>> pa_member_vars;
    for (const auto& p : pa) {
      pa_taus.push_back(&detail::tau_component(low, high, cm, tau, p));
      pa_member_vars.push_back(detail::cluster_vars(low, cm, p));
    }
    std::vector<NodeId> pa_members = cm.members_of(pa);
    std::vector<NodeId> a_members = cm.cluster(node);

    Kernel k_low = interventional(low, pa_members, a_members);
    const Kernel& k_high = high.mechanism_of(node);
    std::size_t high_cols = high.domain_of(node).size();

    CheckEntry entry;
    entry.label = node;
    for (std::size_t r = 0; r < k_low.n_rows(); ++r) {
      std::vector<double> pushed(high_cols, 0.0);
      for (std::size_t c = 0; c < k_low.n_cols(); ++c) pushed[tau_a.table[c]] += k_low.at(r, c);
      std::size_t high_row = detail::apply_tau_blocked(pa_taus, pa_member_vars, k_low.inputs, r);
      double worst = 0.0;
      for (std::size_t c = 0; c < high_cols; ++c)
        worst = std::max(worst, std::abs(pushed[c] - k_high.at(high_row, c)));
      entry.residual = std::max(entry.residual, worst);
      if (worst > tol)
        entry.witnesses.push_back("do(" + detail::render_assignment(k_low.inputs, unrank(k_low.inputs, r)) +
                                  ")");
    }
    report.add(std::move(entry));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Interventional consistency
// ---------------------------------------------------------------------------

enum class ConsistencyScope {
  node_pairs,        // ordered pairs of distinct single high nodes
  all_subset_pairs,  // all disjoint (do, outcome) subset pairs
};

/// Compare low-level interventional distributions pushed through tau against
/// the high model's, over the requested family of query signatures and every
/// low-level assignment of the intervened clusters.
inline AbstractionReport check_interventional_consistency(const CausalModel& low, const CausalModel& high,
                                                          const ClusterMap& cm, const TauFamily& tau,
                                                          ConsistencyScope scope,
                                                          double tol = kSemanticTol) {
  detail::require_valid_map(low, high, cm);
  AbstractionReport report;
  report.check = scope == ConsistencyScope::node_pairs ? "consistency(nodes)" : "consistency(subsets)";
  report.tolerance = tol;

  std::vector<Query> queries;
  if (scope == ConsistencyScope::node_pairs) {
    for (const auto& a : high.graph.nodes())
      for (const auto& b : high.graph.nodes())
        if (a != b) queries.push_back(Query{{a}, {b}});
  } else {
    for (auto& q : enumerate_queries(high.graph))
      if (!q.outcome_set.empty()) queries.push_back(std::move(q));
  }

  for (const auto& q : queries) {
    std::vector<const TotalMap*> do_taus, out_taus;
    std::vector<std::vector<Var>> do_member_vars, out_member_vars;
    for (const auto& n : q.do_set) {
      do_taus.push_back(&detail::tau_component(low, high, cm, tau, n));
      do_member_vars.push_back(detail::cluster_vars(low, cm, n));
    }
    std::vector<Var> out_high_vars;
    for (const auto& n : q.outcome_set) {
      out_taus.push_back(&detail::tau_component(low, high, cm, tau, n));
      out_member_vars.push_back(detail::cluster_vars(low, cm, n));
      out_high_vars.push_back(high.var_of(n));
    }

    Kernel k_low = interventional(low, cm.members_of(q.do_set), cm.members_of(q.outcome_set));
    Kernel k_high = interventional(high, q.do_set, q.outcome_set);
    std::size_t high_cols = joint_size(out_high_vars);

    CheckEntry entry;
    entry.label = "do(" + detail::join_ids(q.do_set) + ")->(" + detail::join_ids(q.outcome_set) + ")";
    for (std::size_t r = 0; r < k_low.n_rows(); ++r) {
      std::vector<double> pushed(high_cols, 0.0);
      for (std::size_t c = 0; c < k_low.n_cols(); ++c)
        pushed[detail::apply_tau_blocked(out_taus, out_member_vars, k_low.outputs, c)] += k_low.at(r, c);
      std::size_t high_row = detail::apply_tau_blocked(do_taus, do_member_vars, k_low.inputs, r);
      double worst = 0.0;
      for (std::size_t c = 0; c < high_cols; ++c)
        worst = std::max(worst, std::abs(pushed[c] - k_high.at(high_row, c)));
      entry.residual = std::max(entry.residual, worst);
      if (worst > tol)
        entry.witnesses.push_back("do(" + detail::render_assignment(k_low.inputs, unrank(k_low.inputs, r)) +
                                  ")");
    }
    report.add(std::move(entry));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Epsilon construction and right-inverse check
// ---------------------------------------------------------------------------

/// Build the canonical stochastic right inverse of tau: epsilon(a | a~) is
/// the observational probability of the member assignment a within its
/// fiber. Throws zero_cluster_mass when some fiber has no observational
/// mass.
inline EpsilonFamily epsilon_from_tau(const CausalModel& low, const ClusterMap& cm, const TauFamily& tau) {
  validate_model(low);
  Distribution obs = joint(low);
  EpsilonFamily eps;
  for (const auto& node : cm.high_nodes()) {
    auto it = tau.find(node);
    if (it == tau.end()) fail(Errc::shape_mismatch, "no tau component for high node '" + node + "'");
    const TotalMap& f = it->second;
    f.validate();
    std::vector<Var> members = detail::cluster_vars(low, cm, node);
    if (f.inputs != members)
      fail(Errc::shape_mismatch, "tau component of '" + node + "' does not take the cluster members");

    NodeSet member_ids;
    for (const auto& v : members) member_ids.insert(v.id);
    Distribution marg = marginalize(obs, member_ids);

    std::size_t high_size = f.output.domain.size();
    std::vector<double> fiber_mass(high_size, 0.0);
    for (std::size_t a = 0; a < marg.probs.size(); ++a) fiber_mass[f.table[a]] += marg.probs[a];

    Kernel k;
    k.inputs = {f.output};
    k.outputs = members;
    k.table.assign(high_size * marg.probs.size(), 0.0);
    for (std::size_t v = 0; v < high_size; ++v) {
      if (fiber_mass[v] <= kValidityTol)
        fail(Errc::zero_cluster_mass, "cluster of '" + node + "' has zero mass on value '" +
                                          f.output.domain.values[v] + "'");
      for (std::size_t a = 0; a < marg.probs.size(); ++a)
        if (f.table[a] == v) k.at(v, a) = marg.probs[a] / fiber_mass[v];
    }
    eps[node] = std::move(k);
  }
  return eps;
}

/// Verify that tau composed after epsilon is the identity on every high
/// node's domain, within 1e-12.
inline AbstractionReport check_right_inverse(const TauFamily& tau, const EpsilonFamily& eps,
                                             double tol = kValidityTol) {
  AbstractionReport report;
  report.check = "right_inverse";
  report.tolerance = tol;
  for (const auto& [node, f] : tau) {
    auto it = eps.find(node);
    if (it == eps.end()) fail(Errc::shape_mismatch, "no epsilon component for high node '" + node + "'");
    const Kernel& e = it->second;
    f.validate();
    e.validate();
    if (e.outputs != f.inputs)
      fail(Errc::shape_mismatch, "epsilon and tau components of '" + node + "' disagree on the cluster");
    if (e.inputs.size() != 1 || !(e.inputs[0].domain == f.output.domain))
      fail(Errc::shape_mismatch, "epsilon component of '" + node + "' does not range over the high domain");

    std::size_t h = f.output.domain.size();
    CheckEntry entry;
    entry.label = node;
    for (std::size_t v = 0; v < h; ++v) {
      std::vector<double> composed(h, 0.0);
      for (std::size_t a = 0; a < e.n_cols(); ++a) composed[f.table[a]] += e.at(v, a);
      double worst = 0.0;
      for (std::size_t u = 0; u < h; ++u)
        worst = std::max(worst, std::abs(composed[u] - (u == v ? 1.0 : 0.0)));
      entry.residual = std::max(entry.residual, worst);
      if (worst > tol) entry.witnesses.push_back(node + "=" + f.output.domain.values[v]);
    }
    report.add(std::move(entry));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Effect-focused abstraction
// ---------------------------------------------------------------------------

/// Verify an effect-focused abstraction: every epsilon component must admit
/// a deterministic left inverse (pairwise disjoint row supports), the
/// reversed mechanism squares must commute, the observational marginals must
/// transport (p_low(cluster A) equals epsilon applied to p_high(A)), and on
/// positive-mass fibers epsilon must match the conditional observational
/// distribution.
inline AbstractionReport check_effect_focused(const CausalModel& low, const CausalModel& high,
                                              const ClusterMap& cm, const EpsilonFamily& eps,
                                              double tol = kSemanticTol) {
  detail::require_valid_map(low, high, cm);
  AbstractionReport report;
  report.check = "effect_focused";
  report.tolerance = tol;

  Distribution obs = joint(low);

  for (const auto& node : high.graph.nodes()) {
    const Kernel& e = detail::eps_component(low, high, cm, eps, node);
    std::size_t h = e.n_rows(), cols = e.n_cols();

    // Deterministic left inverse exists iff the row supports are disjoint.
    for (std::size_t a = 0; a < cols; ++a) {
      std::size_t owners = 0;
      for (std::size_t v = 0; v < h; ++v)
        if (e.at(v, a) > kValidityTol) ++owners;
      if (owners > 1)
        fail(Errc::no_left_inverse, "epsilon component of '" + node +
                                        "' puts mass on the same member assignment from two high values");
    }
  }

  for (const auto& node : high.graph.nodes()) {
    const Kernel& e_a = detail::eps_component(low, high, cm, eps, node);
    std::vector<NodeId> pa = high.graph.parents(node);
    std::vector<const Kernel*> pa_eps;
    std::vector<std::vector<Var>> pa_member_vars;
    std::vector<Var> pa_high_vars;
    for (const auto& p : pa) {
      pa_eps.push_back(&detail::eps_component(low, high, cm, eps, p));
      pa_member_vars.push_back(detail::cluster_vars(low, cm, p));
      pa_high_vars.push_back(high.var_of(p));
    }
    std::vector<NodeId> pa_members = cm.members_of(pa);
    std::vector<NodeId> a_members = cm.cluster(node);

    Kernel k_low = interventional(low, pa_members, a_members);
    const Kernel& k_high = high.mechanism_of(node);
    std::size_t low_rows = k_low.n_rows(), low_cols = k_low.n_cols();

    // Reversed square: epsilon on the parents then the low kernel, against
    // the high mechanism then epsilon on the node.
    CheckEntry square;
    square.label = "square(" + node + ")";
    for (std::size_t hb = 0; hb < k_high.n_rows(); ++hb) {
      std::vector<std::size_t> hb_digits = unrank(pa_high_vars, hb);
      std::vector<double> lhs(low_cols, 0.0);
      for (std::size_t b = 0; b < low_rows; ++b) {
        std::vector<std::size_t> digits = unrank(k_low.inputs, b);
        double w = 1.0;
        std::size_t offset = 0;
        for (std::size_t p = 0; p < pa.size(); ++p) {
          std::vector<std::size_t> sub(digits.begin() + offset,
                                       digits.begin() + offset + pa_member_vars[p].size());
          offset += pa_member_vars[p].size();
          w *= pa_eps[p]->at(hb_digits[p], rank(pa_member_vars[p], sub));
        }
        if (w == 0.0) continue;
        for (std::size_t a = 0; a < low_cols; ++a) lhs[a] += w * k_low.at(b, a);
      }
      std::vector<double> rhs(low_cols, 0.0);
      for (std::size_t v = 0; v < k_high.n_cols(); ++v) {
        double p = k_high.at(hb, v);
        if (p == 0.0) continue;
        for (std::size_t a = 0; a < low_cols; ++a) rhs[a] += p * e_a.at(v, a);
      }
      double worst = 0.0;
      for (std::size_t a = 0; a < low_cols; ++a) worst = std::max(worst, std::abs(lhs[a] - rhs[a]));
      square.residual = std::max(square.residual, worst);
      if (worst > tol)
        square.witnesses.push_back(detail::render_assignment(pa_high_vars, hb_digits));
    }
    report.add(std::move(square));

    // Marginal transport: epsilon applied to the high marginal must give the
    // low cluster marginal.
    NodeSet member_ids(a_members.begin(), a_members.end());
    Distribution low_marg = marginalize(obs, member_ids);
    Kernel high_marg = interventional(high, {}, {node});
    CheckEntry marginal;
    marginal.label = "marginal(" + node + ")";
    for (std::size_t a = 0; a < low_marg.probs.size(); ++a) {
      double lifted = 0.0;
      for (std::size_t v = 0; v < e_a.n_rows(); ++v) lifted += high_marg.table[v] * e_a.at(v, a);
      double diff = std::abs(lifted - low_marg.probs[a]);
      marginal.residual = std::max(marginal.residual, diff);
      if (diff > tol)
        marginal.witnesses.push_back(detail::render_assignment(low_marg.vars, unrank(low_marg.vars, a)));
    }
    report.add(std::move(marginal));

    // On positive-mass fibers epsilon is forced to be the conditional
    // observational distribution of the cluster.
    CheckEntry transition;
    transition.label = "transition(" + node + ")";
    for (std::size_t v = 0; v < e_a.n_rows(); ++v) {
      double fiber_mass = 0.0;
      for (std::size_t a = 0; a < e_a.n_cols(); ++a)
        if (e_a.at(v, a) > kValidityTol) fiber_mass += low_marg.probs[a];
      if (fiber_mass <= kValidityTol) {
        ++transition.skipped;
        continue;
      }
      for (std::size_t a = 0; a < e_a.n_cols(); ++a) {
        if (e_a.at(v, a) <= kValidityTol) continue;
        double diff = std::abs(e_a.at(v, a) - low_marg.probs[a] / fiber_mass);
        transition.residual = std::max(transition.residual, diff);
        if (diff > tol)
          transition.witnesses.push_back(node + "=" + e_a.inputs[0].domain.values[v] + " at " +
                                         detail::render_assignment(low_marg.vars, unrank(low_marg.vars, a)));
      }
    }
    report.add(std::move(transition));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Sufficient statistic
// ---------------------------------------------------------------------------

/// The clustered graph induced by a cluster map on the low graph: one node
/// per high node, with an edge X -> Y whenever some low path runs from the
/// cluster of X to the cluster of Y through removed nodes only.
inline Dag clustered_graph(const Dag& low, const ClusterMap& cm) {
  NodeSet low_set(low.nodes().begin(), low.nodes().end());
  NodeSet cm_low(cm.low_nodes().begin(), cm.low_nodes().end());
  if (low_set != cm_low) fail(Errc::invalid_cluster_map, "cluster map does not cover the low graph's nodes");
  std::map<NodeId, NodeId> image;
  NodeSet removed;
  for (const auto& n : low.nodes()) {
    const auto& img = cm.image(n);
    if (img)
      image[n] = *img;
    else
      removed.insert(n);
  }
  std::set<Edge> edges;
  for (const auto& start : low.nodes()) {
    if (removed.count(start)) continue;
    // reachable through removed intermediates only
    NodeSet seen;
    std::deque<NodeId> frontier{start};
    while (!frontier.empty()) {
      NodeId cur = frontier.front();
      frontier.pop_front();
      for (const auto& c : low.children(cur)) {
        if (removed.count(c)) {
          if (!seen.count(c)) {
            seen.insert(c);
            frontier.push_back(c);
          }
        } else if (image[c] != image[start]) {
          edges.insert({image[start], image[c]});
        }
      }
    }
  }
  std::vector<Edge> edge_list(edges.begin(), edges.end());
  return Dag(cm.high_nodes(), edge_list);
}

/// Verify the sufficient-statistic factorization: conditioned on a
/// high-level parent assignment, the cluster's distribution factors through
/// its high value, with the within-fiber weights given by the observational
/// conditionals. Parent sets are taken from the clustered graph induced by
/// the map. Zero-mass parent fibers and zero-mass cluster values are skipped
/// and counted.
inline AbstractionReport check_sufficient_statistic(const CausalModel& low, const ClusterMap& cm,
                                                    const TauFamily& tau, double tol = kSemanticTol) {
  validate_model(low);
  Dag hgraph = clustered_graph(low.graph, cm);
  Distribution obs = joint(low);

  AbstractionReport report;
  report.check = "sufficient_statistic";
  report.tolerance = tol;

  for (const auto& node : hgraph.nodes()) {
    auto tau_it = tau.find(node);
    if (tau_it == tau.end()) fail(Errc::shape_mismatch, "no tau component for high node '" + node + "'");
    const TotalMap& tau_a = tau_it->second;
    tau_a.validate();
    std::vector<Var> a_vars = detail::cluster_vars(low, cm, node);
    if (tau_a.inputs != a_vars)
      fail(Errc::shape_mismatch, "tau component of '" + node + "' does not take the cluster members");

    std::vector<NodeId> pa = hgraph.parents(node);
    std::vector<const TotalMap*> pa_taus;
    std::vector<std::vector<Var>> pa_member_vars;
    std::vector<Var> pa_high_vars;
    for (const auto& p : pa) {
      auto it = tau.find(p);
      if (it == tau.end()) fail(Errc::shape_mismatch, "no tau component for high node '" + p + "'");
      pa_taus.push_back(&it->second);
      pa_member_vars.push_back(detail::cluster_vars(low, cm, p));
      pa_high_vars.push_back(it->second.output);
    }
    std::vector<NodeId> pa_members = cm.members_of(pa);
    std::vector<NodeId> a_members = cm.cluster(node);

    Kernel k = interventional(low, pa_members, a_members);
    NodeSet a_ids(a_members.begin(), a_members.end());
    Distribution a_marg = marginalize(obs, a_ids);
    std::size_t high_size = tau_a.output.domain.size();
    std::vector<double> fiber_mass(high_size, 0.0);
    for (std::size_t a = 0; a < a_marg.probs.size(); ++a) fiber_mass[tau_a.table[a]] += a_marg.probs[a];

    Distribution pa_weights;
    if (!pa_members.empty()) {
      NodeSet pa_ids(pa_members.begin(), pa_members.end());
      pa_weights = marginalize(obs, pa_ids);
    } else {
      pa_weights = Distribution{{}, {1.0}};
    }

    CheckEntry entry;
    entry.label = node;
    std::size_t pa_high_size = joint_size(pa_high_vars);
    for (std::size_t hb = 0; hb < pa_high_size; ++hb) {
      // mixture of mechanism rows over the observational weights of the fiber
      double total = 0.0;
      std::vector<double> p_a(k.n_cols(), 0.0);
      for (std::size_t b = 0; b < k.n_rows(); ++b) {
        if (detail::apply_tau_blocked(pa_taus, pa_member_vars, k.inputs, b) != hb) continue;
        double w = pa_weights.probs[b];
        if (w == 0.0) continue;
        total += w;
        for (std::size_t a = 0; a < k.n_cols(); ++a) p_a[a] += w * k.at(b, a);
      }
      if (total <= kValidityTol) {
        ++entry.skipped;
        continue;
      }
      for (double& p : p_a) p /= total;

      std::vector<double> p_high(high_size, 0.0);
      for (std::size_t a = 0; a < p_a.size(); ++a) p_high[tau_a.table[a]] += p_a[a];

      for (std::size_t a = 0; a < p_a.size(); ++a) {
        std::size_t v = tau_a.table[a];
        if (fiber_mass[v] <= kValidityTol) {
          ++entry.skipped;
          continue;
        }
        double eps_av = a_marg.probs[a] / fiber_mass[v];
        double diff = std::abs(p_a[a] - eps_av * p_high[v]);
        entry.residual = std::max(entry.residual, diff);
        if (diff > tol)
          entry.witnesses.push_back(detail::render_assignment(a_vars, unrank(a_vars, a)) + " | " +
                                    detail::render_assignment(pa_high_vars, unrank(pa_high_vars, hb)));
      }
    }
    report.add(std::move(entry));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Composition and products
// ---------------------------------------------------------------------------

/// Compose two abstraction levels: low -> mid described by (cm12, tau12) and
/// mid -> high described by (cm23, tau23) yield a direct low -> high
/// abstraction. A low node survives exactly when its mid image survives.
inline std::pair<ClusterMap, TauFamily> compose_abstractions(const ClusterMap& cm12, const TauFamily& tau12,
                                                             const ClusterMap& cm23,
                                                             const TauFamily& tau23) {
  NodeSet mid_from_12(cm12.high_nodes().begin(), cm12.high_nodes().end());
  NodeSet mid_from_23(cm23.low_nodes().begin(), cm23.low_nodes().end());
  if (mid_from_12 != mid_from_23)
    fail(Errc::incompatible_composition, "the middle node sets of the two abstractions differ");

  std::map<NodeId, std::optional<NodeId>> assignment;
  for (const auto& u : cm12.low_nodes()) {
    const auto& mid = cm12.image(u);
    if (!mid) {
      assignment[u] = std::nullopt;
      continue;
    }
    assignment[u] = cm23.image(*mid);
  }
  ClusterMap cm13(cm12.low_nodes(), cm23.high_nodes(), assignment);

  TauFamily tau13;
  for (const auto& c : cm23.high_nodes()) {
    auto t23 = tau23.find(c);
    if (t23 == tau23.end()) fail(Errc::incompatible_composition, "no tau component for high node '" + c + "'");
    const TotalMap& f23 = t23->second;
    f23.validate();
    std::vector<NodeId> mids = cm23.cluster(c);
    if (f23.inputs.size() != mids.size())
      fail(Errc::incompatible_composition, "tau component of '" + c + "' does not take its cluster");

    std::vector<const TotalMap*> mid_taus;
    for (std::size_t i = 0; i < mids.size(); ++i) {
      auto t12 = tau12.find(mids[i]);
      if (t12 == tau12.end())
        fail(Errc::incompatible_composition, "no tau component for middle node '" + mids[i] + "'");
      t12->second.validate();
      if (f23.inputs[i].id != mids[i] || !(t12->second.output.domain == f23.inputs[i].domain))
        fail(Errc::incompatible_composition,
             "tau components disagree on the domain of middle node '" + mids[i] + "'");
      mid_taus.push_back(&t12->second);
    }

    // The composite's inputs are the low members of the composed cluster in
    // low declaration order; per middle node they form subsequences of that
    // order, so componentwise application only needs a digit regrouping.
    std::vector<NodeId> members13 = cm13.cluster(c);
    std::vector<Var> in_vars;
    std::map<NodeId, std::size_t> member_pos;
    for (const auto& m : members13) member_pos[m] = in_vars.size(), in_vars.push_back(Var{});
    for (std::size_t i = 0; i < mids.size(); ++i) {
      const auto& comp = *mid_taus[i];
      std::vector<NodeId> sub = cm12.cluster(mids[i]);
      if (comp.inputs.size() != sub.size())
        fail(Errc::incompatible_composition, "tau component of '" + mids[i] + "' does not take its cluster");
      for (std::size_t j = 0; j < sub.size(); ++j) {
        if (comp.inputs[j].id != sub[j])
          fail(Errc::incompatible_composition, "tau component of '" + mids[i] + "' lists unexpected members");
        in_vars[member_pos.at(sub[j])] = comp.inputs[j];
      }
    }

    TotalMap f13;
    f13.inputs = in_vars;
    f13.output = Var{c, f23.output.domain};
    f13.table.resize(joint_size(in_vars));
    std::vector<Var> mid_vars = f23.inputs;
    for (std::size_t idx = 0; idx < f13.table.size(); ++idx) {
      std::vector<std::size_t> digits = unrank(in_vars, idx);
      std::vector<std::size_t> mid_digits(mids.size());
      for (std::size_t i = 0; i < mids.size(); ++i) {
        const auto& comp = *mid_taus[i];
        std::vector<std::size_t> sub(comp.inputs.size());
        std::vector<NodeId> sub_ids = cm12.cluster(mids[i]);
        for (std::size_t j = 0; j < sub_ids.size(); ++j) sub[j] = digits[member_pos.at(sub_ids[j])];
        mid_digits[i] = comp.table[rank(comp.inputs, sub)];
      }
      f13.table[idx] = f23.table[rank(mid_vars, mid_digits)];
    }
    tau13[c] = std::move(f13);
  }
  return {std::move(cm13), std::move(tau13)};
}

/// Check that a joint tau given on a product of clusters is exactly the
/// product of the componentwise family: for every joint assignment, the
/// joint map must be deterministic and equal to applying each component to
/// its block. joint_tau's outputs name the high nodes, in order.
inline AbstractionReport check_factorization_of_tau(const TauFamily& tau, const Kernel& joint_tau,
                                                    double tol = kValidityTol) {
  AbstractionReport report;
  report.check = "factorization_of_tau";
  report.tolerance = tol;

  std::vector<const TotalMap*> comps;
  std::vector<std::vector<Var>> member_vars;
  std::vector<Var> expect_inputs;
  for (const auto& out : joint_tau.outputs) {
    auto it = tau.find(out.id);
    if (it == tau.end()) fail(Errc::shape_mismatch, "no tau component for high node '" + out.id + "'");
    it->second.validate();
    if (!(it->second.output.domain == out.domain))
      fail(Errc::shape_mismatch, "joint tau disagrees with the component domain of '" + out.id + "'");
    comps.push_back(&it->second);
    member_vars.push_back(it->second.inputs);
    for (const auto& v : it->second.inputs) expect_inputs.push_back(v);
  }
  if (joint_tau.inputs != expect_inputs)
    fail(Errc::shape_mismatch, "joint tau inputs must be the concatenated cluster members");

  CheckEntry entry;
  entry.label = "joint";
  std::size_t rows = joint_tau.n_rows(), cols = joint_tau.n_cols();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t expect = detail::apply_tau_blocked(comps, member_vars, joint_tau.inputs, r);
    double worst = 0.0;
    for (std::size_t c = 0; c < cols; ++c)
      worst = std::max(worst, std::abs(joint_tau.at(r, c) - (c == expect ? 1.0 : 0.0)));
    entry.residual = std::max(entry.residual, worst);
    if (worst > tol)
      entry.witnesses.push_back(detail::render_assignment(joint_tau.inputs, unrank(joint_tau.inputs, r)));
  }
  report.add(std::move(entry));
  return report;
}

/// Derive the candidate high model whose mechanisms are the low cluster
/// kernels pushed through tau, using one representative low parent
/// assignment per high parent assignment. The result is only a candidate:
/// when the abstraction is not natural, different representatives disagree
/// and the derived model will fail check_naturality.
inline CausalModel derive_high_model(const CausalModel& low, const Dag& high_graph, const ClusterMap& cm,
                                     const TauFamily& tau) {
  validate_model(low);
  CausalModel high;
  high.graph = high_graph;
  for (const auto& node : high_graph.nodes()) {
    auto it = tau.find(node);
    if (it == tau.end()) fail(Errc::shape_mismatch, "no tau component for high node '" + node + "'");
    high.domains[node] = it->second.output.domain;
  }
  for (const auto& node : high_graph.nodes()) {
    const TotalMap& tau_a = tau.at(node);
    std::vector<NodeId> pa = high_graph.parents(node);
    std::vector<const TotalMap*> pa_taus;
    std::vector<std::vector<Var>> pa_member_vars;
    std::vector<Var> pa_high_vars;
    for (const auto& p : pa) {
      pa_taus.push_back(&tau.at(p));
      pa_member_vars.push_back(detail::cluster_vars(low, cm, p));
      pa_high_vars.push_back(Var{p, high.domains.at(p)});
    }
    Kernel k_low = interventional(low, cm.members_of(pa), cm.cluster(node));
    std::size_t high_rows = joint_size(pa_high_vars);
    std::size_t high_cols = tau_a.output.domain.size();

    Kernel mech;
    mech.inputs = pa_high_vars;
    mech.outputs = {Var{node, tau_a.output.domain}};
    mech.table.assign(high_rows * high_cols, 0.0);
    std::vector<bool> filled(high_rows, false);
    for (std::size_t r = 0; r < k_low.n_rows(); ++r) {
      std::size_t hr = detail::apply_tau_blocked(pa_taus, pa_member_vars, k_low.inputs, r);
      if (filled[hr]) continue;
      filled[hr] = true;
      for (std::size_t c = 0; c < k_low.n_cols(); ++c) mech.at(hr, tau_a.table[c]) += k_low.at(r, c);
    }
    for (std::size_t hr = 0; hr < high_rows; ++hr)
      if (!filled[hr])
        fail(Errc::not_surjective, "no low assignment maps to a parent assignment of '" + node + "'");
    high.mechanisms[node] = std::move(mech);
  }
  return high;
}

}  // namespace causalabs

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "causalabs/errors.hpp"
#include "causalabs/graph.hpp"

namespace causalabs {

/// Tolerance for validity checks (stochastic rows, evidence mass, determinism).
inline constexpr double kValidityTol = 1e-12;
/// Tolerance for semantic equality of distributions and kernels.
inline constexpr double kSemanticTol = 1e-9;

// ---------------------------------------------------------------------------
// Domains and variables
// ---------------------------------------------------------------------------

/// Finite ordered value set. Value labels are unique; indices follow the
/// declared order.
struct Domain {
  std::vector<std::string> values;

  std::size_t size() const { return values.size(); }

  std::size_t index_of(const std::string& label) const {
    for (std::size_t i = 0; i < values.size(); ++i)
      if (values[i] == label) return i;
    fail(Errc::unknown_node, "unknown domain value '" + label + "'");
  }

  void validate() const {
    if (values.empty()) fail(Errc::invalid_graph, "empty domain");
    std::set<std::string> seen(values.begin(), values.end());
    if (seen.size() != values.size()) fail(Errc::invalid_graph, "duplicate domain value");
  }

  bool operator==(const Domain&) const = default;
};

/// A named variable: a node together with its domain.
struct Var {
  NodeId id;
  Domain domain;

  bool operator==(const Var&) const = default;
};

/// Number of joint assignments of a variable list.
inline std::size_t joint_size(const std::vector<Var>& vars) {
  std::size_t n = 1;
  for (const auto& v : vars) n *= v.domain.size();
  return n;
}

/// Mixed-radix decoding of a flat index, rightmost variable fastest.
inline std::vector<std::size_t> unrank(const std::vector<Var>& vars, std::size_t index) {
  std::vector<std::size_t> digits(vars.size());
  for (std::size_t i = vars.size(); i-- > 0;) {
    std::size_t s = vars[i].domain.size();
    digits[i] = index % s;
    index /= s;
  }
  return digits;
}

/// Mixed-radix encoding, rightmost variable fastest.
inline std::size_t rank(const std::vector<Var>& vars, const std::vector<std::size_t>& digits) {
  std::size_t index = 0;
  for (std::size_t i = 0; i < vars.size(); ++i) index = index * vars[i].domain.size() + digits[i];
  return index;
}

// ---------------------------------------------------------------------------
// Kernel and Distribution
// ---------------------------------------------------------------------------

/// Row-stochastic table from joint assignments of `inputs` to joint
/// assignments of `outputs`. Rows and columns are mixed-radix indexed with
/// the rightmost variable fastest.
struct Kernel {
  std::vector<Var> inputs;
  std::vector<Var> outputs;
  std::vector<double> table;  // row-major, n_rows() * n_cols()

  std::size_t n_rows() const { return joint_size(inputs); }
  std::size_t n_cols() const { return joint_size(outputs); }

  double at(std::size_t row, std::size_t col) const { return table[row * n_cols() + col]; }
  double& at(std::size_t row, std::size_t col) { return table[row * n_cols() + col]; }

  void validate() const {
    for (const auto& v : inputs) v.domain.validate();
    for (const auto& v : outputs) v.domain.validate();
    std::size_t rows = n_rows(), cols = n_cols();
    if (table.size() != rows * cols) fail(Errc::shape_mismatch, "kernel table has the wrong size");
    for (std::size_t r = 0; r < rows; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        double p = at(r, c);
        if (!(p >= 0.0) || p > 1.0 + kValidityTol)
          fail(Errc::non_stochastic_row, "kernel entry outside [0, 1] in row " + std::to_string(r));
        sum += p;
      }
      if (std::abs(sum - 1.0) > kValidityTol)
        fail(Errc::non_stochastic_row,
             "kernel row " + std::to_string(r) + " sums to " + std::to_string(sum));
    }
  }
};

/// Probability distribution over the joint domain of `vars` (a kernel with
/// empty input).
struct Distribution {
  std::vector<Var> vars;
  std::vector<double> probs;

  std::size_t size() const { return joint_size(vars); }

  void validate() const {
    for (const auto& v : vars) v.domain.validate();
    if (probs.size() != size()) fail(Errc::shape_mismatch, "distribution table has the wrong size");
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0) || p > 1.0 + kValidityTol)
        fail(Errc::non_stochastic_row, "probability outside [0, 1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kValidityTol)
      fail(Errc::non_stochastic_row, "distribution sums to " + std::to_string(sum));
  }
};

/// True when every row of the kernel puts mass at least 1 - 1e-12 on a
/// single column.
inline bool is_deterministic(const Kernel& k) {
  std::size_t rows = k.n_rows(), cols = k.n_cols();
  for (std::size_t r = 0; r < rows; ++r) {
    double best = 0.0;
    for (std::size_t c = 0; c < cols; ++c) best = std::max(best, k.at(r, c));
    if (best < 1.0 - kValidityTol) return false;
  }
  return true;
}

/// Largest absolute entrywise difference of two equally sized tables.
inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) fail(Errc::shape_mismatch, "comparing tables of different size");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Total maps
// ---------------------------------------------------------------------------

/// Deterministic total function from the joint domain of `inputs` to a
/// single output variable, stored as one output index per input assignment.
struct TotalMap {
  std::vector<Var> inputs;
  Var output;
  std::vector<std::size_t> table;

  std::size_t n_rows() const { return joint_size(inputs); }

  void validate() const {
    for (const auto& v : inputs) v.domain.validate();
    output.domain.validate();
    if (table.size() != n_rows()) fail(Errc::shape_mismatch, "total map does not cover its input domain");
    for (std::size_t v : table)
      if (v >= output.domain.size()) fail(Errc::shape_mismatch, "total map value out of range");
  }

  bool is_surjective() const {
    std::vector<bool> hit(output.domain.size(), false);
    for (std::size_t v : table) hit[v] = true;
    return std::all_of(hit.begin(), hit.end(), [](bool b) { return b; });
  }

  Kernel as_kernel() const {
    Kernel k;
    k.inputs = inputs;
    k.outputs = {output};
    k.table.assign(n_rows() * output.domain.size(), 0.0);
    for (std::size_t r = 0; r < table.size(); ++r) k.at(r, table[r]) = 1.0;
    return k;
  }
};

/// Extract the total map of a deterministic kernel with a single output
/// variable. Throws not_deterministic when some row is spread out.
inline TotalMap map_from_kernel(const Kernel& k) {
  if (k.outputs.size() != 1) fail(Errc::shape_mismatch, "expected a single output variable");
  TotalMap f;
  f.inputs = k.inputs;
  f.output = k.outputs[0];
  std::size_t rows = k.n_rows(), cols = k.n_cols();
  f.table.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t c = 0; c < cols; ++c)
      if (k.at(r, c) > best) best = k.at(r, c), arg = c;
    if (best < 1.0 - kValidityTol)
      fail(Errc::not_deterministic, "kernel row " + std::to_string(r) + " is not deterministic");
    f.table[r] = arg;
  }
  return f;
}

// ---------------------------------------------------------------------------
// CausalModel
// ---------------------------------------------------------------------------

/// Finite discrete causal Bayesian network: a DAG, a domain per node, a
/// row-stochastic mechanism per node given its parents, and a subset of
/// nodes marked latent. Mechanism inputs are the node's parents in graph
/// declaration order.
struct CausalModel {
  Dag graph;
  NodeSet latents;
  std::map<NodeId, Domain> domains;
  std::map<NodeId, Kernel> mechanisms;

  const Domain& domain_of(const NodeId& n) const {
    auto it = domains.find(n);
    if (it == domains.end()) fail(Errc::unknown_node, "no domain for node '" + n + "'");
    return it->second;
  }

  const Kernel& mechanism_of(const NodeId& n) const {
    auto it = mechanisms.find(n);
    if (it == mechanisms.end()) fail(Errc::unknown_node, "no mechanism for node '" + n + "'");
    return it->second;
  }

  Var var_of(const NodeId& n) const { return Var{n, domain_of(n)}; }

  std::vector<Var> vars_of(const std::vector<NodeId>& ids) const {
    std::vector<Var> out;
    out.reserve(ids.size());
    for (const auto& n : ids) out.push_back(var_of(n));
    return out;
  }

  /// Non-latent nodes in declaration order.
  std::vector<NodeId> observed_nodes() const {
    std::vector<NodeId> out;
    for (const auto& n : graph.nodes())
      if (!latents.count(n)) out.push_back(n);
    return out;
  }
};

/// Check the structural invariants of a model: every node has a domain and a
/// mechanism whose inputs are exactly the node's parents in declaration
/// order with matching domains, all rows stochastic, latents are nodes.
inline void validate_model(const CausalModel& m) {
  for (const auto& l : m.latents) m.graph.index_of(l);
  for (const auto& n : m.graph.nodes()) {
    const Domain& d = m.domain_of(n);
    d.validate();
    const Kernel& k = m.mechanism_of(n);
    std::vector<NodeId> pa = m.graph.parents(n);
    if (k.inputs.size() != pa.size())
      fail(Errc::shape_mismatch, "mechanism of '" + n + "' does not take the node's parents");
    for (std::size_t i = 0; i < pa.size(); ++i) {
      if (k.inputs[i].id != pa[i])
        fail(Errc::shape_mismatch, "mechanism of '" + n + "' expects parent '" + k.inputs[i].id +
                                       "' where the graph declares '" + pa[i] + "'");
      if (!(k.inputs[i].domain == m.domain_of(pa[i])))
        fail(Errc::shape_mismatch, "mechanism of '" + n + "' disagrees with the domain of '" + pa[i] + "'");
    }
    if (k.outputs.size() != 1 || k.outputs[0].id != n || !(k.outputs[0].domain == d))
      fail(Errc::shape_mismatch, "mechanism of '" + n + "' must output exactly that node");
    k.validate();
  }
  if (m.domains.size() != m.graph.nodes().size())
    fail(Errc::shape_mismatch, "domains declared for nodes outside the graph");
  if (m.mechanisms.size() != m.graph.nodes().size())
    fail(Errc::shape_mismatch, "mechanisms declared for nodes outside the graph");
}

// ---------------------------------------------------------------------------
// Semantics
// ---------------------------------------------------------------------------

/// Interventional kernel by truncated factorization: rows range over joint
/// assignments of `do_nodes`, columns over joint assignments of
/// `outcome_nodes`, and every other node (latents included) is summed out.
/// The two node lists must be disjoint and duplicate-free; either may be
/// empty. Summation order is fixed by the declaration order, so results are
/// bitwise deterministic.
inline Kernel interventional(const CausalModel& m, const std::vector<NodeId>& do_nodes,
                             const std::vector<NodeId>& outcome_nodes) {
  std::set<NodeId> seen;
  for (const auto& n : do_nodes) {
    m.graph.index_of(n);
    if (!seen.insert(n).second) fail(Errc::invalid_query, "duplicate node '" + n + "' in do set");
  }
  for (const auto& n : outcome_nodes) {
    m.graph.index_of(n);
    if (!seen.insert(n).second)
      fail(Errc::invalid_query, "node '" + n + "' appears twice across do and outcome sets");
  }

  const auto& nodes = m.graph.nodes();
  std::size_t nn = nodes.size();
  std::map<NodeId, std::size_t> pos;
  for (std::size_t i = 0; i < nn; ++i) pos[nodes[i]] = i;

  // Per node: domain size, mechanism table, parent positions.
  std::vector<std::size_t> dom_size(nn);
  std::vector<const Kernel*> mech(nn);
  std::vector<std::vector<std::size_t>> parent_pos(nn);
  std::vector<bool> is_do(nn, false);
  for (std::size_t i = 0; i < nn; ++i) {
    dom_size[i] = m.domain_of(nodes[i]).size();
    mech[i] = &m.mechanism_of(nodes[i]);
    for (const auto& p : m.graph.parents(nodes[i])) parent_pos[i].push_back(pos[p]);
  }
  for (const auto& n : do_nodes) is_do[pos[n]] = true;

  std::vector<std::size_t> do_pos, out_pos, free_pos;
  for (const auto& n : do_nodes) do_pos.push_back(pos[n]);
  for (const auto& n : outcome_nodes) out_pos.push_back(pos[n]);
  for (std::size_t i = 0; i < nn; ++i)
    if (!is_do[i]) free_pos.push_back(i);

  Kernel k;
  k.inputs = m.vars_of(do_nodes);
  k.outputs = m.vars_of(outcome_nodes);
  std::size_t rows = joint_size(k.inputs), cols = joint_size(k.outputs);
  k.table.assign(rows * cols, 0.0);

  std::vector<std::size_t> assign(nn, 0);
  for (std::size_t row = 0; row < rows; ++row) {
    std::vector<std::size_t> do_digits = unrank(k.inputs, row);
    for (std::size_t i = 0; i < do_pos.size(); ++i) assign[do_pos[i]] = do_digits[i];
    for (std::size_t f : free_pos) assign[f] = 0;

    // Odometer over the free nodes, rightmost (last declared) fastest.
    while (true) {
      double p = 1.0;
      for (std::size_t f : free_pos) {
        const Kernel& mk = *mech[f];
        std::size_t r = 0;
        for (std::size_t j = 0; j < parent_pos[f].size(); ++j)
          r = r * mk.inputs[j].domain.size() + assign[parent_pos[f][j]];
        p *= mk.table[r * dom_size[f] + assign[f]];
      }
      std::size_t col = 0;
      for (std::size_t i = 0; i < out_pos.size(); ++i) col = col * dom_size[out_pos[i]] + assign[out_pos[i]];
      k.table[row * cols + col] += p;

      std::size_t i = free_pos.size();
      while (i-- > 0) {
        std::size_t f = free_pos[i];
        if (++assign[f] < dom_size[f]) break;
        assign[f] = 0;
        if (i == 0) goto row_done;
      }
      if (free_pos.empty()) break;
    }
  row_done:;
  }
  return k;
}

/// Full joint distribution over all nodes in declaration order.
inline Distribution joint(const CausalModel& m) {
  Kernel k = interventional(m, {}, m.graph.nodes());
  return Distribution{k.outputs, k.table};
}

/// Condition a distribution on an assignment (value indices) of a subset of
/// its variables. Throws zero_evidence when the evidence mass is not above
/// 1e-12. The result ranges over the remaining variables in their original
/// order, renormalized.
inline Distribution condition(const Distribution& d, const std::map<NodeId, std::size_t>& evidence) {
  std::vector<std::size_t> ev_pos;
  std::vector<std::size_t> ev_val;
  std::vector<Var> keep;
  std::vector<std::size_t> keep_pos;
  std::set<NodeId> found;
  for (std::size_t i = 0; i < d.vars.size(); ++i) {
    auto it = evidence.find(d.vars[i].id);
    if (it != evidence.end()) {
      if (it->second >= d.vars[i].domain.size())
        fail(Errc::invalid_query, "evidence value out of range for '" + d.vars[i].id + "'");
      ev_pos.push_back(i);
      ev_val.push_back(it->second);
      found.insert(it->first);
    } else {
      keep.push_back(d.vars[i]);
      keep_pos.push_back(i);
    }
  }
  if (found.size() != evidence.size()) fail(Errc::unknown_node, "evidence names a variable not in the distribution");

  Distribution out;
  out.vars = keep;
  out.probs.assign(joint_size(keep), 0.0);
  double mass = 0.0;
  for (std::size_t idx = 0; idx < d.probs.size(); ++idx) {
    std::vector<std::size_t> digits = unrank(d.vars, idx);
    bool match = true;
    for (std::size_t i = 0; i < ev_pos.size(); ++i)
      if (digits[ev_pos[i]] != ev_val[i]) {
        match = false;
        break;
      }
    if (!match) continue;
    std::vector<std::size_t> kd(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) kd[i] = digits[keep_pos[i]];
    out.probs[rank(keep, kd)] += d.probs[idx];
    mass += d.probs[idx];
  }
  if (mass <= kValidityTol) fail(Errc::zero_evidence, "conditioning event has zero probability");
  for (double& p : out.probs) p /= mass;
  return out;
}

/// Marginalize a distribution onto a subset of its variables, keeping their
/// original order.
inline Distribution marginalize(const Distribution& d, const NodeSet& keep_ids) {
  std::vector<Var> keep;
  std::vector<std::size_t> keep_pos;
  std::set<NodeId> found;
  for (std::size_t i = 0; i < d.vars.size(); ++i)
    if (keep_ids.count(d.vars[i].id)) {
      keep.push_back(d.vars[i]);
      keep_pos.push_back(i);
      found.insert(d.vars[i].id);
    }
  if (found.size() != keep_ids.size()) fail(Errc::unknown_node, "marginal names a variable not in the distribution");

  Distribution out;
  out.vars = keep;
  out.probs.assign(joint_size(keep), 0.0);
  for (std::size_t idx = 0; idx < d.probs.size(); ++idx) {
    std::vector<std::size_t> digits = unrank(d.vars, idx);
    std::vector<std::size_t> kd(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) kd[i] = digits[keep_pos[i]];
    out.probs[rank(keep, kd)] += d.probs[idx];
  }
  return out;
}

/// Reorder a distribution's variables to the given id order (a permutation
/// of the current ones).
inline Distribution reorder(const Distribution& d, const std::vector<NodeId>& order) {
  if (order.size() != d.vars.size()) fail(Errc::shape_mismatch, "reorder must keep all variables");
  std::vector<std::size_t> src_pos;
  std::vector<Var> vars;
  for (const auto& id : order) {
    bool ok = false;
    for (std::size_t i = 0; i < d.vars.size(); ++i)
      if (d.vars[i].id == id) {
        src_pos.push_back(i);
        vars.push_back(d.vars[i]);
        ok = true;
        break;
      }
    if (!ok) fail(Errc::unknown_node, "reorder names a variable not in the distribution");
  }
  Distribution out;
  out.vars = vars;
  out.probs.assign(d.probs.size(), 0.0);
  for (std::size_t idx = 0; idx < d.probs.size(); ++idx) {
    std::vector<std::size_t> digits = unrank(d.vars, idx);
    std::vector<std::size_t> nd(vars.size());
    for (std::size_t i = 0; i < vars.size(); ++i) nd[i] = digits[src_pos[i]];
    out.probs[rank(vars, nd)] += d.probs[idx];
  }
  return out;
}

/// Push a distribution through a total map defined on exactly its variables
/// (same ids, same order).
inline Distribution push_forward(const Distribution& d, const TotalMap& f) {
  if (f.inputs.size() != d.vars.size()) fail(Errc::shape_mismatch, "map and distribution disagree on arity");
  for (std::size_t i = 0; i < d.vars.size(); ++i)
    if (!(f.inputs[i] == d.vars[i]))
      fail(Errc::shape_mismatch, "map input '" + f.inputs[i].id + "' does not match the distribution");
  Distribution out;
  out.vars = {f.output};
  out.probs.assign(f.output.domain.size(), 0.0);
  for (std::size_t idx = 0; idx < d.probs.size(); ++idx) out.probs[f.table[idx]] += d.probs[idx];
  return out;
}

}  // namespace causalabs

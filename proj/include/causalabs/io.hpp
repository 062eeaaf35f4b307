#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "causalabs/abstraction.hpp"
#include "causalabs/cluster_map.hpp"
#include "causalabs/docalc.hpp"
#include "causalabs/engine.hpp"
#include "causalabs/errors.hpp"
#include "causalabs/graph.hpp"

namespace causalabs {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

/// A parsed model file. Graph-only files (no "kernels" key) carry an empty
/// mechanism table and has_kernels == false; they are enough for the graph
/// and separation commands.
struct ModelFile {
  CausalModel model;
  std::vector<Edge> bidirected;
  bool has_kernels = false;

  Admg admg() const {
    std::vector<Edge> directed(model.graph.edges().begin(), model.graph.edges().end());
    return Admg(model.graph.nodes(), directed, bidirected);
  }
};

namespace detail {

inline void require_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) fail(Errc::parse_error, where + ": unknown key '" + k + "'");
}

inline std::vector<std::string> string_list(const Json& j, const std::string& where) {
  if (!j.is_array()) fail(Errc::parse_error, where + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& e : j) {
    if (!e.is_string()) fail(Errc::parse_error, where + " must contain only strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

inline std::vector<Edge> edge_list(const Json& j, const std::string& where) {
  if (!j.is_array()) fail(Errc::parse_error, where + " must be an array of node pairs");
  std::vector<Edge> out;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_string())
      fail(Errc::parse_error, where + " entries must be pairs of node names");
    out.push_back({e[0].get<std::string>(), e[1].get<std::string>()});
  }
  return out;
}

inline void require_version(const Json& j, const std::string& where) {
  if (!j.contains("format_version") || !j["format_version"].is_number_integer() ||
      j["format_version"].get<int>() != 1)
    fail(Errc::parse_error, where + ": format_version must be 1");
}

inline std::string format_residual(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", r);
  return buf;
}

}  // namespace detail

inline ModelFile parse_model(const Json& j) {
  if (!j.is_object()) fail(Errc::parse_error, "model file must be a JSON object");
  detail::require_keys(j, {"format_version", "nodes", "edges", "bidirected", "kernels"}, "model file");
  detail::require_version(j, "model file");
  if (!j.contains("nodes") || !j["nodes"].is_array())
    fail(Errc::parse_error, "model file: 'nodes' must be an array");

  ModelFile mf;
  std::vector<NodeId> names;
  for (const auto& nj : j["nodes"]) {
    if (!nj.is_object()) fail(Errc::parse_error, "node entries must be objects");
    detail::require_keys(nj, {"name", "domain", "latent"}, "node entry");
    if (!nj.contains("name") || !nj["name"].is_string())
      fail(Errc::parse_error, "node entry: 'name' must be a string");
    NodeId name = nj["name"].get<std::string>();
    Domain dom;
    if (nj.contains("domain"))
      dom.values = detail::string_list(nj["domain"], "domain of '" + name + "'");
    else
      dom.values = {"0", "1"};
    names.push_back(name);
    mf.model.domains[name] = std::move(dom);
    if (nj.contains("latent")) {
      if (!nj["latent"].is_boolean()) fail(Errc::parse_error, "node entry: 'latent' must be a boolean");
      if (nj["latent"].get<bool>()) mf.model.latents.insert(name);
    }
  }
  std::vector<Edge> edges;
  if (j.contains("edges")) edges = detail::edge_list(j["edges"], "'edges'");
  mf.model.graph = Dag(names, edges);
  for (const auto& [name, dom] : mf.model.domains) dom.validate();
  if (j.contains("bidirected")) mf.bidirected = detail::edge_list(j["bidirected"], "'bidirected'");
  for (const auto& e : mf.bidirected) {
    mf.model.graph.index_of(e.first);
    mf.model.graph.index_of(e.second);
  }

  if (j.contains("kernels")) {
    mf.has_kernels = true;
    if (!j["kernels"].is_object()) fail(Errc::parse_error, "'kernels' must be an object");
    for (const auto& [node, kj] : j["kernels"].items()) {
      if (!mf.model.graph.has_node(node))
        fail(Errc::parse_error, "kernel listed for unknown node '" + node + "'");
      if (!kj.is_object()) fail(Errc::parse_error, "kernel of '" + node + "' must be an object");
      detail::require_keys(kj, {"parents", "rows"}, "kernel of '" + node + "'");
      std::vector<NodeId> pa = mf.model.graph.parents(node);
      std::vector<std::string> listed;
      if (kj.contains("parents")) listed = detail::string_list(kj["parents"], "parents of '" + node + "'");
      if (listed != pa)
        fail(Errc::parse_error,
             "kernel of '" + node + "' must list its graph parents in declaration order");
      Kernel k;
      for (const auto& p : pa) k.inputs.push_back(Var{p, mf.model.domains.at(p)});
      k.outputs = {Var{node, mf.model.domains.at(node)}};
      if (!kj.contains("rows") || !kj["rows"].is_array())
        fail(Errc::parse_error, "kernel of '" + node + "' must give 'rows'");
      std::size_t expect_rows = joint_size(k.inputs), expect_cols = mf.model.domains.at(node).size();
      if (kj["rows"].size() != expect_rows)
        fail(Errc::parse_error, "kernel of '" + node + "' must have one row per parent assignment (" +
                                    std::to_string(expect_rows) + ")");
      for (const auto& row : kj["rows"]) {
        if (!row.is_array() || row.size() != expect_cols)
          fail(Errc::parse_error, "kernel of '" + node + "' rows must have " +
                                      std::to_string(expect_cols) + " entries");
        for (const auto& x : row) {
          if (!x.is_number()) fail(Errc::parse_error, "kernel of '" + node + "' entries must be numbers");
          k.table.push_back(x.get<double>());
        }
      }
      mf.model.mechanisms[node] = std::move(k);
    }
    validate_model(mf.model);
  }
  return mf;
}

inline Json model_to_json(const ModelFile& mf) {
  Json j;
  j["format_version"] = 1;
  j["nodes"] = Json::array();
  for (const auto& n : mf.model.graph.nodes()) {
    Json nj;
    nj["name"] = n;
    nj["domain"] = mf.model.domains.at(n).values;
    if (mf.model.latents.count(n)) nj["latent"] = true;
    j["nodes"].push_back(std::move(nj));
  }
  j["edges"] = Json::array();
  for (const auto& e : mf.model.graph.edges()) j["edges"].push_back({e.first, e.second});
  if (!mf.bidirected.empty()) {
    j["bidirected"] = Json::array();
    for (const auto& e : mf.bidirected) j["bidirected"].push_back({e.first, e.second});
  }
  if (mf.has_kernels) {
    j["kernels"] = Json::object();
    for (const auto& n : mf.model.graph.nodes()) {
      const Kernel& k = mf.model.mechanism_of(n);
      Json kj;
      kj["parents"] = mf.model.graph.parents(n);
      kj["rows"] = Json::array();
      for (std::size_t r = 0; r < k.n_rows(); ++r) {
        Json row = Json::array();
        for (std::size_t c = 0; c < k.n_cols(); ++c) row.push_back(k.at(r, c));
        kj["rows"].push_back(std::move(row));
      }
      j["kernels"][n] = std::move(kj);
    }
  }
  return j;
}

// ---------------------------------------------------------------------------
// Abstraction files
// ---------------------------------------------------------------------------

/// A parsed abstraction file: the cluster map, plus whichever of the tau and
/// epsilon families the file carried, with the high domains they need.
struct Abstraction {
  ClusterMap cm;
  std::map<NodeId, Domain> high_domains;
  std::optional<TauFamily> tau;
  std::optional<EpsilonFamily> eps;
};

/// Parse an abstraction against the low model it applies to. When `high` is
/// given, it supplies (and is checked against) the high domains; otherwise
/// the file's "domains" key must supply them if tau or epsilon are present.
inline Abstraction parse_abstraction(const Json& j, const CausalModel& low,
                                     const CausalModel* high = nullptr) {
  if (!j.is_object()) fail(Errc::parse_error, "abstraction file must be a JSON object");
  detail::require_keys(j, {"format_version", "clusters", "removed", "domains", "tau", "epsilon"},
                       "abstraction file");
  detail::require_version(j, "abstraction file");
  if (!j.contains("clusters") || !j["clusters"].is_object())
    fail(Errc::parse_error, "abstraction file: 'clusters' must be an object");

  std::vector<NodeId> highs;
  std::map<NodeId, std::optional<NodeId>> assignment;
  for (const auto& [name, members] : j["clusters"].items()) {
    highs.push_back(name);
    for (const auto& m : detail::string_list(members, "cluster '" + name + "'")) {
      if (!low.graph.has_node(m))
        fail(Errc::parse_error, "cluster '" + name + "' lists unknown low node '" + m + "'");
      if (assignment.count(m))
        fail(Errc::parse_error, "low node '" + m + "' appears in two clusters");
      assignment[m] = name;
    }
  }
  if (j.contains("removed"))
    for (const auto& m : detail::string_list(j["removed"], "'removed'")) {
      if (!low.graph.has_node(m)) fail(Errc::parse_error, "'removed' lists unknown low node '" + m + "'");
      if (assignment.count(m)) fail(Errc::parse_error, "low node '" + m + "' is both clustered and removed");
      assignment[m] = std::nullopt;
    }
  std::vector<NodeId> lows;
  for (const auto& n : low.graph.nodes())
    if (assignment.count(n)) lows.push_back(n);
  if (lows.size() != assignment.size())
    fail(Errc::parse_error, "abstraction names nodes outside the low graph");

  Abstraction out{ClusterMap(lows, highs, assignment), {}, std::nullopt, std::nullopt};

  // members must be listed in low declaration order so files have one
  // canonical form
  for (const auto& h : highs) {
    std::vector<NodeId> canonical = out.cm.cluster(h);
    std::vector<std::string> listed = detail::string_list(j["clusters"][h], "cluster '" + h + "'");
    if (listed != canonical)
      fail(Errc::parse_error,
           "cluster '" + h + "' must list its members in the low graph's declaration order");
  }

  auto domain_of_high = [&](const NodeId& h) -> const Domain& {
    auto it = out.high_domains.find(h);
    if (it == out.high_domains.end())
      fail(Errc::parse_error, "no domain known for high node '" + h + "' (give 'domains' or a high model)");
    return it->second;
  };
  if (high)
    for (const auto& h : highs) {
      if (!high->graph.has_node(h))
        fail(Errc::parse_error, "high model has no node '" + h + "'");
      out.high_domains[h] = high->domain_of(h);
    }
  if (j.contains("domains")) {
    if (!j["domains"].is_object()) fail(Errc::parse_error, "'domains' must be an object");
    for (const auto& [h, dj] : j["domains"].items()) {
      if (std::find(highs.begin(), highs.end(), h) == highs.end())
        fail(Errc::parse_error, "'domains' names unknown high node '" + h + "'");
      Domain d;
      d.values = detail::string_list(dj, "domain of '" + h + "'");
      d.validate();
      if (high && !(d == out.high_domains.at(h)))
        fail(Errc::parse_error, "'domains' of '" + h + "' disagrees with the high model");
      out.high_domains[h] = std::move(d);
    }
  }

  if (j.contains("tau")) {
    if (!j["tau"].is_object()) fail(Errc::parse_error, "'tau' must be an object");
    TauFamily tau;
    for (const auto& h : highs) {
      if (!j["tau"].contains(h))
        fail(Errc::parse_error, "'tau' must give a component for cluster '" + h + "'");
      const Json& tj = j["tau"][h];
      if (!tj.is_array()) fail(Errc::parse_error, "tau of '" + h + "' must be an array of entries");
      TotalMap f;
      for (const auto& m : out.cm.cluster(h)) f.inputs.push_back(low.var_of(m));
      f.output = Var{h, domain_of_high(h)};
      std::size_t n = joint_size(f.inputs);
      f.table.assign(n, SIZE_MAX);
      for (const auto& entry : tj) {
        if (!entry.is_array() || entry.size() != 2 || !entry[0].is_array() || !entry[1].is_string())
          fail(Errc::parse_error, "tau of '" + h + "' entries must be [[member values], high value]");
        std::vector<std::string> labels = detail::string_list(entry[0], "tau of '" + h + "'");
        if (labels.size() != f.inputs.size())
          fail(Errc::parse_error, "tau of '" + h + "' entries must give one value per member");
        std::vector<std::size_t> digits;
        for (std::size_t i = 0; i < labels.size(); ++i)
          digits.push_back(f.inputs[i].domain.index_of(labels[i]));
        std::size_t idx = rank(f.inputs, digits);
        if (f.table[idx] != SIZE_MAX)
          fail(Errc::parse_error, "tau of '" + h + "' maps the same member assignment twice");
        f.table[idx] = f.output.domain.index_of(entry[1].get<std::string>());
      }
      for (std::size_t i = 0; i < n; ++i)
        if (f.table[i] == SIZE_MAX)
          fail(Errc::parse_error, "tau of '" + h + "' misses a member assignment");
      tau[h] = std::move(f);
    }
    out.tau = std::move(tau);
  }

  if (j.contains("epsilon")) {
    if (!j["epsilon"].is_object()) fail(Errc::parse_error, "'epsilon' must be an object");
    EpsilonFamily eps;
    for (const auto& h : highs) {
      if (!j["epsilon"].contains(h))
        fail(Errc::parse_error, "'epsilon' must give a component for cluster '" + h + "'");
      const Json& ej = j["epsilon"][h];
      if (!ej.is_array()) fail(Errc::parse_error, "epsilon of '" + h + "' must be an array of entries");
      Kernel k;
      k.inputs = {Var{h, domain_of_high(h)}};
      for (const auto& m : out.cm.cluster(h)) k.outputs.push_back(low.var_of(m));
      std::size_t rows = k.inputs[0].domain.size(), cols = joint_size(k.outputs);
      k.table.assign(rows * cols, -1.0);
      for (const auto& entry : ej) {
        if (!entry.is_array() || entry.size() != 2 || !entry[0].is_string() || !entry[1].is_array())
          fail(Errc::parse_error, "epsilon of '" + h + "' entries must be [high value, [row]]");
        std::size_t v = k.inputs[0].domain.index_of(entry[0].get<std::string>());
        if (k.table[v * cols] >= 0.0)
          fail(Errc::parse_error, "epsilon of '" + h + "' gives the row of '" +
                                      entry[0].get<std::string>() + "' twice");
        if (entry[1].size() != cols)
          fail(Errc::parse_error, "epsilon of '" + h + "' rows must have " + std::to_string(cols) +
                                      " entries");
        for (std::size_t c = 0; c < cols; ++c) {
          if (!entry[1][c].is_number())
            fail(Errc::parse_error, "epsilon of '" + h + "' entries must be numbers");
          k.table[v * cols + c] = entry[1][c].get<double>();
        }
      }
      for (std::size_t r = 0; r < rows; ++r)
        if (k.table[r * cols] < 0.0)
          fail(Errc::parse_error, "epsilon of '" + h + "' misses the row of '" +
                                      k.inputs[0].domain.values[r] + "'");
      eps[h] = std::move(k);
    }
    out.eps = std::move(eps);
  }
  return out;
}

/// Serialize an abstraction to its canonical file form. Member value labels
/// come from the stored variables of the tau and epsilon components.
inline Json abstraction_to_json(const Abstraction& a) {
  Json j;
  j["format_version"] = 1;
  j["clusters"] = Json::object();
  for (const auto& h : a.cm.high_nodes()) j["clusters"][h] = a.cm.cluster(h);
  std::vector<NodeId> removed = a.cm.removed();
  if (!removed.empty()) j["removed"] = removed;
  if (!a.high_domains.empty()) {
    j["domains"] = Json::object();
    for (const auto& h : a.cm.high_nodes()) {
      auto it = a.high_domains.find(h);
      if (it != a.high_domains.end()) j["domains"][h] = it->second.values;
    }
  }
  if (a.tau) {
    j["tau"] = Json::object();
    for (const auto& h : a.cm.high_nodes()) {
      const TotalMap& f = a.tau->at(h);
      Json tj = Json::array();
      for (std::size_t i = 0; i < f.table.size(); ++i) {
        std::vector<std::size_t> digits = unrank(f.inputs, i);
        Json labels = Json::array();
        for (std::size_t k = 0; k < f.inputs.size(); ++k)
          labels.push_back(f.inputs[k].domain.values[digits[k]]);
        tj.push_back({std::move(labels), f.output.domain.values[f.table[i]]});
      }
      j["tau"][h] = std::move(tj);
    }
  }
  if (a.eps) {
    j["epsilon"] = Json::object();
    for (const auto& h : a.cm.high_nodes()) {
      const Kernel& k = a.eps->at(h);
      Json ej = Json::array();
      for (std::size_t r = 0; r < k.n_rows(); ++r) {
        Json row = Json::array();
        for (std::size_t c = 0; c < k.n_cols(); ++c) row.push_back(k.at(r, c));
        ej.push_back({k.inputs[0].domain.values[r], std::move(row)});
      }
      j["epsilon"][h] = std::move(ej);
    }
  }
  return j;
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::parse_error, "cannot open '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::parse_error, "'" + path + "': " + e.what());
  }
  return j;
}

inline ModelFile load_model(const std::string& path) { return parse_model(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

inline Json dag_to_json(const Dag& g) {
  Json j;
  j["nodes"] = g.nodes();
  j["edges"] = Json::array();
  for (const auto& e : g.edges()) j["edges"].push_back({e.first, e.second});
  return j;
}

inline Json admg_to_json(const Admg& g) {
  Json j = dag_to_json(g.directed_part());
  j["bidirected"] = Json::array();
  for (const auto& e : g.bidirected()) j["bidirected"].push_back({e.first, e.second});
  return j;
}

inline Json ops_to_json(const std::vector<GraphOp>& ops) {
  Json j = Json::array();
  for (const auto& op : ops) {
    Json oj;
    if (op.kind == GraphOp::Kind::merge) {
      oj["op"] = "merge";
      oj["a"] = op.a;
      oj["b"] = op.b;
      oj["result"] = op.result;
    } else {
      oj["op"] = "remove";
      oj["node"] = op.a;
    }
    j.push_back(std::move(oj));
  }
  return j;
}

inline Json witness_to_json(const MapWitness& w) {
  Json j;
  j["valid"] = w.valid;
  if (w.valid) {
    j["ops"] = ops_to_json(w.ops);
    j["final_graph"] = dag_to_json(w.final_graph);
    j["high_to_final"] = Json::object();
    for (const auto& [h, f] : w.high_to_final) j["high_to_final"][h] = f;
  } else {
    j["failure"] = w.failure;
  }
  return j;
}

inline Json report_to_json(const AbstractionReport& r, std::size_t max_witnesses = 10) {
  Json j;
  j["check"] = r.check;
  j["pass"] = r.pass;
  j["tolerance"] = r.tolerance;
  j["max_residual"] = r.max_residual;
  j["skipped"] = r.skipped_total;
  j["entries"] = Json::array();
  for (const auto& e : r.entries) {
    Json ej;
    ej["label"] = e.label;
    ej["residual"] = e.residual;
    if (e.skipped) ej["skipped"] = e.skipped;
    if (!e.witnesses.empty()) {
      ej["witnesses"] = Json::array();
      for (std::size_t i = 0; i < e.witnesses.size() && i < max_witnesses; ++i)
        ej["witnesses"].push_back(e.witnesses[i]);
      ej["witnesses_total"] = e.witnesses.size();
    }
    j["entries"].push_back(std::move(ej));
  }
  return j;
}

inline std::string report_to_text(const AbstractionReport& r, std::size_t max_witnesses = 10) {
  std::string out;
  out += "check: " + r.check + "\n";
  out += "tolerance: " + detail::format_residual(r.tolerance) + "\n";
  out += std::string("verdict: ") + (r.pass ? "PASS" : "FAIL") + " (max residual " +
         detail::format_residual(r.max_residual) + ")\n";
  if (r.skipped_total) out += "skipped: " + std::to_string(r.skipped_total) + " zero-mass assignments\n";
  for (const auto& e : r.entries) {
    out += "  " + e.label + ": residual " + detail::format_residual(e.residual);
    if (e.skipped) out += " (skipped " + std::to_string(e.skipped) + ")";
    out += "\n";
    for (std::size_t i = 0; i < e.witnesses.size() && i < max_witnesses; ++i)
      out += "    at " + e.witnesses[i] + "\n";
    if (e.witnesses.size() > max_witnesses)
      out += "    ... " + std::to_string(e.witnesses.size() - max_witnesses) + " more\n";
  }
  return out;
}

inline Json decision_to_json(const RuleDecision& d) {
  Json j;
  j["rule"] = d.rule;
  j["applicable"] = d.applicable;
  j["statement"] = d.statement;
  return j;
}

}  // namespace causalabs

// Command line front end: inspect models, run interventions, validate
// cluster maps, check abstractions, and test rewrite rules.
//
// Exit codes: 0 on success / check passed, 1 when a verification answered
// "no" (failed check, inadmissible operation, connected rather than
// separated, inapplicable rule), 2 on bad input.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "causalabs.hpp"

namespace {

using namespace causalabs;

struct CheckFailed {};  // raised to exit 1 after output is flushed

std::string render_dist_labels(const std::vector<Var>& vars, std::size_t index) {
  if (vars.empty()) return "()";
  return detail::render_assignment(vars, unrank(vars, index));
}

void print_kernel_text(const Kernel& k) {
  for (std::size_t r = 0; r < k.n_rows(); ++r) {
    std::string line = "do(" + (k.inputs.empty() ? "" : render_dist_labels(k.inputs, r)) + "):";
    for (std::size_t c = 0; c < k.n_cols(); ++c) {
      char buf[48];
      std::snprintf(buf, sizeof buf, " %s: %.10g", render_dist_labels(k.outputs, c).c_str(), k.at(r, c));
      line += buf;
    }
    std::cout << line << "\n";
  }
}

Json kernel_to_json(const Kernel& k, const std::vector<NodeId>& do_nodes,
                    const std::vector<NodeId>& outcome_nodes) {
  Json j;
  j["do"] = do_nodes;
  j["outcome"] = outcome_nodes;
  j["row_labels"] = Json::array();
  for (std::size_t r = 0; r < k.n_rows(); ++r) j["row_labels"].push_back(render_dist_labels(k.inputs, r));
  j["col_labels"] = Json::array();
  for (std::size_t c = 0; c < k.n_cols(); ++c) j["col_labels"].push_back(render_dist_labels(k.outputs, c));
  j["rows"] = Json::array();
  for (std::size_t r = 0; r < k.n_rows(); ++r) {
    Json row = Json::array();
    for (std::size_t c = 0; c < k.n_cols(); ++c) row.push_back(k.at(r, c));
    j["rows"].push_back(std::move(row));
  }
  return j;
}

void print_admg_text(const Admg& g) {
  std::string nodes;
  for (const auto& n : g.nodes()) {
    if (!nodes.empty()) nodes += ", ";
    nodes += n;
  }
  std::cout << "nodes: " << nodes << "\n";
  for (const auto& e : g.directed()) std::cout << e.first << " -> " << e.second << "\n";
  for (const auto& e : g.bidirected()) std::cout << e.first << " <-> " << e.second << "\n";
}

void emit_report(const AbstractionReport& r, const std::string& output, std::size_t max_witnesses,
                 bool& all_pass) {
  if (output == "json")
    std::cout << report_to_json(r, max_witnesses).dump(2) << "\n";
  else
    std::cout << report_to_text(r, max_witnesses);
  if (!r.pass) all_pass = false;
}

CausalModel require_kernels(const ModelFile& mf, const std::string& which) {
  if (!mf.has_kernels) fail(Errc::parse_error, which + " must carry kernels for this command");
  return mf.model;
}

int run(int argc, char** argv) {
  CLI::App app{"verification toolkit for clustered causal models"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string output = "text";
  app.add_option("--output", output, "output format")->check(CLI::IsMember({"text", "json"}));
  bool all_witnesses = false;
  app.add_flag("--all-witnesses", all_witnesses, "print every violating assignment");

  // validate
  auto* validate_cmd = app.add_subcommand("validate", "parse a model file and validate it");
  std::string validate_model_path;
  validate_cmd->add_option("--model", validate_model_path, "model file")->required();

  // joint
  auto* joint_cmd = app.add_subcommand("joint", "print the observational joint distribution");
  std::string joint_model_path;
  joint_cmd->add_option("--model", joint_model_path, "model file")->required();

  // intervene
  auto* intervene_cmd = app.add_subcommand("intervene", "print an interventional kernel");
  std::string intervene_model_path;
  std::vector<std::string> do_set_nodes, do_pins, target_nodes;
  intervene_cmd->add_option("--model", intervene_model_path, "model file")->required();
  intervene_cmd->add_option("--do-set", do_set_nodes, "intervened nodes")->delimiter(',');
  intervene_cmd->add_option("--do", do_pins, "pin intervened values, NODE=VALUE")->delimiter(',');
  intervene_cmd->add_option("--target,--outcome", target_nodes, "outcome nodes (default: the rest)")
      ->delimiter(',');

  // enumerate
  auto* enumerate_cmd = app.add_subcommand("enumerate", "enumerate query signatures of a graph");
  std::string enumerate_model_path;
  std::size_t enumerate_limit = 100;
  enumerate_cmd->add_option("--model", enumerate_model_path, "model file")->required();
  enumerate_cmd->add_option("--limit", enumerate_limit, "print at most this many signatures");

  // dsep
  auto* dsep_cmd = app.add_subcommand("dsep", "test separation in a graph");
  std::string dsep_model_path;
  std::vector<std::string> dsep_x, dsep_y, dsep_z;
  dsep_cmd->add_option("--model", dsep_model_path, "model file")->required();
  dsep_cmd->add_option("--x", dsep_x, "first set")->delimiter(',')->required();
  dsep_cmd->add_option("--y", dsep_y, "second set")->delimiter(',')->required();
  dsep_cmd->add_option("--given,--z", dsep_z, "conditioning set")->delimiter(',');

  // project
  auto* project_cmd = app.add_subcommand("project", "project latents away, optionally clustering first");
  std::string project_model_path, project_map_path;
  project_cmd->add_option("--model", project_model_path, "low model file")->required();
  project_cmd->add_option("--map", project_map_path, "cluster map over the observed nodes");

  // graph ops
  auto* graph_cmd = app.add_subcommand("graph", "apply or validate graph operations");
  auto* merge_cmd = graph_cmd->add_subcommand("merge", "merge two nodes");
  std::string merge_model_path, merge_a, merge_b, merge_name;
  merge_cmd->add_option("--model", merge_model_path, "graph file")->required();
  merge_cmd->add_option("--a", merge_a, "first node")->required();
  merge_cmd->add_option("--b", merge_b, "second node")->required();
  merge_cmd->add_option("--name", merge_name, "name of the merged node (default: a+b)");
  auto* delete_cmd = graph_cmd->add_subcommand("delete", "delete a node with at most one child");
  std::string delete_model_path, delete_node_name;
  delete_cmd->add_option("--model", delete_model_path, "graph file")->required();
  delete_cmd->add_option("--node", delete_node_name, "node to delete")->required();
  auto* vmap_cmd = graph_cmd->add_subcommand("validate-map", "search a merge/delete witness");
  std::string vmap_low_path, vmap_high_path, vmap_map_path;
  vmap_cmd->add_option("--low", vmap_low_path, "low graph file")->required();
  vmap_cmd->add_option("--high", vmap_high_path, "high graph file")->required();
  vmap_cmd->add_option("--map", vmap_map_path, "abstraction file")->required();
  graph_cmd->require_subcommand(1);

  // check
  auto* check_cmd = app.add_subcommand("check", "verify an abstraction between two models");
  std::string check_low_path, check_high_path, check_map_path, check_mode = "both",
              check_scope = "nodes";
  check_cmd->add_option("--low", check_low_path, "low model file")->required();
  check_cmd->add_option("--high", check_high_path, "high model file")->required();
  check_cmd->add_option("--map", check_map_path, "abstraction file")->required();
  check_cmd->add_option("--mode", check_mode, "which direction to check")
      ->check(CLI::IsMember({"cause", "effect", "both"}));
  check_cmd->add_option("--scope", check_scope, "consistency scope")
      ->check(CLI::IsMember({"nodes", "subsets"}));

  // compose
  auto* compose_cmd = app.add_subcommand("compose", "compose two abstraction levels");
  std::string compose_low_path, compose_map1_path, compose_map2_path, compose_out_path;
  compose_cmd->add_option("--low", compose_low_path, "low model file")->required();
  compose_cmd->add_option("--map1", compose_map1_path, "low-to-mid abstraction")->required();
  compose_cmd->add_option("--map2", compose_map2_path, "mid-to-high abstraction")->required();
  compose_cmd->add_option("--out", compose_out_path, "write the composite here instead of stdout");

  // docalc
  auto* docalc_cmd = app.add_subcommand("docalc", "test a rewrite rule on the high graph");
  std::string docalc_high_path, docalc_low_path, docalc_map_path;
  int docalc_rule = 0;
  std::vector<std::string> docalc_x, docalc_y, docalc_z, docalc_w;
  bool docalc_verify = false;
  docalc_cmd->add_option("--high", docalc_high_path, "high graph file (derived from --low/--map if absent)");
  docalc_cmd->add_option("--low", docalc_low_path, "low model file");
  docalc_cmd->add_option("--map", docalc_map_path, "cluster map over the observed low nodes");
  docalc_cmd->add_option("--rule", docalc_rule, "rule number")->required()->check(CLI::Range(1, 3));
  docalc_cmd->add_option("--x", docalc_x, "intervened set")->delimiter(',');
  docalc_cmd->add_option("--y", docalc_y, "outcome set")->delimiter(',')->required();
  docalc_cmd->add_option("--z", docalc_z, "set the rule acts on")->delimiter(',')->required();
  docalc_cmd->add_option("--w", docalc_w, "context set")->delimiter(',');
  docalc_cmd->add_flag("--verify", docalc_verify, "also compare both sides on the low model");

  // factorize
  auto* factorize_cmd = app.add_subcommand("factorize", "check the clustered model reproduces the low one");
  std::string factorize_low_path, factorize_map_path;
  factorize_cmd->add_option("--low", factorize_low_path, "low model file")->required();
  factorize_cmd->add_option("--map", factorize_map_path, "cluster map over the observed nodes")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  std::size_t max_witnesses = all_witnesses ? SIZE_MAX : 10;

  if (*validate_cmd) {
    ModelFile mf = load_model(validate_model_path);
    std::cout << "ok" << (mf.has_kernels ? "" : " (graph only)") << "\n";
    return 0;
  }

  if (*joint_cmd) {
    CausalModel m = require_kernels(load_model(joint_model_path), "--model");
    validate_model(m);
    Distribution d = joint(m);
    if (output == "json") {
      Json j;
      j["vars"] = Json::array();
      for (const auto& v : d.vars) j["vars"].push_back(v.id);
      j["labels"] = Json::array();
      for (std::size_t i = 0; i < d.probs.size(); ++i) j["labels"].push_back(render_dist_labels(d.vars, i));
      j["probs"] = d.probs;
      std::cout << j.dump(2) << "\n";
    } else {
      for (std::size_t i = 0; i < d.probs.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.10g", d.probs[i]);
        std::cout << render_dist_labels(d.vars, i) << ": " << buf << "\n";
      }
    }
    return 0;
  }

  if (*intervene_cmd) {
    CausalModel m = require_kernels(load_model(intervene_model_path), "--model");
    validate_model(m);

    // Pins like A=1 both name intervened nodes and select a kernel row.
    std::vector<NodeId> do_nodes = do_set_nodes;
    std::map<NodeId, std::string> pinned;
    for (const auto& pin : do_pins) {
      auto eq = pin.find('=');
      if (eq == std::string::npos || eq == 0 || eq + 1 == pin.size())
        fail(Errc::parse_error, "--do expects NODE=VALUE, got '" + pin + "'");
      NodeId n = pin.substr(0, eq);
      if (!pinned.emplace(n, pin.substr(eq + 1)).second)
        fail(Errc::parse_error, "--do pins '" + n + "' twice");
      if (std::find(do_nodes.begin(), do_nodes.end(), n) == do_nodes.end()) do_nodes.push_back(n);
    }

    std::vector<NodeId> out_nodes = target_nodes;
    if (out_nodes.empty()) {
      NodeSet done(do_nodes.begin(), do_nodes.end());
      for (const auto& n : m.graph.nodes())
        if (!done.count(n) && !m.latents.count(n)) out_nodes.push_back(n);
    }
    Kernel k = interventional(m, do_nodes, out_nodes);

    if (pinned.empty()) {
      if (output == "json")
        std::cout << kernel_to_json(k, do_nodes, out_nodes).dump(2) << "\n";
      else
        print_kernel_text(k);
      return 0;
    }

    if (pinned.size() != do_nodes.size())
      fail(Errc::parse_error, "--do must pin every intervened node when values are given");
    std::vector<std::size_t> digits;
    for (const auto& n : do_nodes) digits.push_back(m.domain_of(n).index_of(pinned.at(n)));
    std::size_t row = rank(k.inputs, digits);
    std::string do_label = render_dist_labels(k.inputs, row);
    if (output == "json") {
      Json j;
      j["do"] = do_label;
      j["outcome"] = out_nodes;
      j["col_labels"] = Json::array();
      for (std::size_t c = 0; c < k.n_cols(); ++c) j["col_labels"].push_back(render_dist_labels(k.outputs, c));
      j["probs"] = Json::array();
      for (std::size_t c = 0; c < k.n_cols(); ++c) j["probs"].push_back(k.at(row, c));
      std::cout << j.dump(2) << "\n";
    } else {
      for (std::size_t c = 0; c < k.n_cols(); ++c) {
        char buf[64];
        std::snprintf(buf, sizeof buf, " = %.10g\n", k.at(row, c));
        std::cout << "p(" << render_dist_labels(k.outputs, c) << " | do(" << do_label << "))" << buf;
      }
    }
    return 0;
  }

  if (*enumerate_cmd) {
    ModelFile mf = load_model(enumerate_model_path);
    std::vector<Query> qs = enumerate_queries(mf.model.graph);
    if (output == "json") {
      Json j;
      j["count"] = qs.size();
      j["queries"] = Json::array();
      for (std::size_t i = 0; i < qs.size() && i < enumerate_limit; ++i) {
        Json qj;
        qj["do"] = qs[i].do_set;
        qj["outcome"] = qs[i].outcome_set;
        j["queries"].push_back(std::move(qj));
      }
      std::cout << j.dump(2) << "\n";
    } else {
      std::cout << qs.size() << " signatures\n";
      for (std::size_t i = 0; i < qs.size() && i < enumerate_limit; ++i)
        std::cout << "do(" << detail::join_ids(qs[i].do_set) << ")->(" << detail::join_ids(qs[i].outcome_set)
                  << ")\n";
      if (qs.size() > enumerate_limit)
        std::cout << "... " << (qs.size() - enumerate_limit) << " more\n";
    }
    return 0;
  }

  if (*dsep_cmd) {
    ModelFile mf = load_model(dsep_model_path);
    Admg g = mf.admg();
    bool sep = d_separated(g, NodeSet(dsep_x.begin(), dsep_x.end()), NodeSet(dsep_y.begin(), dsep_y.end()),
                           NodeSet(dsep_z.begin(), dsep_z.end()));
    std::string stmt = "(" + detail::render_set(dsep_x) + " _||_ " + detail::render_set(dsep_y) + " | " +
                       detail::render_set(dsep_z) + ")";
    if (output == "json") {
      Json j;
      j["statement"] = stmt;
      j["separated"] = sep;
      std::cout << j.dump(2) << "\n";
    } else {
      std::cout << stmt << ": " << (sep ? "separated" : "connected") << "\n";
    }
    if (!sep) throw CheckFailed{};
    return 0;
  }

  if (*project_cmd) {
    ModelFile mf = load_model(project_model_path);
    Admg result;
    if (project_map_path.empty()) {
      if (!mf.bidirected.empty())
        fail(Errc::invalid_graph, "projection expects a directed graph with latent nodes");
      NodeSet observed;
      for (const auto& n : mf.model.graph.nodes())
        if (!mf.model.latents.count(n)) observed.insert(n);
      result = latent_projection(mf.model.graph, observed);
    } else {
      Abstraction a = parse_abstraction(read_json_file(project_map_path), mf.model);
      result = high_admg_from_cluster_map(mf.model, a.cm);
    }
    if (output == "json")
      std::cout << admg_to_json(result).dump(2) << "\n";
    else
      print_admg_text(result);
    return 0;
  }

  if (*graph_cmd) {
    if (*merge_cmd) {
      ModelFile mf = load_model(merge_model_path);
      std::string name = merge_name.empty() ? merge_a + "+" + merge_b : merge_name;
      Dag merged;
      try {
        merged = merge_nodes(mf.model.graph, merge_a, merge_b, name);
      } catch (const Error& e) {
        if (e.code() == Errc::merge_creates_cycle) {
          std::cout << "rejected: " << e.what() << "\n";
          throw CheckFailed{};
        }
        throw;
      }
      if (output == "json")
        std::cout << dag_to_json(merged).dump(2) << "\n";
      else
        print_admg_text(Admg(merged));
      return 0;
    }
    if (*delete_cmd) {
      ModelFile mf = load_model(delete_model_path);
      Dag reduced;
      try {
        reduced = delete_node(mf.model.graph, delete_node_name);
      } catch (const Error& e) {
        if (e.code() == Errc::is_confounder) {
          std::cout << "rejected: " << e.what() << "\n";
          throw CheckFailed{};
        }
        throw;
      }
      if (output == "json")
        std::cout << dag_to_json(reduced).dump(2) << "\n";
      else
        print_admg_text(Admg(reduced));
      return 0;
    }
    ModelFile low = load_model(vmap_low_path);
    ModelFile high = load_model(vmap_high_path);
    Abstraction a = parse_abstraction(read_json_file(vmap_map_path), low.model);
    MapWitness w = validate_cluster_map(low.model.graph, high.model.graph, a.cm);
    if (output == "json") {
      std::cout << witness_to_json(w).dump(2) << "\n";
    } else if (w.valid) {
      std::cout << "valid\n";
      for (const auto& op : w.ops) {
        if (op.kind == GraphOp::Kind::merge)
          std::cout << "merge " << op.a << " " << op.b << " -> " << op.result << "\n";
        else
          std::cout << "remove " << op.a << "\n";
      }
    } else {
      std::cout << "invalid: " << w.failure << "\n";
    }
    if (!w.valid) throw CheckFailed{};
    return 0;
  }

  if (*check_cmd) {
    CausalModel low = require_kernels(load_model(check_low_path), "--low");
    CausalModel high = require_kernels(load_model(check_high_path), "--high");
    Abstraction a = parse_abstraction(read_json_file(check_map_path), low, &high);
    ConsistencyScope scope =
        check_scope == "subsets" ? ConsistencyScope::all_subset_pairs : ConsistencyScope::node_pairs;

    bool all_pass = true;
    bool cause = check_mode == "cause" || check_mode == "both";
    bool effect = check_mode == "effect" || check_mode == "both";
    if (cause) {
      if (!a.tau) fail(Errc::parse_error, "checking the cause direction needs 'tau' in the map file");
      emit_report(check_naturality(low, high, a.cm, *a.tau), output, max_witnesses, all_pass);
      emit_report(check_interventional_consistency(low, high, a.cm, *a.tau, scope), output, max_witnesses,
                  all_pass);
    }
    if (effect) {
      EpsilonFamily eps;
      if (a.eps) {
        eps = *a.eps;
      } else if (a.tau) {
        eps = epsilon_from_tau(low, a.cm, *a.tau);
      } else {
        fail(Errc::parse_error, "checking the effect direction needs 'epsilon' or 'tau' in the map file");
      }
      emit_report(check_effect_focused(low, high, a.cm, eps), output, max_witnesses, all_pass);
      if (a.tau) {
        emit_report(check_right_inverse(*a.tau, eps), output, max_witnesses, all_pass);
        emit_report(check_sufficient_statistic(low, a.cm, *a.tau), output, max_witnesses, all_pass);
      }
    }
    if (!all_pass) throw CheckFailed{};
    return 0;
  }

  if (*compose_cmd) {
    ModelFile low = load_model(compose_low_path);
    Abstraction a12 = parse_abstraction(read_json_file(compose_map1_path), low.model);
    if (!a12.tau) fail(Errc::parse_error, "--map1 needs 'tau' to compose");
    // the middle level only needs node names and domains to parse map2
    CausalModel mid;
    mid.graph = Dag(a12.cm.high_nodes(), {});
    for (const auto& h : a12.cm.high_nodes()) {
      auto it = a12.high_domains.find(h);
      if (it == a12.high_domains.end())
        fail(Errc::parse_error, "--map1 needs 'domains' to compose");
      mid.domains[h] = it->second;
    }
    Abstraction a23 = parse_abstraction(read_json_file(compose_map2_path), mid);
    if (!a23.tau) fail(Errc::parse_error, "--map2 needs 'tau' to compose");
    auto [cm13, tau13] = compose_abstractions(a12.cm, *a12.tau, a23.cm, *a23.tau);

    Abstraction a13;
    a13.cm = std::move(cm13);
    a13.high_domains = a23.high_domains;
    a13.tau = std::move(tau13);
    Json j = abstraction_to_json(a13);
    if (compose_out_path.empty()) {
      std::cout << j.dump(2) << "\n";
    } else {
      std::ofstream out(compose_out_path);
      if (!out) fail(Errc::parse_error, "cannot write '" + compose_out_path + "'");
      out << j.dump(2) << "\n";
      std::cout << "wrote " << compose_out_path << "\n";
    }
    return 0;
  }

  if (*docalc_cmd) {
    std::optional<Admg> high;
    ModelFile low;
    std::optional<Abstraction> a;
    if (!docalc_low_path.empty()) low = load_model(docalc_low_path);
    if (!docalc_map_path.empty()) {
      if (docalc_low_path.empty()) fail(Errc::parse_error, "--map needs --low");
      a = parse_abstraction(read_json_file(docalc_map_path), low.model);
    }
    if (!docalc_high_path.empty())
      high = load_model(docalc_high_path).admg();
    else if (a)
      high = high_admg_from_cluster_map(low.model, a->cm);
    else
      fail(Errc::parse_error, "give --high, or --low with --map");

    RuleQuery q;
    q.rule = docalc_rule;
    q.x = docalc_x;
    q.y = docalc_y;
    q.z = docalc_z;
    q.w = docalc_w;
    RuleDecision d = rule_applicable(*high, q);

    bool ok = d.applicable;
    Json j = decision_to_json(d);
    if (output != "json")
      std::cout << "rule " << d.rule << ": " << (d.applicable ? "applicable" : "not applicable") << "\n"
                << "tested: " << d.statement << "\n";
    if (docalc_verify) {
      if (!a) fail(Errc::parse_error, "--verify needs --low and --map");
      CausalModel lm = require_kernels(low, "--low");
      AbstractionReport r = verify_rule_on_low(lm, a->cm, q);
      if (output == "json") {
        j["verification"] = report_to_json(r, max_witnesses);
      } else {
        std::cout << report_to_text(r, max_witnesses);
      }
      if (!r.pass) ok = false;
    }
    if (output == "json") std::cout << j.dump(2) << "\n";
    if (!ok) throw CheckFailed{};
    return 0;
  }

  if (*factorize_cmd) {
    CausalModel low = require_kernels(load_model(factorize_low_path), "--low");
    Abstraction a = parse_abstraction(read_json_file(factorize_map_path), low);
    AbstractionReport r = check_clustered_factorization(low, a.cm);
    bool all_pass = true;
    emit_report(r, output, max_witnesses, all_pass);
    if (!all_pass) throw CheckFailed{};
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CheckFailed&) {
    return 1;
  } catch (const causalabs::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

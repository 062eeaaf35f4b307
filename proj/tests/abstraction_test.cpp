#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <optional>
#include <random>
#include <vector>

#include "causalabs.hpp"
#include "support/builders.hpp"
#include "support/random_models.hpp"

using namespace causalabs;
using testsupport::build_model;
using testsupport::chain_high;
using testsupport::chain_low;
using testsupport::chain_tau;
using testsupport::dom;
using testsupport::identity_cluster_map;
using testsupport::identity_tau;

using Catch::Matchers::WithinAbs;

namespace {

/// Low model with a mergeable B: both mechanism rows of B are equal, so
/// collapsing values 0 and 1 commutes with the mechanisms.
CausalModel mergeable_low() {
  return build_model({"A", "B"}, {{"A", "B"}}, {{"A", dom(2)}, {"B", dom(3)}},
                     {{"A", {{0.6, 0.4}}}, {"B", {{0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}}}});
}

CausalModel mergeable_high() {
  return build_model({"A", "B"}, {{"A", "B"}}, {{"A", dom(2)}, {"B", dom(2)}},
                     {{"A", {{0.6, 0.4}}}, {"B", {{0.5, 0.5}, {0.5, 0.5}}}});
}

TauFamily mergeable_tau(const CausalModel& low, const CausalModel& high) {
  TauFamily tau = identity_tau(low);
  tau["B"] = TotalMap{{low.var_of("B")}, high.var_of("B"), {0, 0, 1}};
  return tau;
}

/// Low model where tau collapses the two values of an intervened node whose
/// downstream rows differ, breaking every square that reads B.
CausalModel clash_low() {
  return build_model({"A", "B"}, {{"A", "B"}}, {{"A", dom(2)}, {"B", dom(3)}},
                     {{"A", {{0.5, 0.5}}}, {"B", {{0.2, 0.3, 0.5}, {0.6, 0.2, 0.2}}}});
}

CausalModel clash_high() {
  return build_model({"A", "B"}, {{"A", "B"}}, {{"A", dom(1)}, {"B", dom(2)}},
                     {{"A", {{1.0}}}, {"B", {{0.5, 0.5}}}});
}

TauFamily clash_tau(const CausalModel& low, const CausalModel& high) {
  TauFamily tau;
  tau["A"] = TotalMap{{low.var_of("A")}, high.var_of("A"), {0, 0}};
  tau["B"] = TotalMap{{low.var_of("B")}, high.var_of("B"), {0, 0, 1}};
  return tau;
}

}  // namespace

TEST_CASE("identity abstraction is natural with zero residual") {
  CausalModel m = testsupport::ab_model();
  ClusterMap cm = identity_cluster_map(m.graph.nodes());
  TauFamily tau = identity_tau(m);
  AbstractionReport r = check_naturality(m, m, cm, tau);
  CHECK(r.pass);
  CHECK(r.max_residual <= 1e-12);
  REQUIRE(r.entries.size() == 2);

  AbstractionReport c1 = check_interventional_consistency(m, m, cm, tau, ConsistencyScope::node_pairs);
  AbstractionReport c2 = check_interventional_consistency(m, m, cm, tau, ConsistencyScope::all_subset_pairs);
  CHECK(c1.pass);
  CHECK(c2.pass);
}

TEST_CASE("merging equal mechanism rows is natural") {
  CausalModel low = mergeable_low(), high = mergeable_high();
  ClusterMap cm = identity_cluster_map(low.graph.nodes());
  TauFamily tau = mergeable_tau(low, high);
  CHECK(check_naturality(low, high, cm, tau).pass);
  CHECK(check_interventional_consistency(low, high, cm, tau, ConsistencyScope::node_pairs).pass);
  CHECK(check_interventional_consistency(low, high, cm, tau, ConsistencyScope::all_subset_pairs).pass);
}

TEST_CASE("merging values with unequal rows breaks the squares") {
  CausalModel low = clash_low(), high = clash_high();
  ClusterMap cm = identity_cluster_map(low.graph.nodes());
  TauFamily tau = clash_tau(low, high);

  AbstractionReport nat = check_naturality(low, high, cm, tau);
  CHECK_FALSE(nat.pass);
  CHECK_THAT(nat.max_residual, WithinAbs(0.3, 1e-12));
  bool has_witness = false;
  for (const auto& e : nat.entries)
    if (!e.witnesses.empty()) has_witness = true;
  CHECK(has_witness);

  AbstractionReport cons =
      check_interventional_consistency(low, high, cm, tau, ConsistencyScope::all_subset_pairs);
  CHECK_FALSE(cons.pass);
  AbstractionReport pairs =
      check_interventional_consistency(low, high, cm, tau, ConsistencyScope::node_pairs);
  CHECK_FALSE(pairs.pass);
}

TEST_CASE("non surjective tau components are rejected") {
  CausalModel low = mergeable_low(), high = mergeable_high();
  ClusterMap cm = identity_cluster_map(low.graph.nodes());
  TauFamily tau = mergeable_tau(low, high);
  tau["B"].table = {0, 0, 0};  // nothing maps to the second high value
  try {
    check_naturality(low, high, cm, tau);
    FAIL("expected not_surjective");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::not_surjective);
  }
}

TEST_CASE("tau components must take exactly the cluster members") {
  CausalModel low = mergeable_low(), high = mergeable_high();
  ClusterMap cm = identity_cluster_map(low.graph.nodes());
  TauFamily tau = mergeable_tau(low, high);
  tau["B"].inputs = {low.var_of("A")};
  tau["B"].table = {0, 1};
  CHECK_THROWS_AS(check_naturality(low, high, cm, tau), Error);

  TauFamily missing = mergeable_tau(low, high);
  missing.erase("A");
  CHECK_THROWS_AS(check_naturality(low, high, cm, missing), Error);
}

TEST_CASE("derived epsilon renormalizes the fiber masses") {
  CausalModel m = build_model({"A"}, {}, {{"A", dom(3)}}, {{"A", {{0.1, 0.3, 0.6}}}});
  ClusterMap cm = identity_cluster_map({"A"});
  TauFamily tau;
  tau["A"] = TotalMap{{m.var_of("A")}, Var{"A", dom(2)}, {0, 0, 1}};
  EpsilonFamily eps = epsilon_from_tau(m, cm, tau);
  const Kernel& e = eps.at("A");
  REQUIRE(e.n_rows() == 2);
  REQUIRE(e.n_cols() == 3);
  CHECK_THAT(e.at(0, 0), WithinAbs(0.25, 1e-12));
  CHECK_THAT(e.at(0, 1), WithinAbs(0.75, 1e-12));
  CHECK_THAT(e.at(0, 2), WithinAbs(0.0, 1e-15));
  CHECK_THAT(e.at(1, 2), WithinAbs(1.0, 1e-15));
}

TEST_CASE("identity tau yields the identity epsilon") {
  CausalModel m = testsupport::ab_model();
  ClusterMap cm = identity_cluster_map(m.graph.nodes());
  EpsilonFamily eps = epsilon_from_tau(m, cm, identity_tau(m));
  for (const auto& [node, e] : eps) {
    REQUIRE(e.n_rows() == e.n_cols());
    for (std::size_t v = 0; v < e.n_rows(); ++v)
      for (std::size_t a = 0; a < e.n_cols(); ++a)
        CHECK_THAT(e.at(v, a), WithinAbs(v == a ? 1.0 : 0.0, 1e-12));
  }
}

TEST_CASE("an unreachable high value has no epsilon row") {
  CausalModel m = build_model({"A"}, {}, {{"A", dom(3)}}, {{"A", {{0.5, 0.5, 0.0}}}});
  ClusterMap cm = identity_cluster_map({"A"});
  TauFamily tau;
  tau["A"] = TotalMap{{m.var_of("A")}, Var{"A", dom(2)}, {0, 0, 1}};
  try {
    epsilon_from_tau(m, cm, tau);
    FAIL("expected zero_cluster_mass");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::zero_cluster_mass);
  }
}

TEST_CASE("derived epsilon is a section of tau") {
  CausalModel low = chain_low();
  ClusterMap cm = identity_cluster_map(low.graph.nodes());
  TauFamily tau = chain_tau(low, chain_high());
  EpsilonFamily eps = epsilon_from_tau(low, cm, tau);
  AbstractionReport r = check_right_inverse(tau, eps);
  CHECK(r.pass);
  CHECK(r.max_residual <= 1e-12);
}

TEST_CASE("a point mass outside the fiber is not a section") {
  CausalModel low = chain_low();
  TauFamily tau = chain_tau(low, chain_high());
  EpsilonFamily eps;
  Kernel bad;
  bad.inputs = {tau.at("B").output};
  bad.outputs = {low.var_of("B")};
  bad.table = {0.0, 0.0, 1.0,   // pretends the first high value sits at member value 2
               0.0, 0.0, 1.0};
  eps["B"] = bad;
  TauFamily only_b;
  only_b["B"] = tau.at("B");
  AbstractionReport r = check_right_inverse(only_b, eps);
  CHECK_FALSE(r.pass);
  CHECK(r.max_residual >= 0.5);
}

TEST_CASE("the chain clustering is effect focused but not natural") {
  CausalModel low = chain_low(), high = chain_high();
  ClusterMap cm = identity_cluster_map(low.graph.nodes());
  TauFamily tau = chain_tau(low, high);

  AbstractionReport nat = check_naturality(low, high, cm, tau);
  CHECK_FALSE(nat.pass);
  CHECK(nat.max_residual >= 1e-3);
  CHECK_THAT(nat.max_residual, WithinAbs(0.525, 1e-9));

  EpsilonFamily eps = epsilon_from_tau(low, cm, tau);
  AbstractionReport eff = check_effect_focused(low, high, cm, eps);
  CHECK(eff.pass);

  AbstractionReport suff = check_sufficient_statistic(low, cm, tau);
  CHECK(suff.pass);
}

TEST_CASE("identity epsilon passes the effect checks") {
  CausalModel m = testsupport::ab_model();
  ClusterMap cm = identity_cluster_map(m.graph.nodes());
  EpsilonFamily eps = epsilon_from_tau(m, cm, identity_tau(m));
  AbstractionReport r = check_effect_focused(m, m, cm, eps);
  CHECK(r.pass);
  CHECK(r.max_residual <= 1e-12);
}

TEST_CASE("an epsilon row off the conditional law fails the transition check") {
  CausalModel low = chain_low(), high = chain_high();
  ClusterMap cm = identity_cluster_map(low.graph.nodes());
  EpsilonFamily eps = epsilon_from_tau(low, cm, chain_tau(low, high));
  Kernel& e = eps.at("B");
  e.at(0, 0) = 0.3;  // true conditional puts 0.25 here
  e.at(0, 1) = 0.7;
  AbstractionReport r = check_effect_focused(low, high, cm, eps);
  CHECK_FALSE(r.pass);
  bool transition_failed = false;
  for (const auto& entry : r.entries)
    if (entry.label == "transition(B)" && entry.residual > r.tolerance) transition_failed = true;
  CHECK(transition_failed);
}

TEST_CASE("overlapping epsilon supports admit no deterministic left inverse") {
  CausalModel low = chain_low(), high = chain_high();
  ClusterMap cm = identity_cluster_map(low.graph.nodes());
  EpsilonFamily eps = epsilon_from_tau(low, cm, chain_tau(low, high));
  Kernel& e = eps.at("B");
  e.at(0, 2) = 0.1;  // member value 2 already belongs to the other high value
  e.at(0, 0) = 0.225;
  e.at(0, 1) = 0.675;
  try {
    check_effect_focused(low, high, cm, eps);
    FAIL("expected no_left_inverse");
  } catch (const Error& err) {
    CHECK(err.code() == Errc::no_left_inverse);
  }
}

TEST_CASE("single valued clusters always carry a sufficient statistic") {
  CausalModel m = testsupport::ab_model();
  ClusterMap cm = identity_cluster_map(m.graph.nodes());
  AbstractionReport r = check_sufficient_statistic(m, cm, identity_tau(m));
  CHECK(r.pass);
  CHECK(r.max_residual <= 1e-12);
}

TEST_CASE("clustering values with distinct parent responses is detected") {
  CausalModel low = chain_low();
  ClusterMap cm = identity_cluster_map(low.graph.nodes());
  TauFamily tau = identity_tau(low);
  // merge member values 0 and 2 of B: they react differently to A
  tau["B"] = TotalMap{{low.var_of("B")}, Var{"B", dom(2)}, {0, 1, 0}};
  AbstractionReport r = check_sufficient_statistic(low, cm, tau);
  CHECK_FALSE(r.pass);
  CHECK(r.max_residual >= 1e-3);
}

TEST_CASE("composition with the identity changes nothing") {
  CausalModel low = chain_low(), high = chain_high();
  ClusterMap cm_id = identity_cluster_map(low.graph.nodes());
  TauFamily tau_id = identity_tau(low);
  ClusterMap cm = identity_cluster_map(low.graph.nodes());
  TauFamily tau = chain_tau(low, high);

  auto [cm13, tau13] = compose_abstractions(cm_id, tau_id, cm, tau);
  CHECK(cm13.low_nodes() == cm.low_nodes());
  CHECK(cm13.high_nodes() == cm.high_nodes());
  for (const auto& n : low.graph.nodes()) CHECK(cm13.image(n) == cm.image(n));
  for (const auto& [node, f] : tau) {
    REQUIRE(tau13.count(node));
    CHECK(tau13.at(node).table == f.table);
  }
}

namespace {

/// Bijective map from a variable block onto the product domain.
TotalMap product_map(const std::vector<Var>& inputs, const NodeId& out_id) {
  TotalMap f;
  f.inputs = inputs;
  f.output = Var{out_id, dom(joint_size(inputs))};
  f.table.resize(joint_size(inputs));
  for (std::size_t i = 0; i < f.table.size(); ++i) f.table[i] = i;
  return f;
}

}  // namespace

TEST_CASE("composing two chain merges equals the direct merge") {
  CausalModel low = chain_low();

  // low -> mid: merge {A, B} into one node, keep C
  ClusterMap cm12(low.graph.nodes(), {"AB", "C"}, {{"A", "AB"}, {"B", "AB"}, {"C", "C"}});
  TauFamily tau12;
  tau12["AB"] = product_map({low.var_of("A"), low.var_of("B")}, "AB");
  tau12["C"] = identity_tau(low).at("C");

  // mid -> high: merge {AB, C} into one node
  ClusterMap cm23({"AB", "C"}, {"ABC"}, {{"AB", "ABC"}, {"C", "ABC"}});
  TauFamily tau23;
  tau23["ABC"] = product_map({tau12.at("AB").output, low.var_of("C")}, "ABC");

  auto [cm13, tau13] = compose_abstractions(cm12, tau12, cm23, tau23);
  CHECK(cm13.cluster("ABC") == std::vector<NodeId>{"A", "B", "C"});

  TotalMap direct = product_map({low.var_of("A"), low.var_of("B"), low.var_of("C")}, "ABC");
  REQUIRE(tau13.count("ABC"));
  CHECK(tau13.at("ABC").table == direct.table);
  CHECK(tau13.at("ABC").inputs == direct.inputs);
}

TEST_CASE("disjoint cluster merges compose in either order") {
  CausalModel low = build_model({"A", "B", "C", "D"}, {},
                                {{"A", dom(2)}, {"B", dom(2)}, {"C", dom(2)}, {"D", dom(2)}},
                                {{"A", {{0.5, 0.5}}},
                                 {"B", {{0.4, 0.6}}},
                                 {"C", {{0.3, 0.7}}},
                                 {"D", {{0.2, 0.8}}}});
  TauFamily tid = identity_tau(low);

  // first merge {A,B}, then {C,D}
  ClusterMap m1(low.graph.nodes(), {"AB", "C", "D"}, {{"A", "AB"}, {"B", "AB"}, {"C", "C"}, {"D", "D"}});
  TauFamily t1;
  t1["AB"] = product_map({low.var_of("A"), low.var_of("B")}, "AB");
  t1["C"] = tid.at("C");
  t1["D"] = tid.at("D");
  ClusterMap m2({"AB", "C", "D"}, {"AB", "CD"}, {{"AB", "AB"}, {"C", "CD"}, {"D", "CD"}});
  TauFamily t2;
  t2["AB"] = TotalMap{{t1.at("AB").output}, t1.at("AB").output, {0, 1, 2, 3}};
  t2["CD"] = product_map({low.var_of("C"), low.var_of("D")}, "CD");
  auto [cma, taua] = compose_abstractions(m1, t1, m2, t2);

  // first merge {C,D}, then {A,B}
  ClusterMap m3(low.graph.nodes(), {"A", "B", "CD"}, {{"A", "A"}, {"B", "B"}, {"C", "CD"}, {"D", "CD"}});
  TauFamily t3;
  t3["A"] = tid.at("A");
  t3["B"] = tid.at("B");
  t3["CD"] = product_map({low.var_of("C"), low.var_of("D")}, "CD");
  ClusterMap m4({"A", "B", "CD"}, {"AB", "CD"}, {{"A", "AB"}, {"B", "AB"}, {"CD", "CD"}});
  TauFamily t4;
  t4["AB"] = product_map({low.var_of("A"), low.var_of("B")}, "AB");
  t4["CD"] = TotalMap{{t3.at("CD").output}, t3.at("CD").output, {0, 1, 2, 3}};
  auto [cmb, taub] = compose_abstractions(m3, t3, m4, t4);

  for (const auto& n : low.graph.nodes()) CHECK(cma.image(n) == cmb.image(n));
  for (const auto& h : {"AB", "CD"}) {
    CHECK(taua.at(h).table == taub.at(h).table);
    CHECK(taua.at(h).inputs == taub.at(h).inputs);
  }
}

TEST_CASE("composition requires a shared middle level") {
  CausalModel low = chain_low();
  ClusterMap cm12(low.graph.nodes(), {"AB", "C"}, {{"A", "AB"}, {"B", "AB"}, {"C", "C"}});
  TauFamily tau12;
  tau12["AB"] = product_map({low.var_of("A"), low.var_of("B")}, "AB");
  tau12["C"] = identity_tau(low).at("C");
  ClusterMap cm23({"XY", "C"}, {"ALL"}, {{"XY", "ALL"}, {"C", "ALL"}});
  try {
    compose_abstractions(cm12, tau12, cm23, TauFamily{});
    FAIL("expected incompatible_composition");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::incompatible_composition);
  }
}

TEST_CASE("a joint map assembled from components factorizes") {
  CausalModel low = chain_low();
  TauFamily tau = chain_tau(low, chain_high());

  Kernel joint_tau;
  joint_tau.inputs = {low.var_of("A"), low.var_of("B"), low.var_of("C")};
  joint_tau.outputs = {tau.at("A").output, tau.at("B").output, tau.at("C").output};
  std::size_t rows = joint_size(joint_tau.inputs), cols = joint_size(joint_tau.outputs);
  joint_tau.table.assign(rows * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    auto digits = unrank(joint_tau.inputs, r);
    std::vector<std::size_t> image{tau.at("A").table[digits[0]], tau.at("B").table[digits[1]],
                                   tau.at("C").table[digits[2]]};
    joint_tau.at(r, rank(joint_tau.outputs, image)) = 1.0;
  }
  CHECK(check_factorization_of_tau(tau, joint_tau).pass);

  // swapping the images of two rows breaks the product structure
  Kernel twisted = joint_tau;
  for (std::size_t c = 0; c < cols; ++c) std::swap(twisted.at(0, c), twisted.at(1, c));
  CHECK_FALSE(check_factorization_of_tau(tau, twisted).pass);

  Kernel misshapen = joint_tau;
  std::swap(misshapen.inputs[0], misshapen.inputs[1]);
  CHECK_THROWS_AS(check_factorization_of_tau(tau, misshapen), Error);
}

TEST_CASE("the derived high model reproduces a natural instance") {
  CausalModel low = mergeable_low(), high = mergeable_high();
  ClusterMap cm = identity_cluster_map(low.graph.nodes());
  TauFamily tau = mergeable_tau(low, high);
  CausalModel derived = derive_high_model(low, high.graph, cm, tau);
  validate_model(derived);
  for (const auto& n : high.graph.nodes())
    CHECK(max_abs_diff(derived.mechanism_of(n).table, high.mechanism_of(n).table) <= 1e-12);
  CHECK(check_naturality(low, derived, cm, tau).pass);
}

TEST_CASE("the derived high model of a non natural clustering fails the squares") {
  CausalModel low = chain_low();
  CausalModel high = chain_high();
  ClusterMap cm = identity_cluster_map(low.graph.nodes());
  TauFamily tau = chain_tau(low, high);
  CausalModel derived = derive_high_model(low, high.graph, cm, tau);
  validate_model(derived);
  CHECK_FALSE(check_naturality(low, derived, cm, tau).pass);
}

TEST_CASE("naturality verdicts match all subset consistency verdicts") {
  std::mt19937 rng(20260819);
  int pass_count = 0, fail_count = 0;
  for (int iter = 0; iter < 60; ++iter) {
    testsupport::NaturalInstance inst = testsupport::make_natural_instance(rng);
    if (testsupport::pick(rng, 0, 1)) testsupport::perturb_model(rng, inst.high);
    AbstractionReport nat = check_naturality(inst.low, inst.high, inst.cm, inst.tau);
    AbstractionReport cons = check_interventional_consistency(inst.low, inst.high, inst.cm, inst.tau,
                                                              ConsistencyScope::all_subset_pairs);
    INFO("iteration " << iter);
    REQUIRE(nat.pass == cons.pass);
    (nat.pass ? pass_count : fail_count) += 1;
  }
  CHECK(pass_count >= 10);
  CHECK(fail_count >= 10);
}

TEST_CASE("derived epsilons are sections on random instances") {
  std::mt19937 rng(31);
  int done = 0;
  for (int iter = 0; iter < 80 && done < 40; ++iter) {
    CausalModel low = testsupport::random_model(rng, testsupport::pick(rng, 1, 4));
    ClusterMap cm;
    try {
      cm = testsupport::random_cluster_assignment(rng, low.graph.nodes(),
                                                  testsupport::pick(rng, 1, low.graph.nodes().size()), 0.0);
    } catch (const Error&) {
      continue;
    }
    TauFamily tau = testsupport::random_tau(rng, low, cm);
    EpsilonFamily eps;
    try {
      eps = epsilon_from_tau(low, cm, tau);
    } catch (const Error& e) {
      REQUIRE(e.code() == Errc::zero_cluster_mass);
      continue;
    }
    AbstractionReport r = check_right_inverse(tau, eps);
    INFO("iteration " << iter);
    REQUIRE(r.pass);
    ++done;
  }
  CHECK(done >= 20);
}

TEST_CASE("natural instances stay natural under composition with identity") {
  std::mt19937 rng(47);
  testsupport::NaturalInstance inst = testsupport::make_natural_instance(rng);
  ClusterMap cm_id = identity_cluster_map(inst.low.graph.nodes());
  TauFamily tau_id = identity_tau(inst.low);
  auto [cm2, tau2] = compose_abstractions(cm_id, tau_id, inst.cm, inst.tau);
  CHECK(check_naturality(inst.low, inst.high, cm2, tau2).pass);
}

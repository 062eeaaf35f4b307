#pragma once

#include <string>
#include <vector>

#include "causalabs/cluster_map.hpp"
#include "causalabs/errors.hpp"
#include "causalabs/graph.hpp"

namespace causalabs {

/// An interventional query signature: which nodes are intervened and which
/// are read off. The two sets are disjoint; either may be empty (empty do =
/// observational, empty outcome = trivial query). Node lists are kept in
/// graph declaration order.
struct Query {
  std::vector<NodeId> do_set;
  std::vector<NodeId> outcome_set;

  bool operator==(const Query&) const = default;
};

/// All 3^n query signatures of a graph, in a fixed order: assignments are
/// enumerated mixed-radix over the declaration order (rightmost fastest)
/// with trit 0 = absent, 1 = intervened, 2 = outcome.
inline std::vector<Query> enumerate_queries(const Dag& g) {
  const auto& nodes = g.nodes();
  std::size_t n = nodes.size();
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= 3;
  std::vector<Query> out;
  out.reserve(total);
  for (std::size_t code = 0; code < total; ++code) {
    Query q;
    std::size_t rest = code;
    std::vector<std::size_t> trits(n);
    for (std::size_t i = n; i-- > 0;) {
      trits[i] = rest % 3;
      rest /= 3;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (trits[i] == 1) q.do_set.push_back(nodes[i]);
      if (trits[i] == 2) q.outcome_set.push_back(nodes[i]);
    }
    out.push_back(std::move(q));
  }
  return out;
}

/// Translate a high-level query along a validated cluster map: every high
/// node is replaced by its cluster members (low declaration order within
/// each cluster). Requires a witness from validate_cluster_map; passing a
/// failed witness is an error.
inline Query map_query(const MapWitness& witness, const Query& q) {
  if (!witness.valid)
    fail(Errc::unvalidated_cluster_map, "map_query requires a successfully validated cluster map");
  const ClusterMap& cm = witness.map;
  std::set<NodeId> seen;
  for (const auto& n : q.do_set)
    if (!seen.insert(n).second) fail(Errc::invalid_query, "duplicate node '" + n + "' in query");
  for (const auto& n : q.outcome_set)
    if (!seen.insert(n).second)
      fail(Errc::invalid_query, "query do and outcome sets share node '" + n + "'");
  Query low;
  low.do_set = cm.members_of(q.do_set);
  low.outcome_set = cm.members_of(q.outcome_set);
  return low;
}

}  // namespace causalabs

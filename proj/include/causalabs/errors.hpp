#pragma once

#include <stdexcept>
#include <string>

namespace causalabs {

/// Machine-checkable reason attached to every causalabs::Error.
enum class Errc {
  unknown_node,
  duplicate_node,
  invalid_graph,
  merge_creates_cycle,
  is_confounder,
  invalid_cluster_map,
  unvalidated_cluster_map,
  invalid_query,
  shape_mismatch,
  non_stochastic_row,
  zero_evidence,
  zero_cluster_mass,
  no_left_inverse,
  not_surjective,
  not_deterministic,
  factorization_violation,
  incompatible_composition,
  inconclusive_all_zero_mass,
  size_limit,
  parse_error,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::unknown_node: return "unknown_node";
    case Errc::duplicate_node: return "duplicate_node";
    case Errc::invalid_graph: return "invalid_graph";
    case Errc::merge_creates_cycle: return "merge_creates_cycle";
    case Errc::is_confounder: return "is_confounder";
    case Errc::invalid_cluster_map: return "invalid_cluster_map";
    case Errc::unvalidated_cluster_map: return "unvalidated_cluster_map";
    case Errc::invalid_query: return "invalid_query";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::non_stochastic_row: return "non_stochastic_row";
    case Errc::zero_evidence: return "zero_evidence";
    case Errc::zero_cluster_mass: return "zero_cluster_mass";
    case Errc::no_left_inverse: return "no_left_inverse";
    case Errc::not_surjective: return "not_surjective";
    case Errc::not_deterministic: return "not_deterministic";
    case Errc::factorization_violation: return "factorization_violation";
    case Errc::incompatible_composition: return "incompatible_composition";
    case Errc::inconclusive_all_zero_mass: return "inconclusive_all_zero_mass";
    case Errc::size_limit: return "size_limit";
    case Errc::parse_error: return "parse_error";
  }
  return "unknown";
}

/// Library-wide exception type. `code()` identifies the failure class,
/// `what()` carries a human-readable description.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace causalabs

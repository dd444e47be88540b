#pragma once

#include <span>
#include <vector>

#include "marge/env.hpp"
#include "marge/policy.hpp"

namespace marge {

/// Exact V(s) = sum_a pi(a|s) V(s + a), with V(terminal) = its label.
double exact_state_value(const ReasoningEnv& env, const TabularPolicy& policy, std::span<const Action> state);

/// Exact values for every node, computed leaves-up in one pass.
struct ValueTable {
  std::vector<double> nonterminal;  // indexed by TreeShape::node_index
  std::vector<double> leaf;         // indexed by TreeShape::leaf_index
  double at(const TreeShape& shape, std::span<const Action> prefix) const;
};
ValueTable exact_values(const ReasoningEnv& env, const TabularPolicy& policy);

/// Probability of reaching each prefix from the root, one entry per node.
struct ReachTable {
  std::vector<double> nonterminal;
  std::vector<double> leaf;
};
ReachTable reach_probabilities(const ReasoningEnv& env, const TabularPolicy& policy);

struct WeightedCompletion {
  Trajectory trajectory;
  double probability = 0.0;
};

/// Every completion of `state` with its exact probability, in leaf order.
/// Throws kBoundExceeded when the subtree has more than `max_leaves` leaves.
std::vector<WeightedCompletion> enumerate_completions(const ReasoningEnv& env, const TabularPolicy& policy,
                                                      std::span<const Action> state,
                                                      std::size_t max_leaves = kMaxLeaves);

}  // namespace marge

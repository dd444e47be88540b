#include "marge/oracles.hpp"

#include "marge/error.hpp"

namespace marge {
namespace {

void check_pair(const ReasoningEnv& env, const TabularPolicy& policy) {
  require(env.shape() == policy.shape(), "policy and environment shapes differ");
}

double subtree_value(const ReasoningEnv& env, const TabularPolicy& policy, ActionSeq& state) {
  if (state.size() == env.depth()) return env.reward(state);
  const std::size_t b = env.branching();
  std::vector<double> p(b);
  policy.probs_at(env.shape().node_index(state), p);
  double v = 0.0;
  for (std::size_t a = 0; a < b; ++a) {
    state.push_back(static_cast<Action>(a));
    v += p[a] * subtree_value(env, policy, state);
    state.pop_back();
  }
  return v;
}

}  // namespace

double exact_state_value(const ReasoningEnv& env, const TabularPolicy& policy, std::span<const Action> state) {
  check_pair(env, policy);
  require(env.valid_state(state), "unknown state '" + prefix_key(state) + "'");
  ActionSeq s(state.begin(), state.end());
  return subtree_value(env, policy, s);
}

double ValueTable::at(const TreeShape& shape, std::span<const Action> prefix) const {
  if (shape.is_terminal(prefix)) return leaf[shape.leaf_index(prefix)];
  return nonterminal[shape.node_index(prefix)];
}

ValueTable exact_values(const ReasoningEnv& env, const TabularPolicy& policy) {
  check_pair(env, policy);
  const TreeShape& shape = env.shape();
  const std::size_t b = shape.branching();
  ValueTable out;
  out.leaf.assign(env.terminal_labels().begin(), env.terminal_labels().end());
  out.nonterminal.assign(shape.nonterminal_count(), 0.0);
  std::vector<double> p(b);
  for (std::uint32_t len = shape.depth(); len-- > 0;) {
    const bool children_are_leaves = len + 1 == shape.depth();
    for (std::size_t v = 0; v < shape.level_size(len); ++v) {
      const std::size_t node = shape.level_offset(len) + v;
      policy.probs_at(node, p);
      double value = 0.0;
      for (std::size_t a = 0; a < b; ++a) {
        const std::size_t child = v * b + a;
        value += p[a] * (children_are_leaves ? out.leaf[child]
                                             : out.nonterminal[shape.level_offset(len + 1) + child]);
      }
      out.nonterminal[node] = value;
    }
  }
  return out;
}

ReachTable reach_probabilities(const ReasoningEnv& env, const TabularPolicy& policy) {
  check_pair(env, policy);
  const TreeShape& shape = env.shape();
  const std::size_t b = shape.branching();
  ReachTable out;
  out.nonterminal.assign(shape.nonterminal_count(), 0.0);
  out.leaf.assign(shape.leaf_count(), 0.0);
  out.nonterminal[0] = 1.0;
  std::vector<double> p(b);
  for (std::uint32_t len = 0; len < shape.depth(); ++len) {
    const bool children_are_leaves = len + 1 == shape.depth();
    for (std::size_t v = 0; v < shape.level_size(len); ++v) {
      const std::size_t node = shape.level_offset(len) + v;
      policy.probs_at(node, p);
      for (std::size_t a = 0; a < b; ++a) {
        const double reach = out.nonterminal[node] * p[a];
        if (children_are_leaves) {
          out.leaf[v * b + a] = reach;
        } else {
          out.nonterminal[shape.level_offset(len + 1) + v * b + a] = reach;
        }
      }
    }
  }
  return out;
}

std::vector<WeightedCompletion> enumerate_completions(const ReasoningEnv& env, const TabularPolicy& policy,
                                                      std::span<const Action> state, std::size_t max_leaves) {
  check_pair(env, policy);
  require(env.valid_state(state), "unknown state '" + prefix_key(state) + "'");
  const TreeShape& shape = env.shape();
  const auto [first, last] = shape.leaf_range(state);
  if (last - first > max_leaves) {
    fail(ErrorCode::kBoundExceeded, "subtree of '" + prefix_key(state) + "' has " + std::to_string(last - first) +
                                        " completions, above the enumeration bound");
  }
  const std::size_t remaining = shape.depth() - state.size();
  std::vector<WeightedCompletion> out;
  out.reserve(last - first);
  std::vector<double> p(shape.branching());
  for (std::size_t leaf = first; leaf < last; ++leaf) {
    const ActionSeq full = shape.prefix_at(shape.depth(), leaf);
    WeightedCompletion c;
    c.trajectory.start_state.assign(state.begin(), state.end());
    c.trajectory.actions.assign(full.end() - static_cast<std::ptrdiff_t>(remaining), full.end());
    c.trajectory.reward = env.terminal_labels()[leaf];
    double prob = 1.0;
    ActionSeq s(state.begin(), state.end());
    for (Action a : c.trajectory.actions) {
      policy.probs_at(shape.node_index(s), p);
      prob *= p[a];
      s.push_back(a);
    }
    c.probability = prob;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace marge

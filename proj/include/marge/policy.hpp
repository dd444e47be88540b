#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "marge/env.hpp"
#include "marge/rng.hpp"
#include "marge/tree.hpp"

namespace marge {

/// Dense table shaped like a policy's logits: one row of `branching` entries
/// per nonterminal state.
class GradientTable {
 public:
  GradientTable() = default;
  explicit GradientTable(const TreeShape& shape) : shape_(shape), values_(shape.nonterminal_count() * shape.branching(), 0.0) {}

  const TreeShape& shape() const noexcept { return shape_; }
  std::span<const double> row(std::size_t node) const { return {values_.data() + node * shape_.branching(), shape_.branching()}; }
  std::span<double> row(std::size_t node) { return {values_.data() + node * shape_.branching(), shape_.branching()}; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::vector<double>& values() noexcept { return values_; }

  GradientTable& operator+=(const GradientTable& other);
  GradientTable& operator*=(double s);
  double squared_norm() const;
  double max_abs() const;

 private:
  TreeShape shape_;
  std::vector<double> values_;
};

/// Softmax-over-logits policy with one logit vector per nonterminal state.
/// Probabilities are softmax(logits / temperature).
class TabularPolicy {
 public:
  TabularPolicy() = default;
  // Uniform policy (all logits zero).
  explicit TabularPolicy(const TreeShape& shape, double temperature = 1.0);
  static TabularPolicy for_env(const ReasoningEnv& env, double temperature = 1.0) {
    return TabularPolicy(env.shape(), temperature);
  }
  // Logits drawn uniformly from [-scale, scale].
  static TabularPolicy random(const TreeShape& shape, std::uint64_t seed, double scale, double temperature = 1.0);

  const TreeShape& shape() const noexcept { return shape_; }
  double temperature() const noexcept { return temperature_; }
  const std::vector<double>& logits() const noexcept { return logits_; }
  std::vector<double>& logits() noexcept { return logits_; }
  std::span<const double> logits_at(std::size_t node) const { return {logits_.data() + node * shape_.branching(), shape_.branching()}; }
  std::span<double> logits_at(std::size_t node) { return {logits_.data() + node * shape_.branching(), shape_.branching()}; }

  void probs_at(std::size_t node, std::span<double> out) const;
  std::vector<double> probs_at(std::size_t node) const;
  // Throws for terminal or invalid states.
  std::vector<double> action_probs(std::span<const Action> state) const;
  // Argmax with ties going to the lowest index.
  Action greedy_action(std::size_t node) const;

  // Sum of log pi(a_t | s_t) along `actions` taken from `start`.
  double log_prob(std::span<const Action> start, std::span<const Action> actions) const;
  GradientTable grad_log_prob(std::span<const Action> start, std::span<const Action> actions) const;
  // out += weight * grad log_prob(start, actions)
  void accumulate_grad_log_prob(std::span<const Action> start, std::span<const Action> actions, double weight,
                                GradientTable& out) const;

  // logits -= step * grad
  void apply_gradient(const GradientTable& grad, double step);

  std::string to_json() const;
  static TabularPolicy from_json(const std::string& text);

  bool operator==(const TabularPolicy&) const = default;

 private:
  void check_path(std::span<const Action> start, std::span<const Action> actions) const;

  TreeShape shape_;
  double temperature_ = 1.0;
  std::vector<double> logits_;
};

/// Draws each remaining step i.i.d. from the policy. A terminal start yields an
/// empty completion.
Trajectory sample_completion(const TabularPolicy& policy, const ReasoningEnv& env, std::span<const Action> start,
                             RngStream& rng);

/// KL(P_policy || P_reference) over complete responses from the root.
double kl_exact(const TabularPolicy& policy, const TabularPolicy& reference, const ReasoningEnv& env);

/// Frozen deep copy used as pi_ref.
inline TabularPolicy snapshot_reference(const TabularPolicy& policy) { return policy; }

}  // namespace marge

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "marge/env.hpp"
#include "marge/policy.hpp"
#include "marge/rng.hpp"

namespace marge {

/// n completions sampled from one start state, with the Monte-Carlo value
/// estimate v_hat = mean(rewards).
struct StateRolloutGroup {
  std::size_t task_id = 0;
  ActionSeq start_state;
  std::vector<Trajectory> completions;
  std::vector<int> rewards;
  double v_hat = 0.0;
};

/// (1/n) * sum of rewards. Throws on an empty group.
double mc_value_estimate(const StateRolloutGroup& group);

enum class SplitMode { kPerStep, kEven };

struct Decomposition {
  SplitMode mode = SplitMode::kPerStep;
  std::uint32_t count = 5;  // used by kEven only

  static Decomposition per_step() { return {SplitMode::kPerStep, 0}; }
  static Decomposition even(std::uint32_t count) { return {SplitMode::kEven, count}; }
  // Per-step for depth <= 8, even(5) beyond.
  static Decomposition default_for_depth(std::uint32_t depth) {
    return depth <= 8 ? per_step() : even(5);
  }
};

/// Intermediate states of a complete response, root first. The terminal is
/// never included. Even mode takes prefix lengths floor(i*H/count),
/// i = 0..count-1, with duplicates dropped.
std::vector<ActionSeq> decompose_states(const Trajectory& traj, Decomposition mode);

/// Samples `n` completions of `start`. Sample k of the group draws from
/// streams.stream(task_id, node_index(start), first_sample + k).
StateRolloutGroup collect_group(const TabularPolicy& policy, const ReasoningEnv& env, std::size_t task_id,
                                std::span<const Action> start, std::size_t n, const StreamFactory& streams,
                                std::size_t first_sample = 0);

/// Baseline: every sample starts at the root.
StateRolloutGroup vanilla_explore(const TabularPolicy& policy, const ReasoningEnv& env, std::size_t total_samples,
                                  const StreamFactory& streams, std::size_t task_id = 0);

/// One group of `n_per_state` fresh completions for every intermediate state
/// of `guidance`, in decompose_states order. The guidance's own suffix is not
/// reused as a sample.
std::vector<StateRolloutGroup> hit_guided_explore(const TabularPolicy& policy, const ReasoningEnv& env,
                                                  const Trajectory& guidance, std::size_t n_per_state,
                                                  Decomposition mode, const StreamFactory& streams,
                                                  std::size_t task_id = 0);

/// Total sampled actions across all completions.
std::uint64_t generation_cost(std::span<const StateRolloutGroup> groups);
inline std::uint64_t generation_cost(const StateRolloutGroup& group) { return generation_cost({&group, 1}); }

/// Cost hit_guided_explore will incur for this guidance, without sampling.
std::uint64_t planned_hit_guided_cost(const Trajectory& guidance, std::size_t n_per_state, Decomposition mode);

/// CSV: task_id,state_len,sample_idx,actions,reward (actions as a dotted key).
void write_rollout_csv(std::ostream& out, std::span<const StateRolloutGroup> groups);

}  // namespace marge

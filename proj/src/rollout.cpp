#include "marge/rollout.hpp"

#include <algorithm>
#include <ostream>

#include "marge/error.hpp"

namespace marge {

double mc_value_estimate(const StateRolloutGroup& group) {
  require(!group.rewards.empty(), "value estimate of an empty rollout group");
  long total = 0;
  for (int r : group.rewards) total += r;
  return static_cast<double>(total) / static_cast<double>(group.rewards.size());
}

std::vector<ActionSeq> decompose_states(const Trajectory& traj, Decomposition mode) {
  const ActionSeq full = traj.full();
  const std::size_t horizon = full.size();
  require(horizon >= 1, "cannot decompose an empty response");
  std::vector<std::size_t> lengths;
  if (mode.mode == SplitMode::kPerStep) {
    for (std::size_t len = 0; len < horizon; ++len) lengths.push_back(len);
  } else {
    require(mode.count >= 1, "even split needs at least one state");
    for (std::size_t i = 0; i < mode.count; ++i) lengths.push_back(i * horizon / mode.count);
    lengths.erase(std::unique(lengths.begin(), lengths.end()), lengths.end());
  }
  std::vector<ActionSeq> states;
  states.reserve(lengths.size());
  for (std::size_t len : lengths) states.emplace_back(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(len));
  return states;
}

StateRolloutGroup collect_group(const TabularPolicy& policy, const ReasoningEnv& env, std::size_t task_id,
                                std::span<const Action> start, std::size_t n, const StreamFactory& streams,
                                std::size_t first_sample) {
  require(n >= 1, "a rollout group needs at least one sample");
  require(env.valid_state(start) && !env.shape().is_terminal(start),
          "rollout start '" + prefix_key(start) + "' is not an intermediate state");
  StateRolloutGroup g;
  g.task_id = task_id;
  g.start_state.assign(start.begin(), start.end());
  g.completions.reserve(n);
  g.rewards.reserve(n);
  const std::size_t state_id = env.shape().node_index(start);
  for (std::size_t k = 0; k < n; ++k) {
    RngStream rng = streams.stream(task_id, state_id, first_sample + k);
    g.completions.push_back(sample_completion(policy, env, start, rng));
    g.rewards.push_back(g.completions.back().reward);
  }
  g.v_hat = mc_value_estimate(g);
  return g;
}

StateRolloutGroup vanilla_explore(const TabularPolicy& policy, const ReasoningEnv& env, std::size_t total_samples,
                                  const StreamFactory& streams, std::size_t task_id) {
  return collect_group(policy, env, task_id, {}, total_samples, streams);
}

std::vector<StateRolloutGroup> hit_guided_explore(const TabularPolicy& policy, const ReasoningEnv& env,
                                                  const Trajectory& guidance, std::size_t n_per_state,
                                                  Decomposition mode, const StreamFactory& streams,
                                                  std::size_t task_id) {
  const ActionSeq full = guidance.full();
  require(env.valid_state(full) && env.shape().is_terminal(full),
          "guidance '" + prefix_key(full) + "' is not a complete trajectory of the environment");
  std::vector<StateRolloutGroup> groups;
  for (const ActionSeq& state : decompose_states(guidance, mode)) {
    groups.push_back(collect_group(policy, env, task_id, state, n_per_state, streams));
  }
  return groups;
}

std::uint64_t generation_cost(std::span<const StateRolloutGroup> groups) {
  std::uint64_t cost = 0;
  for (const auto& g : groups)
    for (const auto& c : g.completions) cost += c.actions.size();
  return cost;
}

std::uint64_t planned_hit_guided_cost(const Trajectory& guidance, std::size_t n_per_state, Decomposition mode) {
  const std::size_t horizon = guidance.start_state.size() + guidance.actions.size();
  std::uint64_t cost = 0;
  for (const ActionSeq& s : decompose_states(guidance, mode)) cost += (horizon - s.size()) * n_per_state;
  return cost;
}

void write_rollout_csv(std::ostream& out, std::span<const StateRolloutGroup> groups) {
  out << "task_id,state_len,sample_idx,actions,reward\n";
  for (const auto& g : groups) {
    for (std::size_t k = 0; k < g.completions.size(); ++k) {
      out << g.task_id << ',' << g.start_state.size() << ',' << k << ',' << prefix_key(g.completions[k].actions)
          << ',' << g.rewards[k] << '\n';
    }
  }
}

}  // namespace marge

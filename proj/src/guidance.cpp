#include "marge/guidance.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>

#include "marge/error.hpp"
#include "marge/parallel.hpp"

namespace marge {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kOurs: return "ours";
    case Strategy::kRandom: return "random";
    case Strategy::kSucc: return "succ";
    case Strategy::kNoUpdate: return "no-update";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "ours") return Strategy::kOurs;
  if (name == "random") return Strategy::kRandom;
  if (name == "succ") return Strategy::kSucc;
  if (name == "no-update") return Strategy::kNoUpdate;
  fail(ErrorCode::kConfig, "unknown guidance strategy '" + name + "'");
}

TaskGuidance& GuidancePool::at(std::size_t task_id) {
  require(task_id < tasks.size(), "unknown task id " + std::to_string(task_id));
  return tasks[task_id];
}

const TaskGuidance& GuidancePool::at(std::size_t task_id) const {
  require(task_id < tasks.size(), "unknown task id " + std::to_string(task_id));
  return tasks[task_id];
}

std::size_t GuidancePool::active_count() const {
  return static_cast<std::size_t>(std::count_if(tasks.begin(), tasks.end(), [](const auto& t) { return t.active; }));
}

GuidancePool init_candidates(std::span<const TabularPolicy> policies, std::span<const ReasoningEnv> tasks,
                             std::size_t n1, const StreamFactory& streams, unsigned workers) {
  require(n1 >= 1, "n1 must be >= 1");
  require(policies.size() == tasks.size(), "need one policy per task");
  GuidancePool pool;
  pool.tasks.resize(tasks.size());
  parallel_for(tasks.size(), workers, [&](std::size_t i) {
    const StateRolloutGroup g = vanilla_explore(policies[i], tasks[i], n1, streams, i);
    TaskGuidance& t = pool.tasks[i];
    t.task_id = i;
    t.candidates = g.completions;
    t.root_v_hat = g.v_hat;
  });
  return pool;
}

GuidancePool init_candidates(const TabularPolicy& policy, std::span<const ReasoningEnv> tasks, std::size_t n1,
                             const StreamFactory& streams, unsigned workers) {
  const std::vector<TabularPolicy> copies(tasks.size(), policy);
  return init_candidates(copies, tasks, n1, streams, workers);
}

Difficulty classify(const GuidancePool& pool, std::size_t task_id) {
  const TaskGuidance& t = pool.at(task_id);
  require(t.active, "task " + std::to_string(task_id) + " is inactive");
  return t.root_v_hat > 0.5 ? Difficulty::kEasy : Difficulty::kHard;
}

namespace {

void select_for_task(TaskGuidance& t, Strategy strategy, const StreamFactory& streams) {
  if (!t.active) return;
  const bool initial = !t.guidance.has_value();
  if (strategy == Strategy::kNoUpdate) {
    if (!initial) return;
    strategy = Strategy::kOurs;
  }
  std::vector<const Trajectory*> choices;
  for (const auto& c : t.candidates) {
    const bool take = strategy == Strategy::kRandom ||
                      (strategy == Strategy::kSucc && c.reward == 1) ||
                      (strategy == Strategy::kOurs && c.reward == (t.root_v_hat > 0.5 ? 0 : 1));
    if (take) choices.push_back(&c);
  }
  if (choices.empty()) {
    if (initial) {
      t.active = false;
      t.guidance.reset();
    } else {
      t.carried_over = true;
    }
    return;
  }
  RngStream rng = streams.stream(t.task_id, 0, 0);
  t.guidance = *choices[rng.below(choices.size())];
  t.carried_over = false;
}

}  // namespace

void select_guidance(GuidancePool& pool, Strategy strategy, const StreamFactory& streams) {
  for (auto& t : pool.tasks) select_for_task(t, strategy, streams);
}

void update_guidance(GuidancePool& pool, std::span<const StateRolloutGroup> latest, Strategy strategy,
                     const StreamFactory& streams) {
  std::map<std::size_t, std::vector<const StateRolloutGroup*>> by_task;
  for (const auto& g : latest) by_task[g.task_id].push_back(&g);
  for (const auto& [task_id, groups] : by_task) {
    TaskGuidance& t = pool.at(task_id);
    if (!t.active) continue;
    t.candidates.clear();
    for (const StateRolloutGroup* g : groups) {
      if (g->start_state.empty()) t.root_v_hat = g->v_hat;
      for (const Trajectory& c : g->completions) t.candidates.push_back(Trajectory{{}, c.full(), c.reward});
    }
    select_for_task(t, strategy, streams);
  }
}

void write_pool_csv(std::ostream& out, const GuidancePool& pool) {
  out << "task_id,active,root_v_hat,guidance_actions,guidance_reward,n_candidates\n";
  char buf[32];
  for (const auto& t : pool.tasks) {
    std::snprintf(buf, sizeof buf, "%.17g", t.root_v_hat);
    out << t.task_id << ',' << (t.active ? 1 : 0) << ',' << buf << ',';
    if (t.guidance) {
      out << prefix_key(t.guidance->full()) << ',' << t.guidance->reward;
    } else {
      out << ",";
    }
    out << ',' << t.candidates.size() << '\n';
  }
}

}  // namespace marge

#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "marge/env.hpp"
#include "marge/policy.hpp"
#include "marge/rng.hpp"
#include "marge/rollout.hpp"

namespace marge {

enum class Strategy { kOurs, kRandom, kSucc, kNoUpdate };
enum class Difficulty { kEasy, kHard };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& name);

/// Per-task hit candidates and the currently selected guidance.
struct TaskGuidance {
  std::size_t task_id = 0;
  std::vector<Trajectory> candidates;  // full responses from the root
  double root_v_hat = 0.0;
  std::optional<Trajectory> guidance;
  bool active = true;
  // Set when a later round had no candidate of the required class and the
  // previous guidance was kept.
  bool carried_over = false;
};

struct GuidancePool {
  std::vector<TaskGuidance> tasks;

  TaskGuidance& at(std::size_t task_id);
  const TaskGuidance& at(std::size_t task_id) const;
  std::size_t active_count() const;
};

/// n1 root samples per task; root_v_hat from them; guidance left unset.
/// policies[i] acts on tasks[i].
GuidancePool init_candidates(std::span<const TabularPolicy> policies, std::span<const ReasoningEnv> tasks,
                             std::size_t n1, const StreamFactory& streams, unsigned workers = 1);
GuidancePool init_candidates(const TabularPolicy& policy, std::span<const ReasoningEnv> tasks, std::size_t n1,
                             const StreamFactory& streams, unsigned workers = 1);

/// Easy iff root_v_hat > 0.5 (0.5 itself is hard). Throws for inactive tasks.
Difficulty classify(const GuidancePool& pool, std::size_t task_id);

/// Picks guidance for every active task.
///   ours:      hard -> random correct candidate, easy -> random incorrect one
///   random:    any candidate
///   succ:      random correct candidate
///   no-update: keep existing guidance; unset guidance is chosen as in ours
/// With no candidate of the required class, a task without guidance is
/// deactivated; a task that already has guidance keeps it (carried over).
void select_guidance(GuidancePool& pool, Strategy strategy, const StreamFactory& streams);

/// Replaces each touched task's candidates with this round's completions
/// (re-rooted as full responses), recomputes root_v_hat from the root group
/// only, and re-runs selection for those tasks.
void update_guidance(GuidancePool& pool, std::span<const StateRolloutGroup> latest, Strategy strategy,
                     const StreamFactory& streams);

/// CSV: task_id,active,root_v_hat,guidance_actions,guidance_reward,n_candidates
void write_pool_csv(std::ostream& out, const GuidancePool& pool);

}  // namespace marge

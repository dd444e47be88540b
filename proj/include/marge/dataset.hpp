#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "marge/rollout.hpp"

namespace marge {

struct BufferEntry {
  std::size_t task_id = 0;
  ActionSeq start_state;
  ActionSeq completion;
  int reward = 0;
  std::size_t group_id = 0;
};

/// Every explored completion, unfiltered. group_id indexes the source group.
struct RolloutBuffer {
  std::vector<BufferEntry> entries;
  std::size_t group_count = 0;

  bool empty() const noexcept { return entries.empty(); }
};

RolloutBuffer build_rl_buffer(std::span<const StateRolloutGroup> groups);

struct PreferencePair {
  std::size_t task_id = 0;
  ActionSeq start_state;
  Trajectory chosen;    // reward 1
  Trajectory rejected;  // reward 0
};

/// Groups whose v_hat falls outside [lo, hi] are dropped before pairing.
struct ValueFilter {
  double lo = 0.0;
  double hi = 1.0;

  // [1/n, 1 - 1/n]: keeps exactly the groups of size n holding both outcomes.
  static ValueFilter for_group_size(std::size_t n) {
    return {1.0 / static_cast<double>(n), 1.0 - 1.0 / static_cast<double>(n)};
  }
};

struct PairStats {
  std::size_t pairs = 0;
  double entropy_bits = 0.0;
  std::size_t groups_kept = 0;
  std::size_t groups_skipped = 0;

  std::string to_json() const;
};

struct PreferenceDataset {
  std::vector<PreferencePair> pairs;
  PairStats stats;
};

/// One (correct, incorrect) pair per kept group, each member drawn uniformly
/// from its class with streams.stream(task, group index, 0).
PreferenceDataset build_preference_dataset(std::span<const StateRolloutGroup> groups, ValueFilter filter,
                                           const StreamFactory& streams);

double binary_entropy_bits(double p);

/// Sample-weighted mean binary entropy of the groups' success rates, in bits.
double dataset_entropy(std::span<const StateRolloutGroup> groups);

/// Sum over groups of min(#correct, #incorrect).
std::size_t count_valid_pairs(std::span<const StateRolloutGroup> groups);

struct PairCounts {
  double hit_guided = 0.0;
  double vanilla = 0.0;
};

/// Expected valid pairs under the linear value model p_i = p0 +/- i*delta
/// (+ for correct guidance), m samples per state, states i = 0..n_states:
///   hit_guided = m * sum_i min(p_i, 1 - p_i)
///   vanilla    = (n_states + 1) * m * min(p0, 1 - p0)
PairCounts expected_pair_counts(double p0, double delta, std::size_t n_states, std::size_t m, bool guidance_correct);

/// CSV: task_id,state_len,chosen_actions,rejected_actions
void write_pairs_csv(std::ostream& out, std::span<const PreferencePair> pairs);

}  // namespace marge

#include "marge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <nlohmann/json.hpp>

#include "marge/error.hpp"

namespace marge {

RolloutBuffer build_rl_buffer(std::span<const StateRolloutGroup> groups) {
  RolloutBuffer buf;
  buf.group_count = groups.size();
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    for (std::size_t k = 0; k < g.completions.size(); ++k) {
      buf.entries.push_back({g.task_id, g.start_state, g.completions[k].actions, g.rewards[k], gi});
    }
  }
  return buf;
}

std::string PairStats::to_json() const {
  nlohmann::ordered_json j;
  j["pairs"] = pairs;
  j["entropy_bits"] = entropy_bits;
  j["groups_kept"] = groups_kept;
  j["groups_skipped"] = groups_skipped;
  return j.dump(2) + "\n";
}

PreferenceDataset build_preference_dataset(std::span<const StateRolloutGroup> groups, ValueFilter filter,
                                           const StreamFactory& streams) {
  require(filter.lo >= 0.0 && filter.lo < filter.hi && filter.hi <= 1.0, "value filter needs 0 <= lo < hi <= 1");
  PreferenceDataset out;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    std::vector<std::size_t> correct, incorrect;
    for (std::size_t k = 0; k < g.rewards.size(); ++k) (g.rewards[k] ? correct : incorrect).push_back(k);
    if (g.v_hat < filter.lo || g.v_hat > filter.hi || correct.empty() || incorrect.empty()) {
      ++out.stats.groups_skipped;
      continue;
    }
    RngStream rng = streams.stream(g.task_id, gi, 0);
    const std::size_t c = correct[rng.below(correct.size())];
    const std::size_t r = incorrect[rng.below(incorrect.size())];
    out.pairs.push_back({g.task_id, g.start_state, g.completions[c], g.completions[r]});
    ++out.stats.groups_kept;
  }
  out.stats.pairs = out.pairs.size();
  if (!groups.empty()) out.stats.entropy_bits = dataset_entropy(groups);
  return out;
}

double binary_entropy_bits(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

double dataset_entropy(std::span<const StateRolloutGroup> groups) {
  require(!groups.empty(), "dataset entropy of an empty group list");
  double weighted = 0.0;
  std::size_t samples = 0;
  for (const auto& g : groups) {
    weighted += static_cast<double>(g.rewards.size()) * binary_entropy_bits(g.v_hat);
    samples += g.rewards.size();
  }
  require(samples > 0, "dataset entropy needs at least one sample");
  return weighted / static_cast<double>(samples);
}

std::size_t count_valid_pairs(std::span<const StateRolloutGroup> groups) {
  std::size_t pairs = 0;
  for (const auto& g : groups) {
    const auto correct = static_cast<std::size_t>(std::count(g.rewards.begin(), g.rewards.end(), 1));
    pairs += std::min(correct, g.rewards.size() - correct);
  }
  return pairs;
}

PairCounts expected_pair_counts(double p0, double delta, std::size_t n_states, std::size_t m, bool guidance_correct) {
  require(m >= 1, "m must be >= 1");
  require(delta >= 0.0, "delta must be nonnegative");
  const double sign = guidance_correct ? 1.0 : -1.0;
  PairCounts out;
  double sum = 0.0;
  for (std::size_t i = 0; i <= n_states; ++i) {
    const double p = p0 + sign * static_cast<double>(i) * delta;
    require(p >= 0.0 && p <= 1.0, "linear value model leaves [0,1] at state " + std::to_string(i));
    sum += std::min(p, 1.0 - p);
  }
  out.hit_guided = static_cast<double>(m) * sum;
  out.vanilla = static_cast<double>(n_states + 1) * static_cast<double>(m) * std::min(p0, 1.0 - p0);
  return out;
}

void write_pairs_csv(std::ostream& out, std::span<const PreferencePair> pairs) {
  out << "task_id,state_len,chosen_actions,rejected_actions\n";
  for (const auto& p : pairs) {
    out << p.task_id << ',' << p.start_state.size() << ',' << prefix_key(p.chosen.actions) << ','
        << prefix_key(p.rejected.actions) << '\n';
  }
}

}  // namespace marge

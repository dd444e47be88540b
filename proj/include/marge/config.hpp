#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "marge/env.hpp"
#include "marge/train.hpp"

namespace marge {

/// Ranges the env generator draws from, inclusive on both ends.
struct EnvGenConfig {
  std::size_t count = 16;
  std::uint32_t depth_min = 3;
  std::uint32_t depth_max = 3;
  std::uint32_t branching_min = 3;
  std::uint32_t branching_max = 3;
  double correct_fraction_min = 0.1;
  double correct_fraction_max = 0.3;
};

struct AblateConfig {
  std::vector<std::string> strategies{"ours", "random", "succ", "no-update", "vanilla-rl"};
  std::size_t seeds = 1;
  // n_per_state values for the entropy-vs-budget sweep.
  std::vector<std::size_t> sweep_n{2, 4, 8, 16};
};

struct VerifyConfig {
  std::size_t chain_cases = 1000;
  std::size_t variance_cases = 200;
  std::size_t pair_grid_resolution = 64;
  std::size_t pair_grid_max_states = 24;
  bool inject_violation = false;
};

struct RunConfig {
  EnvGenConfig envs;
  TrainConfig train;
  AblateConfig ablate;
  VerifyConfig verify;
  std::optional<std::uint64_t> seed;
  std::string output_dir = "out";
  // Directory holding env_XXXX.json and manifest.json; defaults to <output_dir>/envs.
  std::optional<std::string> env_dir;
  // Checkpoint to continue `run` from.
  std::optional<std::string> resume;

  std::uint64_t effective_seed() const { return seed.value_or(0); }
  std::string envs_path() const;
  void validate() const;
  std::string to_json() const;
};

/// Unknown keys, wrong types and invalid values all raise kConfig.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

/// Draws EnvSpec i of a generated set.
EnvSpec sample_env_spec(const EnvGenConfig& gen, std::uint64_t seed, std::size_t index);

}  // namespace marge

#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "marge/config.hpp"
#include "marge/env.hpp"
#include "marge/train.hpp"

namespace marge {

/// Writes env_XXXX.json for every generated env plus manifest.json into
/// config.envs_path().
void cmd_gen_envs(const RunConfig& config, std::ostream& log);

/// Loads the env set named by a manifest.json in `dir`.
std::vector<ReasoningEnv> load_env_set(const std::string& dir);

/// Trains on the env set and writes config.json, reports.csv, metrics.csv and
/// checkpoints/iter_XXXX.json (+ pool_XXXX.csv) into config.output_dir.
/// With config.resume set, rows of earlier iterations already present in the
/// run directory are kept and the remaining ones are recomputed.
void cmd_run(const RunConfig& config, unsigned workers, std::ostream& log);

/// Matched-seed runs per ablation strategy (ablation.csv) and the
/// valid-pairs / entropy sweep over budgets (collection_sweep.csv).
void cmd_ablate(const RunConfig& config, unsigned workers, std::ostream& log);

/// Runs the theory checks on a seeded grid and writes verify.json. Returns all_passed.
bool cmd_verify(const RunConfig& config, unsigned workers, std::ostream& log);

/// Summarises reports.csv (and ablation.csv when present) in
/// config.output_dir into report.json.
void cmd_report(const RunConfig& config, std::ostream& log);

/// CSV text shared by cmd_run and its tests.
std::string reports_csv_header(std::span<const std::size_t> k_list);
std::string reports_csv_row(const IterationReport& r);
std::string metrics_csv_header();
std::string metrics_csv_row(const IterationReport& r);

/// Ablation strategy names map to a training mode and guidance strategy:
/// ours/random/succ/no-update train with rl; vanilla-rl, sft and dpo name
/// their mode (dpo uses ours guidance).
TrainConfig ablation_config(const TrainConfig& base, const std::string& name);

/// Tasks whose initial n1 candidates hold both outcomes under this seed,
/// iterated until the kept set is stable, so no ablation strategy drops a task.
std::vector<ReasoningEnv> matched_task_set(const TrainConfig& config, std::span<const ReasoningEnv> tasks,
                                           std::uint64_t seed, unsigned workers);

}  // namespace marge

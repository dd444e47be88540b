#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "marge/dataset.hpp"
#include "marge/guidance.hpp"
#include "marge/metrics.hpp"
#include "marge/policy.hpp"
#include "marge/rollout.hpp"

namespace marge {

struct LossAndGrad {
  double loss = 0.0;
  GradientTable grad;
};

/// Loss over several tasks, each with its own table; grads[t] belongs to task t.
struct MultiLossAndGrad {
  double loss = 0.0;
  std::vector<GradientTable> grads;
};

/// DPO: -mean log sigmoid(beta * (logratio(chosen) - logratio(rejected))),
/// logratio(y) = log pi(y | s) - log pi_ref(y | s).
LossAndGrad dpo_loss_and_grad(const TabularPolicy& policy, const TabularPolicy& reference,
                              std::span<const PreferencePair> pairs, double beta);
MultiLossAndGrad dpo_loss_and_grad(std::span<const TabularPolicy> policies, std::span<const TabularPolicy> references,
                                   std::span<const PreferencePair> pairs, double beta);

/// (r - mean) / std with the population std; all zeros when std is 0.
std::vector<double> group_relative_advantage(std::span<const int> rewards);

/// mean[-adv * log pi(y|s)] + beta_kl * mean[log pi(y|s) - log pi_ref(y|s)],
/// advantages normalised within each buffer group.
LossAndGrad rl_loss_and_grad(const TabularPolicy& policy, const TabularPolicy& reference, const RolloutBuffer& buffer,
                             double beta_kl);
MultiLossAndGrad rl_loss_and_grad(std::span<const TabularPolicy> policies, std::span<const TabularPolicy> references,
                                  const RolloutBuffer& buffer, double beta_kl);

/// Mean negative log-likelihood of correct trajectories.
LossAndGrad sft_loss_and_grad(const TabularPolicy& policy, std::span<const Trajectory> correct);
MultiLossAndGrad sft_loss_and_grad(std::span<const TabularPolicy> policies, std::span<const Trajectory> correct,
                                   std::span<const std::size_t> task_ids);

enum class TrainMode { kDpo, kRl, kSft, kVanillaRl };
std::string to_string(TrainMode m);
TrainMode parse_train_mode(const std::string& name);

struct TrainConfig {
  double beta_dpo = 0.4;
  double beta_kl = 0.01;
  double learning_rate = 2.0;
  std::size_t episodes = 10;
  std::size_t batch_size = 16;
  std::size_t n_per_state = 8;
  std::size_t n1 = 32;
  std::optional<ValueFilter> value_filter;  // default: ValueFilter::for_group_size(n_per_state)
  TrainMode mode = TrainMode::kRl;
  Strategy strategy = Strategy::kOurs;
  std::size_t epochs_per_iter = 2;
  std::optional<Decomposition> decomposition;  // default: per task depth
  double temperature = 1.0;
  double init_logit_scale = 0.0;
  // Stop once greedy pass@1 has not improved for `patience` iterations.
  bool early_stopping = false;
  std::size_t patience = 2;
  std::size_t eval_samples = 64;
  std::vector<std::size_t> k_list{8, 64};

  void validate() const;
  ValueFilter filter() const { return value_filter.value_or(ValueFilter::for_group_size(n_per_state)); }
};

struct IterationReport {
  std::size_t iteration = 0;
  double pass1 = 0.0;
  std::vector<PassAtK> pass_k;
  double entropy_bits = 0.0;
  std::size_t valid_pairs = 0;
  std::uint64_t generation_cost = 0;
  double mean_loss = 0.0;
  double mean_root_value = 0.0;  // exact, averaged over training tasks
};

/// Everything needed to continue a run at `next_iteration` bit-exactly.
struct RunState {
  std::size_t next_iteration = 0;
  std::vector<TabularPolicy> policies;
  GuidancePool pool;
  double best_pass1 = -1.0;
  std::size_t stale_iterations = 0;

  std::string to_json() const;
  static RunState from_json(const std::string& text);
};

struct RunOptions {
  unsigned workers = 1;
  // Called after every iteration with the state that resumes after it.
  std::function<void(const IterationReport&, const RunState&)> on_iteration;
  const RunState* resume = nullptr;
};

struct RunResult {
  std::vector<TabularPolicy> policies;
  std::vector<IterationReport> reports;
  bool stopped_early = false;
};

/// Initial per-task policies a run starts from.
std::vector<TabularPolicy> initial_policies(const TrainConfig& config, std::span<const ReasoningEnv> tasks,
                                            std::uint64_t seed);

/// Iterative self-training loop:
///   draw n1 candidates per task and select guidance;
///   each episode, per batch of B active tasks: freeze the reference, explore
///   from every guidance state (root only for vanilla-rl/sft, at the same
///   generation cost), build the dataset for the mode, take epochs_per_iter
///   full-batch gradient steps, then refresh candidates and guidance from
///   this batch's rollouts.
/// Evaluation runs on the training tasks themselves; tabular policies have
/// nothing to transfer to unseen tasks.
RunResult marge_run(const TrainConfig& config, std::span<const ReasoningEnv> tasks, std::uint64_t seed,
                    const RunOptions& options = {});

double mean_exact_root_value(std::span<const TabularPolicy> policies, std::span<const ReasoningEnv> tasks);

/// One round of data collection without training.
struct CollectionStats {
  std::uint64_t generation_cost = 0;
  std::size_t valid_pairs = 0;
  double entropy_bits = 0.0;
  std::size_t tasks = 0;
};

/// guided: hit-guided exploration from each active task's guidance.
/// Otherwise root-only sampling with the budget that guidance would have cost.
CollectionStats measure_collection(std::span<const TabularPolicy> policies, std::span<const ReasoningEnv> tasks,
                                   const GuidancePool& pool, bool guided, std::size_t n_per_state,
                                   const StreamFactory& streams, unsigned workers = 1);

}  // namespace marge

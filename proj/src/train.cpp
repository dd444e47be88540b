#include "marge/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "marge/error.hpp"
#include "marge/oracles.hpp"
#include "marge/parallel.hpp"

namespace marge {
namespace {

// -log sigmoid(x), stable for large |x|.
double neg_log_sigmoid(double x) { return std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<GradientTable> zero_grads(std::span<const TabularPolicy> policies) {
  std::vector<GradientTable> out;
  out.reserve(policies.size());
  for (const auto& p : policies) out.emplace_back(p.shape());
  return out;
}

void check_tables(std::span<const TabularPolicy> policies, std::span<const TabularPolicy> references) {
  require(policies.size() == references.size(), "need one reference per policy");
  for (std::size_t i = 0; i < policies.size(); ++i)
    require(policies[i].shape() == references[i].shape(), "policy and reference shapes differ");
}

// Map task id -> table index; single-table overloads send every id to 0.
template <typename IndexOf>
MultiLossAndGrad dpo_impl(std::span<const TabularPolicy> policies, std::span<const TabularPolicy> references,
                          std::span<const PreferencePair> pairs, double beta, IndexOf index_of) {
  require(!pairs.empty(), "DPO loss over an empty pair set");
  require(beta > 0.0, "beta_dpo must be positive");
  check_tables(policies, references);
  MultiLossAndGrad out{0.0, zero_grads(policies)};
  const double inv_n = 1.0 / static_cast<double>(pairs.size());
  for (const auto& pair : pairs) {
    const std::size_t t = index_of(pair.task_id);
    require(t < policies.size(), "pair refers to an unknown task");
    const TabularPolicy& pi = policies[t];
    const TabularPolicy& ref = references[t];
    const auto& s = pair.start_state;
    const double win = pi.log_prob(s, pair.chosen.actions) - ref.log_prob(s, pair.chosen.actions);
    const double lose = pi.log_prob(s, pair.rejected.actions) - ref.log_prob(s, pair.rejected.actions);
    const double margin = beta * (win - lose);
    out.loss += neg_log_sigmoid(margin) * inv_n;
    const double w = -beta * sigmoid(-margin) * inv_n;
    pi.accumulate_grad_log_prob(s, pair.chosen.actions, w, out.grads[t]);
    pi.accumulate_grad_log_prob(s, pair.rejected.actions, -w, out.grads[t]);
  }
  return out;
}

template <typename IndexOf>
MultiLossAndGrad rl_impl(std::span<const TabularPolicy> policies, std::span<const TabularPolicy> references,
                         const RolloutBuffer& buffer, double beta_kl, IndexOf index_of) {
  require(!buffer.empty(), "RL loss over an empty buffer");
  require(beta_kl >= 0.0, "beta_kl must be nonnegative");
  check_tables(policies, references);

  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < buffer.entries.size(); ++i) members[buffer.entries[i].group_id].push_back(i);
  std::vector<double> advantage(buffer.entries.size(), 0.0);
  for (const auto& [gid, idx] : members) {
    std::vector<int> rewards;
    rewards.reserve(idx.size());
    for (std::size_t i : idx) rewards.push_back(buffer.entries[i].reward);
    const auto adv = group_relative_advantage(rewards);
    for (std::size_t k = 0; k < idx.size(); ++k) advantage[idx[k]] = adv[k];
  }

  MultiLossAndGrad out{0.0, zero_grads(policies)};
  const double inv_n = 1.0 / static_cast<double>(buffer.entries.size());
  double pg = 0.0, kl = 0.0;
  for (std::size_t i = 0; i < buffer.entries.size(); ++i) {
    const auto& e = buffer.entries[i];
    const std::size_t t = index_of(e.task_id);
    require(t < policies.size(), "buffer entry refers to an unknown task");
    const TabularPolicy& pi = policies[t];
    const double lp = pi.log_prob(e.start_state, e.completion);
    pg += -advantage[i] * lp;
    if (beta_kl > 0.0) kl += lp - references[t].log_prob(e.start_state, e.completion);
    const double w = (-advantage[i] + beta_kl) * inv_n;
    if (w != 0.0) pi.accumulate_grad_log_prob(e.start_state, e.completion, w, out.grads[t]);
  }
  out.loss = pg * inv_n + beta_kl * kl * inv_n;
  return out;
}

template <typename IndexOf>
MultiLossAndGrad sft_impl(std::span<const TabularPolicy> policies, std::span<const Trajectory> correct,
                          std::span<const std::size_t> task_ids, IndexOf index_of) {
  require(!correct.empty(), "SFT loss over an empty trajectory set");
  MultiLossAndGrad out{0.0, zero_grads(policies)};
  const double inv_n = 1.0 / static_cast<double>(correct.size());
  for (std::size_t i = 0; i < correct.size(); ++i) {
    const Trajectory& y = correct[i];
    require(y.reward == 1, "SFT trajectories must be correct (reward 1)");
    const std::size_t t = index_of(task_ids.empty() ? 0 : task_ids[i]);
    require(t < policies.size(), "trajectory refers to an unknown task");
    out.loss -= policies[t].log_prob(y.start_state, y.actions) * inv_n;
    policies[t].accumulate_grad_log_prob(y.start_state, y.actions, -inv_n, out.grads[t]);
  }
  return out;
}

LossAndGrad single(MultiLossAndGrad&& m) { return {m.loss, std::move(m.grads.front())}; }

auto identity = [](std::size_t t) { return t; };
auto to_zero = [](std::size_t) { return std::size_t{0}; };

}  // namespace

LossAndGrad dpo_loss_and_grad(const TabularPolicy& policy, const TabularPolicy& reference,
                              std::span<const PreferencePair> pairs, double beta) {
  return single(dpo_impl({&policy, 1}, {&reference, 1}, pairs, beta, to_zero));
}

MultiLossAndGrad dpo_loss_and_grad(std::span<const TabularPolicy> policies, std::span<const TabularPolicy> references,
                                   std::span<const PreferencePair> pairs, double beta) {
  return dpo_impl(policies, references, pairs, beta, identity);
}

std::vector<double> group_relative_advantage(std::span<const int> rewards) {
  require(!rewards.empty(), "advantages of an empty group");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (int r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (int r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(rewards.size(), 0.0);
  if (sd == 0.0) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / sd;
  return out;
}

LossAndGrad rl_loss_and_grad(const TabularPolicy& policy, const TabularPolicy& reference, const RolloutBuffer& buffer,
                             double beta_kl) {
  return single(rl_impl({&policy, 1}, {&reference, 1}, buffer, beta_kl, to_zero));
}

MultiLossAndGrad rl_loss_and_grad(std::span<const TabularPolicy> policies, std::span<const TabularPolicy> references,
                                  const RolloutBuffer& buffer, double beta_kl) {
  return rl_impl(policies, references, buffer, beta_kl, identity);
}

LossAndGrad sft_loss_and_grad(const TabularPolicy& policy, std::span<const Trajectory> correct) {
  return single(sft_impl({&policy, 1}, correct, {}, to_zero));
}

MultiLossAndGrad sft_loss_and_grad(std::span<const TabularPolicy> policies, std::span<const Trajectory> correct,
                                   std::span<const std::size_t> task_ids) {
  require(task_ids.size() == correct.size(), "need one task id per trajectory");
  return sft_impl(policies, correct, task_ids, identity);
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kDpo: return "dpo";
    case TrainMode::kRl: return "rl";
    case TrainMode::kSft: return "sft";
    case TrainMode::kVanillaRl: return "vanilla-rl";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& name) {
  if (name == "dpo") return TrainMode::kDpo;
  if (name == "rl") return TrainMode::kRl;
  if (name == "sft") return TrainMode::kSft;
  if (name == "vanilla-rl") return TrainMode::kVanillaRl;
  fail(ErrorCode::kConfig, "unknown training mode '" + name + "'");
}

void TrainConfig::validate() const {
  auto check = [](bool ok, const char* what) {
    if (!ok) fail(ErrorCode::kConfig, what);
  };
  check(beta_dpo > 0.0, "beta_dpo must be positive");
  check(beta_kl >= 0.0, "beta_kl must be nonnegative");
  check(learning_rate > 0.0, "learning_rate must be positive");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(n_per_state >= 1, "n_per_state must be >= 1");
  check(n1 >= 1, "n1 must be >= 1");
  check(epochs_per_iter >= 1, "epochs_per_iter must be >= 1");
  check(temperature > 0.0, "temperature must be positive");
  check(init_logit_scale >= 0.0, "init_logit_scale must be nonnegative");
  check(eval_samples >= 1, "eval_samples must be >= 1");
  for (std::size_t k : k_list) check(k >= 1 && k <= eval_samples, "every k must lie in [1, eval_samples]");
  const ValueFilter f = filter();
  check(f.lo >= 0.0 && f.lo < f.hi && f.hi <= 1.0, "value filter needs 0 <= lo < hi <= 1");
  if (decomposition && decomposition->mode == SplitMode::kEven) check(decomposition->count >= 1, "even split count must be >= 1");
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

nlohmann::ordered_json trajectory_to_json(const Trajectory& t) {
  return {{"actions", prefix_key(t.full())}, {"reward", t.reward}};
}

Trajectory trajectory_from_json(const nlohmann::json& j) {
  return Trajectory{{}, parse_prefix_key(j.at("actions").get<std::string>()), j.at("reward").get<int>()};
}

}  // namespace

std::string RunState::to_json() const {
  nlohmann::ordered_json j;
  j["next_iteration"] = next_iteration;
  j["best_pass1"] = best_pass1;
  j["stale_iterations"] = stale_iterations;
  auto ps = nlohmann::ordered_json::array();
  for (const auto& p : policies) ps.push_back(nlohmann::ordered_json::parse(p.to_json()));
  j["policies"] = std::move(ps);
  auto tasks = nlohmann::ordered_json::array();
  for (const auto& t : pool.tasks) {
    nlohmann::ordered_json tj;
    tj["task_id"] = t.task_id;
    tj["active"] = t.active;
    tj["carried_over"] = t.carried_over;
    tj["root_v_hat"] = t.root_v_hat;
    tj["guidance"] = t.guidance ? trajectory_to_json(*t.guidance) : nlohmann::ordered_json();
    auto cands = nlohmann::ordered_json::array();
    for (const auto& c : t.candidates) cands.push_back(trajectory_to_json(c));
    tj["candidates"] = std::move(cands);
    tasks.push_back(std::move(tj));
  }
  j["pool"] = std::move(tasks);
  return j.dump() + "\n";
}

RunState RunState::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    RunState s;
    s.next_iteration = j.at("next_iteration").get<std::size_t>();
    s.best_pass1 = j.at("best_pass1").get<double>();
    s.stale_iterations = j.at("stale_iterations").get<std::size_t>();
    for (const auto& p : j.at("policies")) s.policies.push_back(TabularPolicy::from_json(p.dump()));
    for (const auto& tj : j.at("pool")) {
      TaskGuidance t;
      t.task_id = tj.at("task_id").get<std::size_t>();
      t.active = tj.at("active").get<bool>();
      t.carried_over = tj.at("carried_over").get<bool>();
      t.root_v_hat = tj.at("root_v_hat").get<double>();
      if (!tj.at("guidance").is_null()) t.guidance = trajectory_from_json(tj.at("guidance"));
      for (const auto& c : tj.at("candidates")) t.candidates.push_back(trajectory_from_json(c));
      s.pool.tasks.push_back(std::move(t));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed checkpoint: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Outer loop

std::vector<TabularPolicy> initial_policies(const TrainConfig& config, std::span<const ReasoningEnv> tasks,
                                            std::uint64_t seed) {
  std::vector<TabularPolicy> out;
  out.reserve(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (config.init_logit_scale > 0.0) {
      out.push_back(TabularPolicy::random(tasks[i].shape(), mix64(seed + i), config.init_logit_scale, config.temperature));
    } else {
      out.emplace_back(tasks[i].shape(), config.temperature);
    }
  }
  return out;
}

double mean_exact_root_value(std::span<const TabularPolicy> policies, std::span<const ReasoningEnv> tasks) {
  require(policies.size() == tasks.size() && !tasks.empty(), "need one policy per task");
  double total = 0.0;
  for (std::size_t i = 0; i < tasks.size(); ++i) total += exact_state_value(tasks[i], policies[i], {});
  return total / static_cast<double>(tasks.size());
}

namespace {

std::size_t matched_root_samples(const Trajectory& guidance, std::size_t n_per_state, const ReasoningEnv& env,
                                 Decomposition dec) {
  const std::uint64_t budget = planned_hit_guided_cost(guidance, n_per_state, dec);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(budget) / env.depth())));
}

}  // namespace

CollectionStats measure_collection(std::span<const TabularPolicy> policies, std::span<const ReasoningEnv> tasks,
                                   const GuidancePool& pool, bool guided, std::size_t n_per_state,
                                   const StreamFactory& streams, unsigned workers) {
  require(policies.size() == tasks.size() && pool.tasks.size() == tasks.size(), "need one policy and pool entry per task");
  require(n_per_state >= 1, "n_per_state must be >= 1");
  std::vector<std::vector<StateRolloutGroup>> slots(tasks.size());
  parallel_for(tasks.size(), workers, [&](std::size_t t) {
    const TaskGuidance& tg = pool.tasks[t];
    if (!tg.active || !tg.guidance) return;
    const Decomposition dec = Decomposition::default_for_depth(tasks[t].depth());
    if (guided) {
      slots[t] = hit_guided_explore(policies[t], tasks[t], *tg.guidance, n_per_state, dec, streams, t);
    } else {
      slots[t].push_back(vanilla_explore(policies[t], tasks[t], matched_root_samples(*tg.guidance, n_per_state, tasks[t], dec),
                                         streams, t));
    }
  });
  std::vector<StateRolloutGroup> groups;
  CollectionStats out;
  for (auto& s : slots) {
    if (!s.empty()) ++out.tasks;
    for (auto& g : s) groups.push_back(std::move(g));
  }
  if (groups.empty()) return out;
  out.generation_cost = generation_cost(groups);
  out.valid_pairs = count_valid_pairs(groups);
  out.entropy_bits = dataset_entropy(groups);
  return out;
}

namespace {

constexpr std::uint64_t kInitRound = ~std::uint64_t{0};

std::uint64_t batch_round(std::size_t iteration, std::size_t batch) {
  return (static_cast<std::uint64_t>(iteration) << 24) | static_cast<std::uint64_t>(batch);
}

Strategy pool_strategy(const TrainConfig& c) {
  // Root-only baselines still need guidance to size their matched budget.
  return (c.mode == TrainMode::kRl || c.mode == TrainMode::kDpo) ? c.strategy : Strategy::kOurs;
}

}  // namespace

RunResult marge_run(const TrainConfig& config, std::span<const ReasoningEnv> tasks, std::uint64_t seed,
                    const RunOptions& options) {
  config.validate();
  require(!tasks.empty(), "a run needs at least one task");
  const StreamFactory root(seed);
  const Strategy strategy = pool_strategy(config);

  RunState state;
  if (options.resume) {
    state = *options.resume;
    require(state.policies.size() == tasks.size() && state.pool.tasks.size() == tasks.size(),
            "checkpoint does not match the task set");
    for (std::size_t i = 0; i < tasks.size(); ++i)
      require(state.policies[i].shape() == tasks[i].shape(), "checkpoint policy shape does not match its task");
  } else {
    state.policies = initial_policies(config, tasks, seed);
    if (config.episodes > 0) {
      state.pool = init_candidates(state.policies, tasks, config.n1, root.derive(Purpose::kInitCandidates, 0),
                                   options.workers);
      select_guidance(state.pool, strategy, root.derive(Purpose::kSelect, kInitRound));
    }
  }

  RunResult result;
  for (std::size_t it = state.next_iteration; it < config.episodes; ++it) {
    std::vector<std::size_t> active;
    for (const auto& t : state.pool.tasks)
      if (t.active) active.push_back(t.task_id);

    std::vector<StateRolloutGroup> iteration_groups;
    double loss_sum = 0.0;
    std::size_t loss_count = 0;

    for (std::size_t b = 0; b * config.batch_size < active.size(); ++b) {
      const std::size_t first = b * config.batch_size;
      const std::vector<std::size_t> batch(active.begin() + static_cast<std::ptrdiff_t>(first),
                                           active.begin() + static_cast<std::ptrdiff_t>(std::min(active.size(), first + config.batch_size)));
      const std::uint64_t round = batch_round(it, b);
      const std::vector<TabularPolicy> reference = state.policies;
      const StreamFactory explore = root.derive(Purpose::kExplore, round);

      std::vector<std::vector<StateRolloutGroup>> slots(batch.size());
      parallel_for(batch.size(), options.workers, [&](std::size_t k) {
        const std::size_t t = batch[k];
        const ReasoningEnv& env = tasks[t];
        const Trajectory& guidance = *state.pool.tasks[t].guidance;
        const Decomposition dec = config.decomposition.value_or(Decomposition::default_for_depth(env.depth()));
        if (config.mode == TrainMode::kRl || config.mode == TrainMode::kDpo) {
          slots[k] = hit_guided_explore(state.policies[t], env, guidance, config.n_per_state, dec, explore, t);
        } else {
          slots[k].push_back(vanilla_explore(state.policies[t], env, matched_root_samples(guidance, config.n_per_state, env, dec),
                                             explore, t));
        }
      });
      std::vector<StateRolloutGroup> groups;
      for (auto& s : slots)
        for (auto& g : s) groups.push_back(std::move(g));

      auto step = [&](const MultiLossAndGrad& lg) {
        if (!std::isfinite(lg.loss)) {
          fail(ErrorCode::kNumeric, "non-finite " + to_string(config.mode) + " loss at iteration " +
                                        std::to_string(it) + ", batch " + std::to_string(b));
        }
        loss_sum += lg.loss;
        ++loss_count;
        for (std::size_t t : batch) state.policies[t].apply_gradient(lg.grads[t], config.learning_rate);
      };

      switch (config.mode) {
        case TrainMode::kRl:
        case TrainMode::kVanillaRl: {
          const RolloutBuffer buffer = build_rl_buffer(groups);
          for (std::size_t e = 0; e < config.epochs_per_iter; ++e)
            step(rl_loss_and_grad(state.policies, reference, buffer, config.beta_kl));
          break;
        }
        case TrainMode::kDpo: {
          const PreferenceDataset data =
              build_preference_dataset(groups, config.filter(), root.derive(Purpose::kPairs, round));
          if (data.pairs.empty()) break;
          for (std::size_t e = 0; e < config.epochs_per_iter; ++e)
            step(dpo_loss_and_grad(state.policies, reference, data.pairs, config.beta_dpo));
          break;
        }
        case TrainMode::kSft: {
          const StreamFactory pick = root.derive(Purpose::kSft, round);
          std::vector<Trajectory> chosen;
          std::vector<std::size_t> ids;
          for (const auto& g : groups) {
            std::vector<std::size_t> correct;
            for (std::size_t k = 0; k < g.rewards.size(); ++k)
              if (g.rewards[k] == 1) correct.push_back(k);
            if (correct.empty()) continue;
            RngStream rng = pick.stream(g.task_id, 0, 0);
            chosen.push_back(g.completions[correct[rng.below(correct.size())]]);
            ids.push_back(g.task_id);
          }
          if (chosen.empty()) break;
          for (std::size_t e = 0; e < config.epochs_per_iter; ++e)
            step(sft_loss_and_grad(state.policies, chosen, ids));
          break;
        }
      }

      update_guidance(state.pool, groups, strategy, root.derive(Purpose::kSelect, round));
      for (auto& g : groups) iteration_groups.push_back(std::move(g));
    }

    IterationReport rep;
    rep.iteration = it;
    const EvalRecord ev = eval_policy(state.policies, tasks, config.eval_samples, config.k_list,
                                      root.derive(Purpose::kEval, it), options.workers);
    rep.pass1 = ev.pass1;
    rep.pass_k = ev.pass_k;
    rep.mean_root_value = ev.mean_exact_root_value;
    if (!iteration_groups.empty()) {
      rep.entropy_bits = dataset_entropy(iteration_groups);
      rep.valid_pairs = count_valid_pairs(iteration_groups);
      rep.generation_cost = generation_cost(iteration_groups);
    }
    rep.mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    result.reports.push_back(rep);

    if (rep.pass1 > state.best_pass1) {
      state.best_pass1 = rep.pass1;
      state.stale_iterations = 0;
    } else {
      ++state.stale_iterations;
    }
    state.next_iteration = it + 1;
    if (options.on_iteration) options.on_iteration(rep, state);
    if (config.early_stopping && state.stale_iterations >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  result.policies = std::move(state.policies);
  return result;
}

}  // namespace marge

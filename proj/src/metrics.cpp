#include "marge/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "marge/error.hpp"
#include "marge/oracles.hpp"
#include "marge/parallel.hpp"

namespace marge {

double pass_at_k(std::size_t n, std::size_t c, std::size_t k) {
  require(c <= n, "pass@k needs c <= n");
  require(k >= 1 && k <= n, "pass@k needs 1 <= k <= n");
  if (n - c < k) return 1.0;
  double miss = 1.0;
  for (std::size_t i = n - c + 1; i <= n; ++i) miss *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
  return 1.0 - miss;
}

double EvalRecord::pass_at(std::size_t k) const {
  for (const auto& p : pass_k)
    if (p.k == k) return p.value;
  fail(ErrorCode::kInvalidArgument, "pass@" + std::to_string(k) + " was not evaluated");
}

int greedy_success(const TabularPolicy& policy, const ReasoningEnv& env) {
  require(policy.shape() == env.shape(), "policy and environment shapes differ");
  ActionSeq state;
  while (state.size() < env.depth()) state.push_back(policy.greedy_action(env.shape().node_index(state)));
  return env.reward(state);
}

EvalRecord eval_policy(std::span<const TabularPolicy> policies, std::span<const ReasoningEnv> envs,
                       std::size_t n_samples, std::span<const std::size_t> k_list, const StreamFactory& streams,
                       unsigned workers) {
  require(!envs.empty(), "evaluation needs at least one env");
  require(policies.size() == envs.size(), "need one policy per env");
  for (std::size_t k : k_list) require(k >= 1 && k <= n_samples, "every k must satisfy 1 <= k <= n_samples");

  struct PerEnv {
    int greedy = 0;
    std::size_t correct = 0;
    double root_value = 0.0;
  };
  std::vector<PerEnv> per(envs.size());
  parallel_for(envs.size(), workers, [&](std::size_t i) {
    const TabularPolicy& policy = policies[i];
    per[i].greedy = greedy_success(policy, envs[i]);
    for (std::size_t j = 0; j < n_samples; ++j) {
      RngStream rng = streams.stream(i, 0, j);
      per[i].correct += static_cast<std::size_t>(sample_completion(policy, envs[i], {}, rng).reward);
    }
    per[i].root_value = exact_state_value(envs[i], policy, {});
  });

  EvalRecord rec;
  const double count = static_cast<double>(envs.size());
  for (const auto& p : per) {
    rec.pass1 += p.greedy;
    rec.mean_exact_root_value += p.root_value;
  }
  rec.pass1 /= count;
  rec.mean_exact_root_value /= count;
  for (std::size_t k : k_list) {
    double total = 0.0;
    for (const auto& p : per) total += pass_at_k(n_samples, p.correct, k);
    rec.pass_k.push_back({k, total / count});
  }
  return rec;
}

EvalRecord eval_policy(const TabularPolicy& policy, std::span<const ReasoningEnv> envs, std::size_t n_samples,
                       std::span<const std::size_t> k_list, const StreamFactory& streams, unsigned workers) {
  const std::vector<TabularPolicy> copies(envs.size(), policy);
  return eval_policy(copies, envs, n_samples, k_list, streams, workers);
}

ValueCurve per_step_value_curve(std::span<const ReasoningEnv> envs, std::span<const TabularPolicy> policies,
                                bool guidance_correct, const StreamFactory& streams) {
  require(envs.size() == policies.size(), "need one policy per env");
  ValueCurve curve;
  std::uint32_t max_depth = 0;
  for (const auto& e : envs) max_depth = std::max(max_depth, e.depth());
  std::vector<double> sums(max_depth, 0.0);
  std::vector<std::size_t> counts(max_depth, 0);
  const int wanted = guidance_correct ? 1 : 0;

  for (std::size_t i = 0; i < envs.size(); ++i) {
    const ReasoningEnv& env = envs[i];
    const ReachTable reach = reach_probabilities(env, policies[i]);
    double class_mass = 0.0;
    for (std::size_t leaf = 0; leaf < reach.leaf.size(); ++leaf)
      if (env.terminal_labels()[leaf] == wanted) class_mass += reach.leaf[leaf];
    if (class_mass <= 0.0) {
      ++curve.skipped_envs;
      continue;
    }
    // Inverse-CDF draw of a leaf from P(leaf | outcome class).
    RngStream rng = streams.stream(i, 0, 0);
    const double u = rng.uniform() * class_mass;
    std::size_t chosen = 0;
    double cdf = 0.0;
    for (std::size_t leaf = 0; leaf < reach.leaf.size(); ++leaf) {
      if (env.terminal_labels()[leaf] != wanted) continue;
      chosen = leaf;
      cdf += reach.leaf[leaf];
      if (u < cdf) break;
    }
    const ActionSeq full = env.shape().prefix_at(env.depth(), chosen);
    const ValueTable values = exact_values(env, policies[i]);
    for (std::uint32_t len = 0; len < env.depth(); ++len) {
      sums[len] += values.nonterminal[env.shape().node_index(std::span(full).first(len))];
      ++counts[len];
    }
  }
  require(curve.skipped_envs < envs.size(), "every env lacks a response of the requested class");
  for (std::uint32_t len = 0; len < max_depth; ++len) {
    if (counts[len] == 0) continue;
    curve.points.push_back({len, sums[len] / static_cast<double>(counts[len]), counts[len]});
  }
  return curve;
}

ScalingFit fit_log_scaling(std::span<const std::pair<double, double>> points) {
  require(points.size() >= 2, "a log fit needs at least two points");
  std::vector<double> u;
  u.reserve(points.size());
  for (const auto& [x, y] : points) {
    require(x > 0.0 && std::isfinite(x) && std::isfinite(y), "log fit needs positive finite x and finite y");
    u.push_back(std::log(x));
  }
  std::vector<double> sorted = u;
  std::sort(sorted.begin(), sorted.end());
  require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "log fit needs distinct x values");

  const double n = static_cast<double>(points.size());
  double u_mean = 0.0, y_mean = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    u_mean += u[i];
    y_mean += points[i].second;
  }
  u_mean /= n;
  y_mean /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    sxy += (u[i] - u_mean) * (points[i].second - y_mean);
    sxx += (u[i] - u_mean) * (u[i] - u_mean);
  }
  ScalingFit fit;
  fit.c2 = sxy / sxx;
  fit.c1 = y_mean - fit.c2 * u_mean;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double r = points[i].second - fit.c1 - fit.c2 * u[i];
    fit.residual += r * r;
  }
  return fit;
}

}  // namespace marge

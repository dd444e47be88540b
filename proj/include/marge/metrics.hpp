#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "marge/env.hpp"
#include "marge/policy.hpp"
#include "marge/rng.hpp"

namespace marge {

/// Unbiased pass@k from n samples with c correct: 1 - C(n-c, k) / C(n, k),
/// evaluated as a running product so large n cannot overflow.
double pass_at_k(std::size_t n, std::size_t c, std::size_t k);

struct PassAtK {
  std::size_t k = 0;
  double value = 0.0;
};

struct EvalRecord {
  double pass1 = 0.0;               // greedy decoding, ties to the lowest action
  std::vector<PassAtK> pass_k;      // averaged over envs
  double mean_exact_root_value = 0.0;

  double pass_at(std::size_t k) const;
};

/// Greedy pass@1 plus sampled pass@k on each env, policies[i] acting on
/// envs[i]. Env i draws sample j from streams.stream(i, 0, j).
EvalRecord eval_policy(std::span<const TabularPolicy> policies, std::span<const ReasoningEnv> envs,
                       std::size_t n_samples, std::span<const std::size_t> k_list, const StreamFactory& streams,
                       unsigned workers = 1);
// Same policy table on every env (all envs must share its shape).
EvalRecord eval_policy(const TabularPolicy& policy, std::span<const ReasoningEnv> envs, std::size_t n_samples,
                       std::span<const std::size_t> k_list, const StreamFactory& streams, unsigned workers = 1);

/// 1 if following argmax actions from the root reaches a correct terminal.
int greedy_success(const TabularPolicy& policy, const ReasoningEnv& env);

struct CurvePoint {
  std::uint32_t step = 0;
  double mean_value = 0.0;
  std::size_t env_count = 0;
};

struct ValueCurve {
  std::vector<CurvePoint> points;
  std::size_t skipped_envs = 0;
};

/// For every env, draws one response of the requested class from the policy
/// (conditioned on the outcome) and records the exact value of each of its
/// intermediate prefixes. Step i averages the length-i prefix values.
ValueCurve per_step_value_curve(std::span<const ReasoningEnv> envs, std::span<const TabularPolicy> policies,
                                bool guidance_correct, const StreamFactory& streams);

/// y = c1 + c2 * ln(x), least squares.
struct ScalingFit {
  double c1 = 0.0;
  double c2 = 0.0;
  double residual = 0.0;  // sum of squared residuals
};

ScalingFit fit_log_scaling(std::span<const std::pair<double, double>> points);

struct ScalingReference {
  std::string_view method;
  double c1;
  double c2;
};

/// Published benchmark fits of accuracy (%) against self-training samples.
/// Reference values only; simulator runs are not expected to reproduce them.
inline constexpr std::array<ScalingReference, 3> kPublishedScalingFits{{
    {"hit-guided", 53.05, 2.287},
    {"GRPO", 52.92, 1.302},
    {"SFT(RFT)", 54.89, 0.99},
}};

}  // namespace marge

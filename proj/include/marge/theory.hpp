#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "marge/dataset.hpp"
#include "marge/env.hpp"
#include "marge/policy.hpp"

namespace marge {

/// [E[R], E[R | S_1], ..., E[R | S_1..S_H]] where the conditioning prefix is
/// taken from a response drawn from the policy restricted to one outcome class.
struct ConditionalChain {
  bool guidance_correct = true;
  std::vector<double> values;
};

/// Exact, by dynamic programming over the tree:
///   value_i = sum_{|p| = i} P(p | class) * V(p)
/// Throws if the policy puts no mass on the requested class.
ConditionalChain conditional_chain(const ReasoningEnv& env, const TabularPolicy& policy, bool guidance_correct);

/// Nondecreasing for correct guidance, nonincreasing for incorrect, within tol.
bool check_prop1(const ConditionalChain& chain, double tol = 1e-12);

struct Prop2Check {
  std::optional<std::uint64_t> k;  // unset when delta == 0
  bool sufficient = false;
  bool guidance_correct = true;    // the selection heuristic's choice for p0
  PairCounts counts;
  // False only if `sufficient` holds while hit_guided < vanilla.
  bool consistent = true;
};

/// k = floor(|1 - 2 p0| / (2 delta)); sufficient iff 2k(k+1) >= n(n+1).
/// Guidance follows the selection heuristic (correct iff p0 <= 0.5) and the
/// expected pair counts of that linear model are cross-checked.
Prop2Check check_prop2(double p0, double delta, std::size_t n_states, std::size_t m = 1);

enum class GuidanceDistribution { kPolicy, kUniform, kCorrectOnly, kIncorrectOnly };
std::string to_string(GuidanceDistribution d);

/// Exact moments of the single-task REINFORCE estimators with
/// r_hat(y) = r(y) - beta_kl * (log pi(y) - log pi_ref(y)):
///   vanilla  g~ : M*N root samples, each contributing r_hat(y) grad log pi(y)
///   guided   g^ : N samples from each of the M = H per-step prefixes of Y0;
///                 each completed response s_j + y is scored as a full
///                 response, r_hat(s_j + y) grad log pi(s_j + y)
/// Variances are traces of covariance. The `completion_` fields repeat the
/// guided figures with the score restricted to the sampled suffix,
/// grad log pi(y | s_j).
struct GradientStats {
  GradientTable exact_grad;  // grad of E[r] - beta_kl * KL(pi || pi_ref)
  std::size_t guidance_states = 0;
  std::size_t samples_per_state = 1;
  double var_vanilla = 0.0;
  double var_guided_expected = 0.0;  // E_{Y0} Var[g^ | Y0]
  double bias_guided = 0.0;          // || E_{Y0,tau} g^ - exact_grad ||
  double var_guided_completion = 0.0;
  double bias_guided_completion = 0.0;
};

/// Throws kBoundExceeded when leaves * parameters exceeds `max_work`.
GradientStats gradient_estimator_stats(const ReasoningEnv& env, const TabularPolicy& policy,
                                       const TabularPolicy& reference, GuidanceDistribution guidance,
                                       double beta_kl, std::size_t samples_per_state = 1,
                                       std::size_t max_work = std::size_t{1} << 26);

// ---------------------------------------------------------------------------
// Seeded verification grid

struct CheckResult {
  std::string name;
  std::size_t cases_run = 0;
  std::size_t cases_passed = 0;
  double worst_margin = 0.0;  // smallest slack seen; negative means a violation
  std::string first_failure;

  bool passed() const { return cases_run == cases_passed; }
};

struct VerifyGrid {
  std::uint64_t seed = 0;
  std::size_t chain_cases = 1000;
  std::size_t variance_cases = 200;
  std::size_t pair_grid_resolution = 64;  // p0 and delta on multiples of 1/resolution
  std::size_t pair_grid_max_states = 24;
  // Appends a fabricated non-monotone chain to the value-chain cases.
  bool inject_violation = false;
  unsigned workers = 1;
};

struct VerifyReport {
  std::vector<CheckResult> results;
  bool all_passed() const;
  std::string to_json() const;
};

VerifyReport run_verification(const VerifyGrid& grid);

/// Seeded small env used by the value-chain and variance grids.
EnvSpec verification_env_spec(std::uint64_t seed, std::uint32_t max_depth, std::uint32_t max_branching);

}  // namespace marge

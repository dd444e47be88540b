#include "marge/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "marge/error.hpp"
#include "marge/oracles.hpp"
#include "marge/parallel.hpp"

namespace marge {

ConditionalChain conditional_chain(const ReasoningEnv& env, const TabularPolicy& policy, bool guidance_correct) {
  const ValueTable values = exact_values(env, policy);
  const ReachTable reach = reach_probabilities(env, policy);
  const TreeShape& shape = env.shape();
  const double v0 = values.nonterminal[0];
  const double class_mass = guidance_correct ? v0 : 1.0 - v0;
  require(class_mass > 0.0, std::string("the policy never produces a ") +
                                (guidance_correct ? "correct" : "incorrect") + " response");

  // P(p | class) = P(p) * P(class | p) / P(class), with P(correct | p) = V(p).
  auto weight = [&](double v) { return guidance_correct ? v * v : (1.0 - v) * v; };
  ConditionalChain chain;
  chain.guidance_correct = guidance_correct;
  chain.values.push_back(v0);
  for (std::uint32_t len = 1; len <= shape.depth(); ++len) {
    double total = 0.0;
    if (len == shape.depth()) {
      for (std::size_t leaf = 0; leaf < shape.leaf_count(); ++leaf) total += reach.leaf[leaf] * weight(values.leaf[leaf]);
    } else {
      for (std::size_t v = 0; v < shape.level_size(len); ++v) {
        const std::size_t node = shape.level_offset(len) + v;
        total += reach.nonterminal[node] * weight(values.nonterminal[node]);
      }
    }
    chain.values.push_back(total / class_mass);
  }
  return chain;
}

bool check_prop1(const ConditionalChain& chain, double tol) {
  for (std::size_t i = 1; i < chain.values.size(); ++i) {
    const double step = chain.values[i] - chain.values[i - 1];
    if (chain.guidance_correct ? step < -tol : step > tol) return false;
  }
  return true;
}

Prop2Check check_prop2(double p0, double delta, std::size_t n_states, std::size_t m) {
  require(p0 >= 0.0 && p0 <= 1.0, "p0 must lie in [0,1]");
  require(delta >= 0.0, "delta must be nonnegative");
  Prop2Check out;
  out.guidance_correct = p0 <= 0.5;
  out.counts = expected_pair_counts(p0, delta, n_states, m, out.guidance_correct);
  if (delta == 0.0) return out;

  const double ratio = std::abs(1.0 - 2.0 * p0) / (2.0 * delta);
  const auto k = static_cast<std::uint64_t>(std::floor(ratio));
  out.k = k;
  const auto n = static_cast<std::uint64_t>(n_states);
  // Once k >= n the condition holds; comparing first avoids overflow for tiny delta.
  out.sufficient = k >= n || 2 * k * (k + 1) >= n * (n + 1);
  out.consistent = !out.sufficient || out.counts.hit_guided >= out.counts.vanilla;
  return out;
}

std::string to_string(GuidanceDistribution d) {
  switch (d) {
    case GuidanceDistribution::kPolicy: return "policy";
    case GuidanceDistribution::kUniform: return "uniform";
    case GuidanceDistribution::kCorrectOnly: return "correct-only";
    case GuidanceDistribution::kIncorrectOnly: return "incorrect-only";
  }
  return "?";
}

GradientStats gradient_estimator_stats(const ReasoningEnv& env, const TabularPolicy& policy,
                                       const TabularPolicy& reference, GuidanceDistribution guidance,
                                       double beta_kl, std::size_t samples_per_state, std::size_t max_work) {
  require(policy.shape() == env.shape() && reference.shape() == env.shape(), "policy shapes differ from the env");
  require(samples_per_state >= 1, "samples_per_state must be >= 1");
  require(beta_kl >= 0.0, "beta_kl must be nonnegative");
  const TreeShape& shape = env.shape();
  const std::size_t b = shape.branching();
  const std::size_t depth = shape.depth();
  const std::size_t nodes = shape.nonterminal_count();
  const std::size_t leaves = shape.leaf_count();
  const std::size_t params = nodes * b;
  if (leaves * params > max_work || nodes * params > max_work) {
    fail(ErrorCode::kBoundExceeded, "environment too large for exact estimator statistics");
  }

  std::vector<std::uint32_t> node_depth(nodes);
  for (std::uint32_t len = 0; len < depth; ++len)
    for (std::size_t v = 0; v < shape.level_size(len); ++v) node_depth[shape.level_offset(len) + v] = len;

  const ReachTable reach = reach_probabilities(env, policy);
  std::vector<std::vector<double>> probs(nodes);
  for (std::size_t n = 0; n < nodes; ++n) probs[n] = policy.probs_at(n);

  // Guidance mass on every leaf, normalised.
  std::vector<double> q(leaves, 0.0);
  for (std::size_t y = 0; y < leaves; ++y) {
    const int r = env.terminal_labels()[y];
    switch (guidance) {
      case GuidanceDistribution::kPolicy: q[y] = reach.leaf[y]; break;
      case GuidanceDistribution::kUniform: q[y] = 1.0; break;
      case GuidanceDistribution::kCorrectOnly: q[y] = r ? reach.leaf[y] : 0.0; break;
      case GuidanceDistribution::kIncorrectOnly: q[y] = r ? 0.0 : reach.leaf[y]; break;
    }
  }
  double q_total = 0.0;
  for (double v : q) q_total += v;
  require(q_total > 0.0, "guidance distribution has no mass");
  for (double& v : q) v /= q_total;

  // Per node: s1 = sum_{y below} P(y) G(y), s2 = sum P(y) |G(y)|^2, and s2c the
  // same with G restricted to rows at or below the node's depth.
  std::vector<double> s1(nodes * params, 0.0);
  std::vector<double> s2(nodes, 0.0), s2c(nodes, 0.0), q_below(nodes, 0.0);
  std::vector<std::size_t> path(depth);
  std::vector<double> row_norm2(depth);
  const double inv_t = 1.0 / policy.temperature();

  for (std::size_t y = 0; y < leaves; ++y) {
    const ActionSeq full = shape.prefix_at(static_cast<std::uint32_t>(depth), y);
    double log_ratio = 0.0;
    if (beta_kl > 0.0) log_ratio = policy.log_prob({}, full) - reference.log_prob({}, full);
    const double r_hat = env.terminal_labels()[y] - beta_kl * log_ratio;
    const double py = reach.leaf[y];
    for (std::size_t d = 0; d < depth; ++d) {
      path[d] = shape.node_index(std::span(full).first(d));
      double norm2 = 0.0;
      for (std::size_t a = 0; a < b; ++a) {
        const double g = r_hat * inv_t * ((a == full[d] ? 1.0 : 0.0) - probs[path[d]][a]);
        norm2 += g * g;
      }
      row_norm2[d] = norm2;
    }
    double total_norm2 = 0.0;
    for (double v : row_norm2) total_norm2 += v;

    double suffix_norm2 = total_norm2;
    for (std::size_t j = 0; j < depth; ++j) {
      const std::size_t anc = path[j];
      double* dst = &s1[anc * params];
      for (std::size_t d = 0; d < depth; ++d) {
        for (std::size_t a = 0; a < b; ++a) {
          const double g = r_hat * inv_t * ((a == full[d] ? 1.0 : 0.0) - probs[path[d]][a]);
          dst[path[d] * b + a] += py * g;
        }
      }
      s2[anc] += py * total_norm2;
      s2c[anc] += py * suffix_norm2;
      q_below[anc] += q[y];
      suffix_norm2 -= row_norm2[j];
    }
  }

  GradientStats out;
  out.guidance_states = depth;
  out.samples_per_state = samples_per_state;
  out.exact_grad = GradientTable(shape);
  std::copy(s1.begin(), s1.begin() + static_cast<std::ptrdiff_t>(params), out.exact_grad.values().begin());

  const double m = static_cast<double>(depth);
  const double n = static_cast<double>(samples_per_state);
  std::vector<double> mean_full(params, 0.0), mean_completion(params, 0.0);
  double var_sum = 0.0, var_sum_c = 0.0, root_var = 0.0;

  for (std::size_t node = 0; node < nodes; ++node) {
    const double rp = reach.nonterminal[node];
    require(rp > 0.0, "policy assigns zero probability to a state; moments are undefined");
    const double* v = &s1[node * params];
    double norm2 = 0.0, norm2_c = 0.0;
    for (std::size_t other = 0; other < nodes; ++other) {
      const bool below = node_depth[other] >= node_depth[node];
      for (std::size_t a = 0; a < b; ++a) {
        const double mean = v[other * b + a] / rp;
        norm2 += mean * mean;
        if (below) norm2_c += mean * mean;
      }
    }
    const double var = std::max(0.0, s2[node] / rp - norm2);
    const double var_c = std::max(0.0, s2c[node] / rp - norm2_c);
    if (node == 0) root_var = var;
    var_sum += q_below[node] * var;
    var_sum_c += q_below[node] * var_c;

    const double w = q_below[node] / rp / m;
    if (w == 0.0) continue;
    for (std::size_t other = 0; other < nodes; ++other) {
      const bool below = node_depth[other] >= node_depth[node];
      for (std::size_t a = 0; a < b; ++a) {
        const std::size_t i = other * b + a;
        mean_full[i] += w * v[i];
        if (below) mean_completion[i] += w * v[i];
      }
    }
  }

  out.var_vanilla = root_var / (m * n);
  out.var_guided_expected = var_sum / (m * m * n);
  out.var_guided_completion = var_sum_c / (m * m * n);
  double bias2 = 0.0, bias2_c = 0.0;
  for (std::size_t i = 0; i < params; ++i) {
    bias2 += (mean_full[i] - s1[i]) * (mean_full[i] - s1[i]);
    bias2_c += (mean_completion[i] - s1[i]) * (mean_completion[i] - s1[i]);
  }
  out.bias_guided = std::sqrt(bias2);
  out.bias_guided_completion = std::sqrt(bias2_c);
  return out;
}

// ---------------------------------------------------------------------------

EnvSpec verification_env_spec(std::uint64_t seed, std::uint32_t max_depth, std::uint32_t max_branching) {
  RngStream rng(mix64(seed ^ 0x7665726966ULL));
  EnvSpec spec;
  spec.depth = 1 + static_cast<std::uint32_t>(rng.below(max_depth));
  spec.branching = 2 + static_cast<std::uint32_t>(rng.below(max_branching - 1));
  spec.correct_fraction = 0.05 + 0.9 * rng.uniform();
  spec.seed = rng.next_u64();
  return spec;
}

bool VerifyReport::all_passed() const {
  return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed(); });
}

std::string VerifyReport::to_json() const {
  nlohmann::ordered_json j;
  j["all_passed"] = all_passed();
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    nlohmann::ordered_json rj;
    rj["name"] = r.name;
    rj["cases_run"] = r.cases_run;
    rj["cases_passed"] = r.cases_passed;
    rj["worst_margin"] = r.worst_margin;
    rj["first_failure"] = r.first_failure;
    arr.push_back(std::move(rj));
  }
  j["checks"] = std::move(arr);
  return j.dump(2) + "\n";
}

namespace {

struct CaseOutcome {
  bool pass = true;
  double margin = std::numeric_limits<double>::infinity();
  std::string detail;
};

void merge(CheckResult& res, const std::vector<CaseOutcome>& cases) {
  res.worst_margin = std::numeric_limits<double>::infinity();
  for (const auto& c : cases) {
    ++res.cases_run;
    if (c.pass) {
      ++res.cases_passed;
    } else if (res.first_failure.empty()) {
      res.first_failure = c.detail;
    }
    res.worst_margin = std::min(res.worst_margin, c.margin);
  }
  if (!std::isfinite(res.worst_margin)) res.worst_margin = 0.0;
}

double chain_margin(const ConditionalChain& chain) {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < chain.values.size(); ++i) {
    const double step = chain.values[i] - chain.values[i - 1];
    margin = std::min(margin, chain.guidance_correct ? step : -step);
  }
  return margin;
}

TabularPolicy verification_policy(const TreeShape& shape, std::uint64_t seed) {
  RngStream rng(mix64(seed ^ 0x706f6c6963ULL));
  const double scale = 3.0 * rng.uniform();
  return TabularPolicy::random(shape, rng.next_u64(), scale);
}

}  // namespace

VerifyReport run_verification(const VerifyGrid& grid) {
  VerifyReport report;
  const StreamFactory cases(grid.seed);

  // Monotone value chain.
  {
    std::vector<CaseOutcome> out(grid.chain_cases + (grid.inject_violation ? 1 : 0));
    parallel_for(grid.chain_cases, grid.workers, [&](std::size_t c) {
      const std::uint64_t case_seed = cases.stream(1, 0, c).next_u64();
      const ReasoningEnv env = ReasoningEnv::generate(verification_env_spec(case_seed, 5, 4));
      const TabularPolicy policy = verification_policy(env.shape(), case_seed);
      CaseOutcome& o = out[c];
      for (bool correct : {true, false}) {
        const ConditionalChain chain = conditional_chain(env, policy, correct);
        o.margin = std::min(o.margin, chain_margin(chain));
        if (!check_prop1(chain)) {
          o.pass = false;
          o.detail = "case " + std::to_string(c) + (correct ? " (correct guidance)" : " (incorrect guidance)");
        }
      }
    });
    if (grid.inject_violation) {
      const ConditionalChain fake{true, {0.25, 0.2, 1.0}};
      out.back() = {check_prop1(fake), chain_margin(fake), "injected violation [0.25, 0.2, 1.0]"};
    }
    CheckResult res;
    res.name = "monotone_value_chain";
    merge(res, out);
    report.results.push_back(res);
  }

  // Pair-count condition on a dyadic grid so every count is exact in binary floating point.
  {
    std::vector<CaseOutcome> out;
    const std::size_t r = grid.pair_grid_resolution;
    for (std::size_t i = 0; i <= r; ++i) {
      for (std::size_t j = 0; j <= r; ++j) {
        for (std::size_t n = 0; n <= grid.pair_grid_max_states; ++n) {
          const bool correct = 2 * i <= r;
          const bool in_range = correct ? i + n * j <= r : n * j <= i;
          if (!in_range) continue;
          const double p0 = static_cast<double>(i) / static_cast<double>(r);
          const double delta = static_cast<double>(j) / static_cast<double>(r);
          const Prop2Check chk = check_prop2(p0, delta, n, 1);
          CaseOutcome o;
          o.pass = chk.consistent && (j != 0 || chk.counts.hit_guided == chk.counts.vanilla);
          if (chk.sufficient) o.margin = chk.counts.hit_guided - chk.counts.vanilla;
          if (!o.pass) o.detail = "p0=" + std::to_string(p0) + " delta=" + std::to_string(delta) + " n=" + std::to_string(n);
          out.push_back(std::move(o));
        }
      }
    }
    CheckResult res;
    res.name = "pair_count_condition";
    merge(res, out);
    report.results.push_back(res);
  }

  // Variance reduction and unbiasedness.
  {
    std::vector<CaseOutcome> var_out(grid.variance_cases), bias_out(grid.variance_cases);
    parallel_for(grid.variance_cases, grid.workers, [&](std::size_t c) {
      const std::uint64_t case_seed = cases.stream(3, 0, c).next_u64();
      const ReasoningEnv env = ReasoningEnv::generate(verification_env_spec(case_seed, 4, 3));
      const TabularPolicy policy = verification_policy(env.shape(), case_seed);
      const GradientStats st = gradient_estimator_stats(env, policy, policy, GuidanceDistribution::kPolicy, 0.0);
      const std::string label = "case " + std::to_string(c);
      var_out[c].margin = st.var_vanilla - st.var_guided_expected;
      var_out[c].pass = st.var_guided_expected <= st.var_vanilla + 1e-12;
      if (!var_out[c].pass) var_out[c].detail = label;
      bias_out[c].margin = 1e-10 - st.bias_guided;
      bias_out[c].pass = st.bias_guided <= 1e-10;
      if (!bias_out[c].pass) bias_out[c].detail = label;
    });
    CheckResult var_res;
    var_res.name = "guided_variance";
    merge(var_res, var_out);
    report.results.push_back(var_res);
    CheckResult bias_res;
    bias_res.name = "guided_unbiased";
    merge(bias_res, bias_out);
    report.results.push_back(bias_res);
  }
  return report;
}

}  // namespace marge

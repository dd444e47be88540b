#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "marge/error.hpp"
#include "marge/oracles.hpp"
#include "marge/policy.hpp"
#include "oracle.hpp"

using namespace marge;

TEST(Policy, ActionProbsSoftmax) {
  const TreeShape shape(1, 2);
  TabularPolicy p(shape);
  EXPECT_DOUBLE_EQ(p.action_probs(ActionSeq{})[0], 0.5);
  p.logits_at(0)[0] = std::log(3.0);
  EXPECT_NEAR(p.action_probs(ActionSeq{})[0], 0.75, 1e-15);
  EXPECT_NEAR(p.action_probs(ActionSeq{})[1], 0.25, 1e-15);
  const TabularPolicy cold(shape, 0.5);
  EXPECT_DOUBLE_EQ(cold.action_probs(ActionSeq{})[0], 0.5);
  EXPECT_THROW(p.action_probs(ActionSeq{0}), Error);
}

TEST(Policy, ProbabilitiesPositiveAndNormalised) {
  const TabularPolicy p = TabularPolicy::random(TreeShape(3, 4), 11, 30.0, 0.7);
  for (std::size_t n = 0; n < p.shape().nonterminal_count(); ++n) {
    const auto probs = p.probs_at(n);
    EXPECT_NEAR(std::accumulate(probs.begin(), probs.end(), 0.0), 1.0, 1e-12);
    for (double q : probs) EXPECT_GT(q, 0.0);
  }
}

TEST(Policy, SamplingIsDeterministicPerStream) {
  const ReasoningEnv t2 = canonical_t2();
  const TabularPolicy u = TabularPolicy::for_env(t2);
  RngStream a(42), b(42);
  EXPECT_EQ(sample_completion(u, t2, ActionSeq{}, a), sample_completion(u, t2, ActionSeq{}, b));
  RngStream c(1);
  EXPECT_TRUE(sample_completion(u, t2, ActionSeq{0, 1}, c).actions.empty());
}

TEST(Policy, NearDeterministicPolicyPicksActionZero) {
  const ReasoningEnv t2 = canonical_t2();
  TabularPolicy p = TabularPolicy::for_env(t2);
  for (std::size_t n = 0; n < p.shape().nonterminal_count(); ++n) p.logits_at(n)[0] = 50.0;
  RngStream rng(3);
  const Trajectory t = sample_completion(p, t2, ActionSeq{}, rng);
  EXPECT_EQ(t.actions, (ActionSeq{0, 0}));
  EXPECT_EQ(t.reward, 1);
}

TEST(Policy, SampledRewardMeanMatchesExactValue) {
  const ReasoningEnv t2 = canonical_t2();
  const TabularPolicy u = TabularPolicy::for_env(t2);
  const StreamFactory f(5);
  const int n = 100000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    RngStream rng = f.stream(0, 0, static_cast<std::uint64_t>(i));
    sum += sample_completion(u, t2, ActionSeq{}, rng).reward;
  }
  EXPECT_NEAR(sum / n, 0.25, 3 * std::sqrt(0.25 * 0.75 / n));
}

TEST(Policy, LogProb) {
  const ReasoningEnv t2 = canonical_t2();
  const TabularPolicy u = TabularPolicy::for_env(t2);
  EXPECT_NEAR(u.log_prob(ActionSeq{}, ActionSeq{0, 0}), std::log(0.25), 1e-15);
  EXPECT_EQ(u.log_prob(ActionSeq{0}, ActionSeq{}), 0.0);
  EXPECT_THROW(u.log_prob(ActionSeq{}, ActionSeq{0, 2}), Error);
  const TabularPolicy r = TabularPolicy::random(TreeShape(3, 3), 9, 2.0);
  for (const auto& leaf : oracle::all_leaves(3, 3)) {
    EXPECT_LE(r.log_prob(ActionSeq{}, leaf), 0.0);
    EXPECT_NEAR(std::exp(r.log_prob(ActionSeq{}, leaf)), oracle::path_prob(r, {}, leaf), 1e-14);
  }
}

TEST(Policy, GradLogProbOnT2) {
  const ReasoningEnv t2 = canonical_t2();
  const TabularPolicy u = TabularPolicy::for_env(t2);
  const GradientTable g = u.grad_log_prob(ActionSeq{}, ActionSeq{0, 0});
  EXPECT_DOUBLE_EQ(g.row(0)[0], 0.5);
  EXPECT_DOUBLE_EQ(g.row(0)[1], -0.5);
  EXPECT_DOUBLE_EQ(g.row(2)[0], 0.0);  // state (1) is off the path
}

TEST(Policy, GradLogProbMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    RngStream rng(seed * 31 + 7);
    const TreeShape shape(1 + static_cast<std::uint32_t>(rng.below(4)), 2 + static_cast<std::uint32_t>(rng.below(3)));
    const TabularPolicy pi = TabularPolicy::random(shape, seed, 2.0, 0.5 + rng.uniform());
    const std::uint32_t start_len = static_cast<std::uint32_t>(rng.below(shape.depth()));
    const ActionSeq start = shape.prefix_at(start_len, rng.below(shape.level_size(start_len)));
    ActionSeq actions;
    for (std::uint32_t d = start_len; d < shape.depth(); ++d) actions.push_back(static_cast<Action>(rng.below(shape.branching())));

    const GradientTable g = pi.grad_log_prob(start, actions);
    const auto numeric = oracle::numeric_gradient(pi, [&](const TabularPolicy& p) { return p.log_prob(start, actions); });
    EXPECT_LE(oracle::relative_error(g.values(), numeric), 1e-6) << "seed " << seed;
    for (std::size_t n = 0; n < shape.nonterminal_count(); ++n) {
      double row = 0.0;
      for (double v : g.row(n)) row += v;
      EXPECT_NEAR(row, 0.0, 1e-12);
    }
  }
}

TEST(Policy, KlExact) {
  const TreeShape shape(1, 2);
  const ReasoningEnv env = ReasoningEnv::from_labels({1, 2, 0.5, 0}, {1, 0});
  TabularPolicy p(shape), q(shape);
  q.logits_at(0)[0] = std::log(3.0);
  EXPECT_EQ(kl_exact(p, p, env), 0.0);
  EXPECT_NEAR(kl_exact(p, q, env), 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25), 1e-14);
}

TEST(Policy, KlDecomposesOverVisitedStates) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ReasoningEnv env = ReasoningEnv::generate({3, 3, 0.5, seed});
    const TabularPolicy p = TabularPolicy::random(env.shape(), seed, 1.5);
    const TabularPolicy q = TabularPolicy::random(env.shape(), seed + 1000, 1.5);
    const ReachTable reach = reach_probabilities(env, p);
    double expected = 0.0;
    for (std::size_t n = 0; n < env.shape().nonterminal_count(); ++n) {
      const auto pp = p.probs_at(n), qq = q.probs_at(n);
      double kl = 0.0;
      for (std::size_t a = 0; a < pp.size(); ++a) kl += pp[a] * std::log(pp[a] / qq[a]);
      expected += reach.nonterminal[n] * kl;
    }
    EXPECT_NEAR(kl_exact(p, q, env), expected, 1e-12);
    EXPECT_GE(kl_exact(p, q, env), 0.0);
  }
}

TEST(Policy, SnapshotIsIndependent) {
  const ReasoningEnv env = ReasoningEnv::generate({2, 3, 0.5, 1});
  TabularPolicy p = TabularPolicy::random(env.shape(), 2, 1.0);
  const TabularPolicy ref = snapshot_reference(p);
  EXPECT_EQ(kl_exact(p, ref, env), 0.0);
  EXPECT_EQ(snapshot_reference(ref), ref);
  const auto before = ref.probs_at(0);
  GradientTable g(env.shape());
  g.row(0)[1] = 1.0;
  p.apply_gradient(g, 0.5);
  EXPECT_EQ(ref.probs_at(0), before);
  EXPECT_NE(p.probs_at(0), before);
}

TEST(Policy, JsonRoundTripKeyedByPrefix) {
  const TabularPolicy p = TabularPolicy::random(TreeShape(2, 3), 17, 3.0, 0.8);
  const std::string text = p.to_json();
  EXPECT_NE(text.find("\"2\": ["), std::string::npos);
  EXPECT_NE(text.find("\"\": ["), std::string::npos);
  EXPECT_EQ(TabularPolicy::from_json(text), p);
}

TEST(Policy, GreedyTiesGoLow) {
  TabularPolicy p(TreeShape(1, 3));
  EXPECT_EQ(p.greedy_action(0), 0u);
  p.logits_at(0)[2] = 1.0;
  EXPECT_EQ(p.greedy_action(0), 2u);
}

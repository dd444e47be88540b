#include <gtest/gtest.h>

#include <cmath>

#include "marge/env.hpp"
#include "marge/error.hpp"
#include "marge/oracles.hpp"
#include "marge/policy.hpp"
#include "oracle.hpp"

using namespace marge;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::kAssertion;
}

}  // namespace

TEST(TreeShape, IndexingRoundTrips) {
  const TreeShape shape(3, 3);
  EXPECT_EQ(shape.leaf_count(), 27u);
  EXPECT_EQ(shape.nonterminal_count(), 13u);
  std::size_t expected = 0;
  for (std::uint32_t len = 0; len < 3; ++len) {
    for (std::size_t v = 0; v < shape.level_size(len); ++v) {
      const ActionSeq p = shape.prefix_at(len, v);
      EXPECT_EQ(shape.node_index(p), expected++);
      EXPECT_EQ(shape.level_value(p), v);
    }
  }
  EXPECT_EQ(shape.leaf_index(ActionSeq{2, 1, 0}), 21u);
  EXPECT_EQ(shape.leaf_range(ActionSeq{1}), (std::pair<std::size_t, std::size_t>{9, 18}));
  EXPECT_EQ(parse_prefix_key(prefix_key(ActionSeq{0, 2, 1})), (ActionSeq{0, 2, 1}));
  EXPECT_EQ(prefix_key(ActionSeq{}), "");
}

TEST(Env, QuarterFractionGivesOneCorrectLeaf) {
  const ReasoningEnv env = ReasoningEnv::generate({2, 2, 0.25, 7});
  EXPECT_EQ(env.correct_count(), 1u);
}

TEST(Env, GenerationIsDeterministic) {
  const EnvSpec spec{4, 3, 0.37, 99};
  EXPECT_EQ(ReasoningEnv::generate(spec).terminal_labels(), ReasoningEnv::generate(spec).terminal_labels());
  EXPECT_EQ(ReasoningEnv::generate(spec).to_json(), ReasoningEnv::generate(spec).to_json());
  EXPECT_NE(ReasoningEnv::generate(spec).terminal_labels(),
            ReasoningEnv::generate({4, 3, 0.37, 100}).terminal_labels());
}

TEST(Env, EnumerabilityBound) {
  EXPECT_EQ(code_of([] { ReasoningEnv::generate({21, 2, 0.5, 0}); }), ErrorCode::kBoundExceeded);
  EXPECT_NO_THROW(ReasoningEnv::generate({20, 2, 0.5, 0}));
}

TEST(Env, RejectsMalformedSpecs) {
  EXPECT_THROW(ReasoningEnv::generate({0, 2, 0.5, 0}), Error);
  EXPECT_THROW(ReasoningEnv::generate({2, 1, 0.5, 0}), Error);
  EXPECT_THROW(ReasoningEnv::generate({2, 2, 0.0, 0}), Error);
  EXPECT_THROW(ReasoningEnv::generate({2, 2, 1.0, 0}), Error);
}

TEST(Env, RealizedFractionWithinOneLeafAndBothLabels) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    RngStream rng(seed);
    const EnvSpec spec{1 + static_cast<std::uint32_t>(rng.below(5)), 2 + static_cast<std::uint32_t>(rng.below(3)),
                       0.01 + 0.98 * rng.uniform(), seed};
    const ReasoningEnv env = ReasoningEnv::generate(spec);
    const double leaves = static_cast<double>(env.shape().leaf_count());
    EXPECT_GE(env.correct_count(), 1u);
    EXPECT_LE(env.correct_count(), env.shape().leaf_count() - 1);
    const double target = std::clamp(std::round(spec.correct_fraction * leaves), 1.0, leaves - 1);
    EXPECT_EQ(static_cast<double>(env.correct_count()), target);
    if (target == std::round(spec.correct_fraction * leaves))
      EXPECT_LE(std::abs(env.realized_correct_fraction() - spec.correct_fraction), 1.0 / leaves);
  }
}

TEST(Env, RewardOnCanonicalT2) {
  const ReasoningEnv t2 = canonical_t2();
  EXPECT_EQ(t2.reward(ActionSeq{0, 0}), 1);
  EXPECT_EQ(t2.reward(ActionSeq{1, 0}), 0);
  EXPECT_THROW(t2.reward(ActionSeq{0}), Error);
  EXPECT_EQ(t2.reward(Trajectory{{0}, {0}, 1}), 1);
}

TEST(Env, JsonRoundTripIsByteExact) {
  const ReasoningEnv env = ReasoningEnv::generate({3, 3, 0.3, 5});
  const std::string text = env.to_json();
  const ReasoningEnv back = ReasoningEnv::from_json(text);
  EXPECT_EQ(back, env);
  EXPECT_EQ(back.to_json(), text);
  EXPECT_NE(text.find("\"terminal_labels\""), std::string::npos);
  EXPECT_THROW(ReasoningEnv::from_json("{\"spec\": 3}"), Error);
}

TEST(Oracles, ValuesOnT2UnderUniform) {
  const ReasoningEnv t2 = canonical_t2();
  const TabularPolicy u = TabularPolicy::for_env(t2);
  EXPECT_DOUBLE_EQ(exact_state_value(t2, u, ActionSeq{}), 0.25);
  EXPECT_DOUBLE_EQ(exact_state_value(t2, u, ActionSeq{0}), 0.5);
  EXPECT_DOUBLE_EQ(exact_state_value(t2, u, ActionSeq{1}), 0.0);
  EXPECT_THROW(exact_state_value(t2, u, ActionSeq{2}), Error);
}

TEST(Oracles, EnumerationOnT2) {
  const ReasoningEnv t2 = canonical_t2();
  const TabularPolicy u = TabularPolicy::for_env(t2);
  const auto root = enumerate_completions(t2, u, ActionSeq{});
  ASSERT_EQ(root.size(), 4u);
  for (const auto& c : root) EXPECT_DOUBLE_EQ(c.probability, 0.25);
  const auto half = enumerate_completions(t2, u, ActionSeq{0});
  ASSERT_EQ(half.size(), 2u);
  for (const auto& c : half) EXPECT_DOUBLE_EQ(c.probability, 0.5);
  EXPECT_THROW(enumerate_completions(ReasoningEnv::generate({6, 3, 0.5, 1}), TabularPolicy(TreeShape(6, 3)),
                                     ActionSeq{}, 100),
               Error);
}

TEST(Oracles, BellmanAndEnumerationAgreeWithBruteForce) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const ReasoningEnv env = ReasoningEnv::generate({3, 2 + static_cast<std::uint32_t>(seed % 3), 0.4, seed});
    const TabularPolicy pi = TabularPolicy::random(env.shape(), seed, 2.0);
    const ValueTable table = exact_values(env, pi);
    for (std::uint32_t len = 0; len < env.depth(); ++len) {
      for (std::size_t v = 0; v < env.shape().level_size(len); ++v) {
        const ActionSeq s = env.shape().prefix_at(len, v);
        const double vs = exact_state_value(env, pi, s);
        EXPECT_NEAR(vs, oracle::value(env, pi, s), 1e-12);
        EXPECT_NEAR(table.at(env.shape(), s), vs, 1e-12);
        double bellman = 0.0;
        const auto probs = pi.action_probs(s);
        for (Action a = 0; a < env.branching(); ++a) bellman += probs[a] * exact_state_value(env, pi, concat(s, ActionSeq{a}));
        EXPECT_NEAR(vs, bellman, 1e-12);

        const auto comps = enumerate_completions(env, pi, s);
        double mass = 0.0, weighted = 0.0;
        for (const auto& c : comps) {
          mass += c.probability;
          weighted += c.probability * c.trajectory.reward;
          EXPECT_NEAR(std::exp(pi.log_prob(s, c.trajectory.actions)), c.probability, 1e-12);
        }
        EXPECT_NEAR(mass, 1.0, 1e-12);
        EXPECT_NEAR(weighted, vs, 1e-12);
      }
    }
  }
}

TEST(Oracles, ReachProbabilitiesMatchPathProducts) {
  const ReasoningEnv env = ReasoningEnv::generate({3, 3, 0.5, 4});
  const TabularPolicy pi = TabularPolicy::random(env.shape(), 4, 1.5);
  const ReachTable reach = reach_probabilities(env, pi);
  for (std::size_t y = 0; y < env.shape().leaf_count(); ++y) {
    const ActionSeq leaf = env.shape().prefix_at(3, y);
    EXPECT_NEAR(reach.leaf[y], oracle::path_prob(pi, {}, leaf), 1e-14);
  }
}

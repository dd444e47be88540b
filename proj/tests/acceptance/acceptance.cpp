// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "marge/commands.hpp"
#include "marge/metrics.hpp"
#include "marge/oracles.hpp"
#include "marge/theory.hpp"
#include "marge/train.hpp"
#include "oracle.hpp"

using namespace marge;
namespace fs = std::filesystem;

namespace {

constexpr unsigned kWorkers = 8;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<ReasoningEnv> env_batch(const EnvGenConfig& gen, std::uint64_t seed) {
  std::vector<ReasoningEnv> out;
  for (std::size_t i = 0; i < gen.count; ++i) out.push_back(ReasoningEnv::generate(sample_env_spec(gen, seed, i)));
  return out;
}

// 1
Outcome chain_exactness() {
  VerifyGrid grid;
  grid.seed = 2024;
  grid.chain_cases = 1000;
  grid.variance_cases = 0;
  grid.pair_grid_resolution = 2;
  grid.pair_grid_max_states = 0;
  grid.workers = kWorkers;
  const auto t0 = std::chrono::steady_clock::now();
  const CheckResult r = run_verification(grid).results[0];
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {r.passed() && r.cases_run == 1000 && secs < 60.0,
          std::to_string(r.cases_passed) + "/" + std::to_string(r.cases_run) + " cases, worst margin " +
              fmt("%.3g", r.worst_margin) + ", " + fmt("%.2f", secs) + " s"};
}

// 2
Outcome pair_condition_consistency() {
  VerifyGrid grid;
  grid.chain_cases = 0;
  grid.variance_cases = 0;
  grid.pair_grid_resolution = 64;
  grid.pair_grid_max_states = 24;
  const CheckResult r = run_verification(grid).results[1];

  // Independent recount of the sufficient cases straight from the formulas.
  std::size_t sufficient = 0, violated = 0;
  for (int i = 0; i <= 64; ++i)
    for (int j = 1; j <= 64; ++j)
      for (int n = 0; n <= 24; ++n) {
        const double p0 = i / 64.0, delta = j / 64.0;
        const bool correct = 2 * i <= 64;
        if (correct ? i + n * j > 64 : n * j > i) continue;
        const long k = static_cast<long>(std::floor(std::abs(1 - 2 * p0) / (2 * delta)));
        if (2 * k * (k + 1) < static_cast<long>(n) * (n + 1)) continue;
        ++sufficient;
        double hit = 0.0;
        for (int s = 0; s <= n; ++s) {
          const double p = correct ? p0 + s * delta : p0 - s * delta;
          hit += std::min(p, 1 - p);
        }
        if (hit < (n + 1) * std::min(p0, 1 - p0)) ++violated;
      }
  return {r.passed() && r.cases_run >= 10000 && violated == 0,
          std::to_string(r.cases_passed) + "/" + std::to_string(r.cases_run) + " triples; " +
              std::to_string(sufficient) + " sufficient, " + std::to_string(violated) + " violations by recount"};
}

// 3
Outcome guided_variance() {
  VerifyGrid grid;
  grid.seed = 2024;
  grid.chain_cases = 0;
  grid.variance_cases = 200;
  grid.pair_grid_resolution = 2;
  grid.pair_grid_max_states = 0;
  grid.workers = kWorkers;
  const auto t0 = std::chrono::steady_clock::now();
  const VerifyReport rep = run_verification(grid);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const CheckResult& var = rep.results[2];
  const CheckResult& bias = rep.results[3];
  return {var.passed() && bias.passed() && var.cases_run == 200 && secs < 300.0,
          "variance " + std::to_string(var.cases_passed) + "/200, unbiased " + std::to_string(bias.cases_passed) +
              "/200, " + fmt("%.2f", secs) + " s"};
}

// 4
Outcome gradient_correctness() {
  double worst[3] = {0, 0, 0};
  int counts[3] = {0, 0, 0};
  double ln2_err = 0.0;
  for (std::uint64_t seed = 0; counts[0] < 50 || counts[1] < 50 || counts[2] < 50; ++seed) {
    RngStream rng(mix64(seed + 91));
    const EnvSpec spec{1 + static_cast<std::uint32_t>(rng.below(3)), 2 + static_cast<std::uint32_t>(rng.below(2)),
                       0.3 + 0.4 * rng.uniform(), seed};
    const ReasoningEnv env = ReasoningEnv::generate(spec);
    const TabularPolicy pi = TabularPolicy::random(env.shape(), seed, 1.5, 0.6 + rng.uniform());
    const TabularPolicy ref = TabularPolicy::random(env.shape(), seed + 77, 1.5, pi.temperature());
    const ActionSeq leaf = env.shape().prefix_at(spec.depth, rng.below(env.shape().leaf_count()));
    const auto groups = hit_guided_explore(pi, env, Trajectory{{}, leaf, env.reward(leaf)}, 6, Decomposition::per_step(),
                                           StreamFactory(seed));
    auto check = [&](int idx, const GradientTable& g, const std::function<double(const TabularPolicy&)>& f) {
      if (counts[idx] >= 50) return;
      const auto num = oracle::numeric_gradient(pi, f);
      worst[idx] = std::max(worst[idx], oracle::relative_error(g.values(), num));
      ++counts[idx];
    };
    const RolloutBuffer buffer = build_rl_buffer(groups);
    check(1, rl_loss_and_grad(pi, ref, buffer, 0.05).grad,
          [&](const TabularPolicy& p) { return rl_loss_and_grad(p, ref, buffer, 0.05).loss; });
    std::vector<Trajectory> correct;
    for (const auto& g : groups)
      for (const auto& c : g.completions)
        if (c.reward == 1) correct.push_back(c);
    if (!correct.empty())
      check(2, sft_loss_and_grad(pi, correct).grad, [&](const TabularPolicy& p) { return sft_loss_and_grad(p, correct).loss; });
    const auto pairs = build_preference_dataset(groups, ValueFilter{0, 1}, StreamFactory(seed)).pairs;
    if (!pairs.empty()) {
      check(0, dpo_loss_and_grad(pi, ref, pairs, 0.4).grad,
            [&](const TabularPolicy& p) { return dpo_loss_and_grad(p, ref, pairs, 0.4).loss; });
      ln2_err = std::max(ln2_err, std::abs(dpo_loss_and_grad(pi, pi, pairs, 0.4).loss - std::log(2.0)));
    }
  }
  const double w = std::max({worst[0], worst[1], worst[2]});
  return {w <= 1e-6 && ln2_err <= 1e-12,
          "max rel err dpo " + fmt("%.2e", worst[0]) + " rl " + fmt("%.2e", worst[1]) + " sft " + fmt("%.2e", worst[2]) +
              " (50 each); |L_dpo(ref) - ln2| " + fmt("%.1e", ln2_err)};
}

// 5
Outcome estimator_sanity() {
  const int seeds = 10000;
  const std::size_t n = 8;
  int within = 0;
  double worst_z = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    RngStream rng(mix64(s + 5000));
    const ReasoningEnv env = ReasoningEnv::generate(
        {2 + static_cast<std::uint32_t>(rng.below(3)), 2 + static_cast<std::uint32_t>(rng.below(3)), 0.2 + 0.6 * rng.uniform(), s});
    const TabularPolicy pi = TabularPolicy::random(env.shape(), s, 1.5);
    const std::uint32_t len = static_cast<std::uint32_t>(rng.below(env.depth()));
    const ActionSeq state = env.shape().prefix_at(len, rng.below(env.shape().level_size(len)));
    const double v = exact_state_value(env, pi, state);
    double sum = 0.0;
    for (int k = 0; k < seeds; ++k)
      sum += mc_value_estimate(collect_group(pi, env, 0, state, n, StreamFactory(static_cast<std::uint64_t>(k))));
    const double se = std::sqrt(v * (1 - v) / (static_cast<double>(n) * seeds));
    const double diff = std::abs(sum / seeds - v);
    // v in {0, 1} leaves no spread: the estimate has to be exact.
    const double z = se > 0.0 ? diff / se : (diff == 0.0 ? 0.0 : INFINITY);
    worst_z = std::max(worst_z, z);
    if (z <= 3.0) ++within;
  }
  std::size_t mismatches = 0, total = 0;
  for (unsigned nn = 1; nn <= 12; ++nn)
    for (unsigned c = 0; c <= nn; ++c)
      for (unsigned k = 1; k <= nn; ++k) {
        const auto [hits, subsets] = oracle::pass_at_k_counts(nn, c, k);
        ++total;
        // exact rational: pass_at_k * subsets must be the integer hit count
        if (std::abs(pass_at_k(nn, c, k) * static_cast<double>(subsets) - static_cast<double>(hits)) > 1e-9 * subsets)
          ++mismatches;
      }
  return {within == 20 && mismatches == 0,
          std::to_string(within) + "/20 states within 3 s.e. (worst " + fmt("%.2f", worst_z) + " s.e.); pass@k " +
              std::to_string(total - mismatches) + "/" + std::to_string(total) + " exact"};
}

// 6: data collection under the initial policy on default env batches.
Outcome collection_analogue() {
  const auto t0 = std::chrono::steady_clock::now();
  EnvGenConfig gen;
  gen.count = 16;
  TrainConfig tc;
  std::vector<double> pairs_ours, pairs_van, ent_ours, ent_van;
  int ours_ge_succ = 0;
  bool cost_matched = true;
  const int batches = 50;
  for (int b = 0; b < batches; ++b) {
    const std::uint64_t seed = 7000 + static_cast<std::uint64_t>(b);
    const auto tasks = matched_task_set(tc, env_batch(gen, seed), seed, kWorkers);
    const auto init = initial_policies(tc, tasks, seed);
    const GuidancePool base = init_candidates(init, tasks, tc.n1, StreamFactory(seed).derive(Purpose::kInitCandidates, 0), kWorkers);
    auto collect = [&](Strategy s, bool guided) {
      GuidancePool pool = base;
      select_guidance(pool, s, StreamFactory(seed).derive(Purpose::kSelect, 0));
      return measure_collection(init, tasks, pool, guided, tc.n_per_state, StreamFactory(seed).derive(Purpose::kExplore, 0), kWorkers);
    };
    const CollectionStats ours = collect(Strategy::kOurs, true);
    const CollectionStats succ = collect(Strategy::kSucc, true);
    const CollectionStats van = collect(Strategy::kOurs, false);
    cost_matched = cost_matched && ours.generation_cost == van.generation_cost;
    pairs_ours.push_back(static_cast<double>(ours.valid_pairs));
    pairs_van.push_back(static_cast<double>(van.valid_pairs));
    ent_ours.push_back(ours.entropy_bits);
    ent_van.push_back(van.entropy_bits);
    if (ours.valid_pairs >= succ.valid_pairs) ++ours_ge_succ;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double mp_o = median(pairs_ours), mp_v = median(pairs_van), me_o = median(ent_ours), me_v = median(ent_van);
  return {cost_matched && mp_o >= mp_v && me_o >= me_v && ours_ge_succ >= 30 && secs < 600.0,
          "median pairs ours " + fmt("%.1f", mp_o) + " vs vanilla " + fmt("%.1f", mp_v) + ", median entropy " +
              fmt("%.3f", me_o) + " vs " + fmt("%.3f", me_v) + ", ours>=succ " + std::to_string(ours_ge_succ) + "/50" +
              (cost_matched ? ", cost matched" : ", COST MISMATCH") + ", " + fmt("%.1f", secs) + " s"};
}

// Sparse-reward batches: root sampling rarely finds a correct response.
EnvGenConfig sparse_gen() {
  EnvGenConfig gen;
  gen.count = 16;
  gen.depth_min = gen.depth_max = 3;
  gen.branching_min = gen.branching_max = 8;
  gen.correct_fraction_min = 0.004;
  gen.correct_fraction_max = 0.01;
  return gen;
}

TrainConfig sparse_train() {
  TrainConfig tc;
  tc.learning_rate = 30.0;
  tc.episodes = 10;
  tc.n1 = 128;
  tc.eval_samples = 8;
  tc.k_list = {8};
  return tc;
}

// Mixed-to-easy batches where guidance choice matters.
EnvGenConfig ordering_gen() {
  EnvGenConfig gen;
  gen.count = 16;
  gen.depth_min = gen.depth_max = 3;
  gen.branching_min = gen.branching_max = 3;
  gen.correct_fraction_min = 0.45;
  gen.correct_fraction_max = 0.75;
  return gen;
}

TrainConfig ordering_train() {
  TrainConfig tc;
  tc.learning_rate = 5.0;
  tc.episodes = 10;
  tc.eval_samples = 8;
  tc.k_list = {8};
  return tc;
}

// 7
Outcome learning_analogue() {
  const EnvGenConfig gen = sparse_gen();
  const TrainConfig tc = sparse_train();
  const int seeds = 20;
  std::vector<double> curve(tc.episodes + 1, 0.0);
  int ours_ge_van = 0, ours_init = 0, van_init = 0;
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t seed = static_cast<std::uint64_t>(s);
    const auto tasks = matched_task_set(tc, env_batch(gen, 1000 + seed), seed, kWorkers);
    const double init = mean_exact_root_value(initial_policies(tc, tasks, seed), tasks);
    RunOptions opt;
    opt.workers = kWorkers;
    const RunResult ours = marge_run(ablation_config(tc, "ours"), tasks, seed, opt);
    const RunResult van = marge_run(ablation_config(tc, "vanilla-rl"), tasks, seed, opt);
    curve[0] += init / seeds;
    for (std::size_t i = 0; i < tc.episodes; ++i) curve[i + 1] += ours.reports[i].mean_root_value / seeds;
    const double fo = ours.reports.back().mean_root_value, fv = van.reports.back().mean_root_value;
    ours_ge_van += fo >= fv;
    ours_init += fo > init;
    van_init += fv > init;
  }
  bool monotone = true;
  for (std::size_t i = 1; i < curve.size(); ++i) monotone = monotone && curve[i] >= curve[i - 1];
  return {monotone && ours_ge_van >= 14 && ours_init >= 18 && van_init >= 18,
          "seed-mean root value " + fmt("%.4f", curve.front()) + " -> " + fmt("%.4f", curve.back()) +
              (monotone ? " nondecreasing" : " NOT monotone") + ", ours>=vanilla-rl " + std::to_string(ours_ge_van) +
              "/20, beat init ours " + std::to_string(ours_init) + "/20 vanilla " + std::to_string(van_init) + "/20"};
}

// 8
Outcome strategy_ordering() {
  const EnvGenConfig gen = ordering_gen();
  const TrainConfig tc = ordering_train();
  const char* names[] = {"ours", "random", "succ", "no-update"};
  int holds = 0;
  int pair_counts[4] = {0, 0, 0, 0};  // o>=r, r>=s, r>=n
  for (int s = 0; s < 20; ++s) {
    const std::uint64_t seed = static_cast<std::uint64_t>(s);
    const auto tasks = matched_task_set(tc, env_batch(gen, 1000 + seed), seed, kWorkers);
    double fin[4];
    for (int k = 0; k < 4; ++k) {
      RunOptions opt;
      opt.workers = kWorkers;
      fin[k] = marge_run(ablation_config(tc, names[k]), tasks, seed, opt).reports.back().mean_root_value;
    }
    pair_counts[0] += fin[0] >= fin[1];
    pair_counts[1] += fin[1] >= fin[2];
    pair_counts[2] += fin[1] >= fin[3];
    holds += fin[0] >= fin[1] && fin[1] >= fin[2] && fin[1] >= fin[3];
  }
  return {holds >= 11, "full ordering in " + std::to_string(holds) + "/20 seeds (ours>=random " +
                           std::to_string(pair_counts[0]) + ", random>=succ " + std::to_string(pair_counts[1]) +
                           ", random>=no-update " + std::to_string(pair_counts[2]) + ")"};
}

// 9
Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "marge_acceptance_determinism";
  fs::remove_all(root);
  RunConfig c;
  c.seed = 99;
  c.envs.count = 16;
  c.train.episodes = 4;
  c.env_dir = (root / "envs").string();
  std::ostringstream log;
  cmd_gen_envs(c, log);
  std::vector<std::string> texts;
  for (unsigned w : {1u, 4u, 8u}) {
    c.output_dir = (root / ("w" + std::to_string(w))).string();
    cmd_run(c, w, log);
    std::ifstream in(fs::path(c.output_dir) / "reports.csv", std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    texts.push_back(ss.str());
  }
  fs::remove_all(root);
  const bool same = texts[0] == texts[1] && texts[0] == texts[2] && !texts[0].empty();
  return {same, std::string(same ? "identical" : "DIFFERENT") + " reports.csv at 1/4/8 workers (" +
                    std::to_string(std::count(texts[0].begin(), texts[0].end(), '\n')) + " lines)"};
}

// 10
Outcome cost_accounting() {
  bool ok = true;
  std::string detail;
  const std::size_t n = 8;
  for (std::uint32_t h = 2; h <= 8; ++h) {
    const ReasoningEnv env = ReasoningEnv::generate({h, 2, 0.5, h});
    const TabularPolicy u = TabularPolicy::for_env(env);
    const ActionSeq leaf(h, 0);
    const Trajectory guidance{{}, leaf, env.reward(leaf)};
    const auto groups = hit_guided_explore(u, env, guidance, n, Decomposition::per_step(), StreamFactory(h));
    const std::uint64_t guided = generation_cost(groups);
    const std::uint64_t vanilla = generation_cost(vanilla_explore(u, env, n, StreamFactory(h)));
    // guided == (H+1)/2 * vanilla, compared in integers
    const bool eq = 2 * guided == (h + 1) * vanilla && guided == planned_hit_guided_cost(guidance, n, Decomposition::per_step());
    ok = ok && eq;
    detail += (detail.empty() ? "" : " ") + std::string("H=") + std::to_string(h) + ":" + std::to_string(guided) + "/" +
              std::to_string(vanilla);
  }
  return {ok, detail};
}

}  // namespace

int main() {
  const std::pair<const char*, Outcome (*)()> criteria[] = {
      {"monotone conditional values", chain_exactness},
      {"pair-count condition consistency", pair_condition_consistency},
      {"guided variance and unbiasedness", guided_variance},
      {"loss gradients vs finite differences", gradient_correctness},
      {"value and pass@k estimators", estimator_sanity},
      {"valid pairs and entropy at matched cost", collection_analogue},
      {"guided rl vs matched-budget vanilla rl", learning_analogue},
      {"guidance strategy ordering", strategy_ordering},
      {"worker-count determinism", determinism},
      {"per-step cost factor", cost_accounting},
  };
  int failed = 0;
  int idx = 0;
  for (const auto& [name, fn] : criteria) {
    ++idx;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %2d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", idx, name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  std::printf("%d/%d criteria passed\n", idx - failed, idx);
  return failed == 0 ? 0 : 1;
}

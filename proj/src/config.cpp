#include "marge/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "marge/error.hpp"
#include "marge/guidance.hpp"
#include "marge/rng.hpp"

namespace marge {
namespace {

using json = nlohmann::json;

void only_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) fail(ErrorCode::kConfig, where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items()) {
    if (!ok.count(key)) fail(ErrorCode::kConfig, "unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!obj.at(key).is_number_unsigned()) fail(ErrorCode::kConfig, where + "." + key + " must be a nonnegative integer");
  }
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::kConfig, where + "." + key + " has the wrong type");
  }
}

template <typename T>
void read_range(const json& obj, const char* key, T& lo, T& hi, const std::string& where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if constexpr (std::is_unsigned_v<T>) {
    const bool ok = v.is_array() ? std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number_unsigned(); })
                                 : v.is_number_unsigned();
    if (!ok) fail(ErrorCode::kConfig, where + "." + key + " must hold nonnegative integers");
  }
  try {
    if (v.is_array()) {
      if (v.size() != 2) fail(ErrorCode::kConfig, where + "." + key + " must be [min, max]");
      lo = v[0].get<T>();
      hi = v[1].get<T>();
    } else {
      lo = hi = v.get<T>();
    }
  } catch (const json::exception&) {
    fail(ErrorCode::kConfig, where + "." + key + " has the wrong type");
  }
}

void parse_train(const json& j, TrainConfig& t) {
  only_keys(j, "train",
            {"beta_dpo", "beta_kl", "learning_rate", "episodes", "batch_size", "n_per_state", "n1", "value_filter", "mode",
             "strategy", "epochs_per_iter", "decomposition", "temperature", "init_logit_scale", "early_stopping",
             "patience"});
  read(j, "beta_dpo", t.beta_dpo, "train");
  read(j, "beta_kl", t.beta_kl, "train");
  read(j, "learning_rate", t.learning_rate, "train");
  read(j, "episodes", t.episodes, "train");
  read(j, "batch_size", t.batch_size, "train");
  read(j, "n_per_state", t.n_per_state, "train");
  read(j, "n1", t.n1, "train");
  read(j, "epochs_per_iter", t.epochs_per_iter, "train");
  read(j, "temperature", t.temperature, "train");
  read(j, "init_logit_scale", t.init_logit_scale, "train");
  read(j, "early_stopping", t.early_stopping, "train");
  read(j, "patience", t.patience, "train");
  if (j.contains("value_filter")) {
    ValueFilter f;
    read_range(j, "value_filter", f.lo, f.hi, "train");
    t.value_filter = f;
  }
  if (j.contains("mode")) {
    std::string m;
    read(j, "mode", m, "train");
    t.mode = parse_train_mode(m);
  }
  if (j.contains("strategy")) {
    std::string s;
    read(j, "strategy", s, "train");
    t.strategy = parse_strategy(s);
  }
  if (j.contains("decomposition")) {
    const json& d = j.at("decomposition");
    if (d == "per-step") {
      t.decomposition = Decomposition::per_step();
    } else if (d.is_object() && d.size() == 1 && d.contains("even") && d.at("even").is_number_unsigned()) {
      t.decomposition = Decomposition::even(d.at("even").get<std::uint32_t>());
    } else {
      fail(ErrorCode::kConfig, "train.decomposition must be \"per-step\" or {\"even\": count}");
    }
  }
}

}  // namespace

std::string RunConfig::envs_path() const { return env_dir.value_or(output_dir + "/envs"); }

void RunConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorCode::kConfig, what);
  };
  check(envs.count >= 1, "envs.count must be >= 1");
  check(envs.depth_min >= 1 && envs.depth_min <= envs.depth_max, "envs.depth must satisfy 1 <= min <= max");
  check(envs.branching_min >= 2 && envs.branching_min <= envs.branching_max,
        "envs.branching must satisfy 2 <= min <= max");
  check(envs.correct_fraction_min > 0.0 && envs.correct_fraction_min <= envs.correct_fraction_max &&
            envs.correct_fraction_max < 1.0,
        "envs.correct_fraction must satisfy 0 < min <= max < 1");
  try {
    EnvSpec{envs.depth_max, envs.branching_max, 0.5, 0}.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kConfig, std::string("largest env in range is invalid: ") + e.what());
  }
  train.validate();
  check(!ablate.strategies.empty(), "ablate.strategies must be nonempty");
  check(ablate.seeds >= 1, "ablate.seeds must be >= 1");
  for (std::size_t n : ablate.sweep_n) check(n >= 1, "ablate.sweep_n entries must be >= 1");
  check(verify.pair_grid_resolution >= 2, "verify.pair_grid_resolution must be >= 2");
  check(!output_dir.empty(), "output_dir must be nonempty");
}

std::string RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = effective_seed();
  j["output_dir"] = output_dir;
  if (env_dir) j["env_dir"] = *env_dir;
  if (resume) j["resume"] = *resume;
  j["envs"] = {{"count", envs.count},
               {"depth", {envs.depth_min, envs.depth_max}},
               {"branching", {envs.branching_min, envs.branching_max}},
               {"correct_fraction", {envs.correct_fraction_min, envs.correct_fraction_max}}};
  const ValueFilter f = train.filter();
  nlohmann::ordered_json t = {{"beta_dpo", train.beta_dpo},
                              {"beta_kl", train.beta_kl},
                              {"learning_rate", train.learning_rate},
                              {"episodes", train.episodes},
                              {"batch_size", train.batch_size},
                              {"n_per_state", train.n_per_state},
                              {"n1", train.n1},
                              {"value_filter", {f.lo, f.hi}},
                              {"mode", to_string(train.mode)},
                              {"strategy", to_string(train.strategy)},
                              {"epochs_per_iter", train.epochs_per_iter},
                              {"temperature", train.temperature},
                              {"init_logit_scale", train.init_logit_scale},
                              {"early_stopping", train.early_stopping},
                              {"patience", train.patience}};
  if (train.decomposition) {
    t["decomposition"] = train.decomposition->mode == SplitMode::kPerStep
                             ? nlohmann::ordered_json("per-step")
                             : nlohmann::ordered_json{{"even", train.decomposition->count}};
  }
  j["train"] = std::move(t);
  j["eval"] = {{"n_samples", train.eval_samples}, {"k_list", train.k_list}};
  j["ablate"] = {{"strategies", ablate.strategies}, {"seeds", ablate.seeds}, {"sweep_n", ablate.sweep_n}};
  j["verify"] = {{"chain_cases", verify.chain_cases},
                 {"variance_cases", verify.variance_cases},
                 {"pair_grid_resolution", verify.pair_grid_resolution},
                 {"pair_grid_max_states", verify.pair_grid_max_states},
                 {"inject_violation", verify.inject_violation}};
  return j.dump(2) + "\n";
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text, nullptr, true, true);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  only_keys(j, "config", {"seed", "output_dir", "env_dir", "resume", "envs", "train", "eval", "ablate", "verify"});
  if (j.contains("seed")) {
    std::uint64_t s = 0;
    read(j, "seed", s, "config");
    c.seed = s;
  }
  read(j, "output_dir", c.output_dir, "config");
  if (j.contains("env_dir")) {
    std::string d;
    read(j, "env_dir", d, "config");
    c.env_dir = d;
  }
  if (j.contains("resume")) {
    std::string r;
    read(j, "resume", r, "config");
    c.resume = r;
  }
  if (j.contains("envs")) {
    const json& e = j.at("envs");
    only_keys(e, "envs", {"count", "depth", "branching", "correct_fraction"});
    read(e, "count", c.envs.count, "envs");
    read_range(e, "depth", c.envs.depth_min, c.envs.depth_max, "envs");
    read_range(e, "branching", c.envs.branching_min, c.envs.branching_max, "envs");
    read_range(e, "correct_fraction", c.envs.correct_fraction_min, c.envs.correct_fraction_max, "envs");
  }
  if (j.contains("train")) parse_train(j.at("train"), c.train);
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    only_keys(e, "eval", {"n_samples", "k_list"});
    read(e, "n_samples", c.train.eval_samples, "eval");
    read(e, "k_list", c.train.k_list, "eval");
  }
  if (j.contains("ablate")) {
    const json& a = j.at("ablate");
    only_keys(a, "ablate", {"strategies", "seeds", "sweep_n"});
    read(a, "strategies", c.ablate.strategies, "ablate");
    read(a, "seeds", c.ablate.seeds, "ablate");
    read(a, "sweep_n", c.ablate.sweep_n, "ablate");
  }
  if (j.contains("verify")) {
    const json& v = j.at("verify");
    only_keys(v, "verify", {"chain_cases", "variance_cases", "pair_grid_resolution", "pair_grid_max_states", "inject_violation"});
    read(v, "chain_cases", c.verify.chain_cases, "verify");
    read(v, "variance_cases", c.verify.variance_cases, "verify");
    read(v, "pair_grid_resolution", c.verify.pair_grid_resolution, "verify");
    read(v, "pair_grid_max_states", c.verify.pair_grid_max_states, "verify");
    read(v, "inject_violation", c.verify.inject_violation, "verify");
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kConfig, "cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

EnvSpec sample_env_spec(const EnvGenConfig& gen, std::uint64_t seed, std::size_t index) {
  RngStream rng = StreamFactory(seed).derive(Purpose::kEnvLabels, 0).stream(index, 0, 0);
  EnvSpec spec;
  spec.depth = gen.depth_min + static_cast<std::uint32_t>(rng.below(gen.depth_max - gen.depth_min + 1));
  spec.branching = gen.branching_min + static_cast<std::uint32_t>(rng.below(gen.branching_max - gen.branching_min + 1));
  spec.correct_fraction =
      gen.correct_fraction_min + (gen.correct_fraction_max - gen.correct_fraction_min) * rng.uniform();
  spec.seed = rng.next_u64();
  return spec;
}

}  // namespace marge

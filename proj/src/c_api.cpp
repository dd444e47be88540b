#include "marge/marge.h"

#include <fstream>
#include <iostream>
#include <iterator>
#include <new>
#include <string>

#include "marge/commands.hpp"
#include "marge/config.hpp"
#include "marge/env.hpp"
#include "marge/error.hpp"
#include "marge/oracles.hpp"
#include "marge/policy.hpp"

struct marge_env {
  marge::ReasoningEnv env;
};

struct marge_policy {
  marge::TabularPolicy policy;
};

namespace {

thread_local std::string g_last_error;

marge_status status_of(marge::ErrorCode code) {
  switch (code) {
    case marge::ErrorCode::kInvalidArgument: return MARGE_ERR_INVALID_ARGUMENT;
    case marge::ErrorCode::kBoundExceeded: return MARGE_ERR_BOUND_EXCEEDED;
    case marge::ErrorCode::kConfig: return MARGE_ERR_CONFIG;
    case marge::ErrorCode::kIo: return MARGE_ERR_IO;
    case marge::ErrorCode::kNumeric: return MARGE_ERR_NUMERIC;
    case marge::ErrorCode::kAssertion: return MARGE_ERR_ASSERTION;
  }
  return MARGE_ERR_INTERNAL;
}

template <typename Fn>
marge_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return MARGE_OK;
  } catch (const marge::Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return MARGE_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MARGE_ERR_INTERNAL;
  }
}

marge_status null_arg(const char* what) {
  g_last_error = std::string(what) + " is null";
  return MARGE_ERR_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* marge_version(void) { return "0.1.0"; }

const char* marge_last_error(void) { return g_last_error.c_str(); }

marge_status marge_env_generate(uint32_t depth, uint32_t branching, double correct_fraction, uint64_t seed,
                                marge_env** out) {
  if (!out) return null_arg("out");
  return guarded([&] {
    *out = new marge_env{marge::ReasoningEnv::generate({depth, branching, correct_fraction, seed})};
  });
}

marge_status marge_env_load(const char* path, marge_env** out) {
  if (!path) return null_arg("path");
  if (!out) return null_arg("out");
  return guarded([&] {
    std::ifstream in(path);
    if (!in) marge::fail(marge::ErrorCode::kIo, std::string("cannot read ") + path);
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    *out = new marge_env{marge::ReasoningEnv::from_json(text)};
  });
}

marge_status marge_env_save(const marge_env* env, const char* path) {
  if (!env) return null_arg("env");
  if (!path) return null_arg("path");
  return guarded([&] {
    std::ofstream o(path, std::ios::binary | std::ios::trunc);
    if (!o) marge::fail(marge::ErrorCode::kIo, std::string("cannot write ") + path);
    o << env->env.to_json();
    if (!o.flush()) marge::fail(marge::ErrorCode::kIo, std::string("write failed for ") + path);
  });
}

void marge_env_free(marge_env* env) { delete env; }

marge_status marge_env_leaf_count(const marge_env* env, uint64_t* out) {
  if (!env) return null_arg("env");
  if (!out) return null_arg("out");
  *out = env->env.shape().leaf_count();
  return MARGE_OK;
}

marge_status marge_env_correct_count(const marge_env* env, uint64_t* out) {
  if (!env) return null_arg("env");
  if (!out) return null_arg("out");
  *out = env->env.correct_count();
  return MARGE_OK;
}

marge_status marge_env_reward(const marge_env* env, const uint32_t* actions, size_t len, int* out) {
  if (!env) return null_arg("env");
  if (!out) return null_arg("out");
  if (!actions && len > 0) return null_arg("actions");
  return guarded([&] { *out = env->env.reward(std::span<const uint32_t>(actions, len)); });
}

marge_status marge_policy_uniform(const marge_env* env, double temperature, marge_policy** out) {
  if (!env) return null_arg("env");
  if (!out) return null_arg("out");
  return guarded([&] { *out = new marge_policy{marge::TabularPolicy(env->env.shape(), temperature)}; });
}

marge_status marge_policy_random(const marge_env* env, uint64_t seed, double scale, marge_policy** out) {
  if (!env) return null_arg("env");
  if (!out) return null_arg("out");
  return guarded([&] { *out = new marge_policy{marge::TabularPolicy::random(env->env.shape(), seed, scale)}; });
}

void marge_policy_free(marge_policy* policy) { delete policy; }

marge_status marge_policy_state_value(const marge_policy* policy, const marge_env* env, const uint32_t* prefix,
                                      size_t len, double* out) {
  if (!policy) return null_arg("policy");
  if (!env) return null_arg("env");
  if (!out) return null_arg("out");
  if (!prefix && len > 0) return null_arg("prefix");
  return guarded([&] {
    marge::require(policy->policy.shape() == env->env.shape(), "policy does not match the env");
    *out = marge::exact_state_value(env->env, policy->policy, std::span<const uint32_t>(prefix, len));
  });
}

int marge_command(const char* name, const marge_command_options* options) {
  if (!name) {
    null_arg("name");
    return MARGE_EXIT_CONFIG;
  }
  const std::string cmd = name;
  bool verified = true;
  const marge_status st = guarded([&] {
    marge::RunConfig config = (options && options->config_path) ? marge::load_run_config(options->config_path)
                                                                : marge::RunConfig{};
    if (options && options->has_seed) config.seed = options->seed;
    if (options && options->out_dir) config.output_dir = options->out_dir;
    config.validate();
    const unsigned workers = (options && options->workers > 0) ? options->workers : 1;

    if (cmd == "gen-envs") {
      marge::cmd_gen_envs(config, std::cout);
    } else if (cmd == "run") {
      marge::cmd_run(config, workers, std::cout);
    } else if (cmd == "ablate") {
      marge::cmd_ablate(config, workers, std::cout);
    } else if (cmd == "verify") {
      verified = marge::cmd_verify(config, workers, std::cout);
    } else if (cmd == "report") {
      marge::cmd_report(config, std::cout);
    } else {
      marge::fail(marge::ErrorCode::kConfig, "unknown command '" + cmd + "'");
    }
  });
  std::cout.flush();
  if (st == MARGE_OK && !verified) {
    g_last_error = "verification failed";
    return MARGE_EXIT_ASSERTION;
  }
  switch (st) {
    case MARGE_OK: return MARGE_EXIT_OK;
    case MARGE_ERR_ASSERTION:
    case MARGE_ERR_NUMERIC:
    case MARGE_ERR_INTERNAL: return MARGE_EXIT_ASSERTION;
    default: return MARGE_EXIT_CONFIG;
  }
}

}  // extern "C"

#ifndef MARGE_MARGE_H
#define MARGE_MARGE_H

#include <stddef.h>
#include <stdint.h>

#if defined(MARGE_BUILDING_LIBRARY)
#define MARGE_API __attribute__((visibility("default")))
#else
#define MARGE_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum marge_status {
  MARGE_OK = 0,
  MARGE_ERR_INVALID_ARGUMENT = 1,
  MARGE_ERR_BOUND_EXCEEDED = 2,
  MARGE_ERR_CONFIG = 3,
  MARGE_ERR_IO = 4,
  MARGE_ERR_NUMERIC = 5,
  MARGE_ERR_ASSERTION = 6,
  MARGE_ERR_INTERNAL = 7
} marge_status;

/* Process exit codes returned by marge_command. */
enum { MARGE_EXIT_OK = 0, MARGE_EXIT_ASSERTION = 1, MARGE_EXIT_CONFIG = 2 };

typedef struct marge_env marge_env;
typedef struct marge_policy marge_policy;

MARGE_API const char* marge_version(void);

/* Message of the last failed call on this thread; "" if none. */
MARGE_API const char* marge_last_error(void);

MARGE_API marge_status marge_env_generate(uint32_t depth, uint32_t branching, double correct_fraction, uint64_t seed,
                                          marge_env** out);
MARGE_API marge_status marge_env_load(const char* path, marge_env** out);
MARGE_API marge_status marge_env_save(const marge_env* env, const char* path);
MARGE_API void marge_env_free(marge_env* env);
MARGE_API marge_status marge_env_leaf_count(const marge_env* env, uint64_t* out);
MARGE_API marge_status marge_env_correct_count(const marge_env* env, uint64_t* out);
/* Label of the terminal reached by `actions`, which must have length depth. */
MARGE_API marge_status marge_env_reward(const marge_env* env, const uint32_t* actions, size_t len, int* out);

MARGE_API marge_status marge_policy_uniform(const marge_env* env, double temperature, marge_policy** out);
MARGE_API marge_status marge_policy_random(const marge_env* env, uint64_t seed, double scale, marge_policy** out);
MARGE_API void marge_policy_free(marge_policy* policy);
/* Exact probability of reaching a correct terminal from `prefix`. */
MARGE_API marge_status marge_policy_state_value(const marge_policy* policy, const marge_env* env,
                                                const uint32_t* prefix, size_t len, double* out);

typedef struct marge_command_options {
  const char* config_path; /* NULL: defaults */
  int has_seed;
  uint64_t seed;
  unsigned workers; /* 0 is treated as 1 */
  const char* out_dir; /* NULL: keep the config's output_dir */
} marge_command_options;

/* Runs one of gen-envs, run, ablate, verify, report. Progress goes to stdout
   and the result is an exit code: 0 ok, 1 assertion failure (including a
   failed verification), 2 config or input error. */
MARGE_API int marge_command(const char* name, const marge_command_options* options);

#ifdef __cplusplus
}
#endif

#endif

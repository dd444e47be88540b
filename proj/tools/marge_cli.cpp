#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "marge/marge.h"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  unsigned workers = 1;
  std::string out;
};

void add_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "master seed, overrides the config");
  sub->add_option("--workers", f.workers, "worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--out", f.out, "output directory, overrides the config");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Guided-exploration self-training lab on enumerable tree environments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(marge_version()));

  Flags flags;
  const char* names[] = {"gen-envs", "run", "ablate", "verify", "report"};
  const char* help[] = {"generate the env set", "train and write reports.csv and checkpoints",
                        "compare guidance strategies at matched budget", "run the theory checks on a seeded grid",
                        "summarise a run directory"};
  for (int i = 0; i < 5; ++i) add_flags(app.add_subcommand(names[i], help[i]), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : MARGE_EXIT_CONFIG;
  }

  marge_command_options opts{};
  opts.config_path = flags.config.empty() ? nullptr : flags.config.c_str();
  opts.has_seed = flags.seed.has_value();
  opts.seed = flags.seed.value_or(0);
  opts.workers = flags.workers;
  opts.out_dir = flags.out.empty() ? nullptr : flags.out.c_str();

  const int rc = marge_command(app.get_subcommands().front()->get_name().c_str(), &opts);
  if (rc != MARGE_EXIT_OK) std::fprintf(stderr, "error: %s\n", marge_last_error());
  return rc;
}

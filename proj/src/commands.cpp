#include "marge/commands.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "marge/error.hpp"
#include "marge/guidance.hpp"
#include "marge/metrics.hpp"
#include "marge/theory.hpp"

namespace fs = std::filesystem;

namespace marge {
namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string numbered(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04zu%s", stem, i, ext);
  return buf;
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail(ErrorCode::kIo, "cannot create directory " + dir.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out.flush()) fail(ErrorCode::kIo, "write failed for " + path.string());
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(line);
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double pass_or_nan(const IterationReport& r, std::size_t k) {
  for (const auto& p : r.pass_k)
    if (p.k == k) return p.value;
  return std::nan("");
}

// Keeps the header and the rows of iterations before `keep` from an earlier file.
std::string kept_rows(const fs::path& path, const std::string& header, std::size_t keep) {
  std::string out = header;
  if (!fs::exists(path)) return out;
  const auto lines = lines_of(read_file(path));
  if (lines.empty() || lines.front() + "\n" != header) return out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split_csv(lines[i]);
    if (!cells.empty() && std::stoull(cells[0]) < keep) out += lines[i] + "\n";
  }
  return out;
}

}  // namespace

std::string reports_csv_header(std::span<const std::size_t> k_list) {
  std::string h = "iteration,pass1";
  for (std::size_t k : k_list) h += ",pass" + std::to_string(k);
  return h + ",entropy_bits,valid_pairs,gen_cost,mean_loss,mean_root_value\n";
}

std::string reports_csv_row(const IterationReport& r) {
  std::string row = std::to_string(r.iteration) + "," + num(r.pass1);
  for (const auto& p : r.pass_k) row += "," + num(p.value);
  row += "," + num(r.entropy_bits) + "," + std::to_string(r.valid_pairs) + "," + std::to_string(r.generation_cost) +
         "," + num(r.mean_loss) + "," + num(r.mean_root_value) + "\n";
  return row;
}

std::string metrics_csv_header() {
  return "iteration,pass1,pass8,pass64,entropy_bits,valid_pairs,gen_cost,mean_root_value\n";
}

std::string metrics_csv_row(const IterationReport& r) {
  return std::to_string(r.iteration) + "," + num(r.pass1) + "," + num(pass_or_nan(r, 8)) + "," +
         num(pass_or_nan(r, 64)) + "," + num(r.entropy_bits) + "," + std::to_string(r.valid_pairs) + "," +
         std::to_string(r.generation_cost) + "," + num(r.mean_root_value) + "\n";
}

// ---------------------------------------------------------------------------

void cmd_gen_envs(const RunConfig& config, std::ostream& log) {
  const fs::path dir = config.envs_path();
  make_dirs(dir);
  const std::uint64_t seed = config.effective_seed();
  nlohmann::ordered_json manifest;
  manifest["seed"] = seed;
  manifest["count"] = config.envs.count;
  auto files = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < config.envs.count; ++i) {
    const ReasoningEnv env = ReasoningEnv::generate(sample_env_spec(config.envs, seed, i));
    const std::string name = numbered("env", i, ".json");
    write_file(dir / name, env.to_json());
    files.push_back({{"file", name},
                     {"depth", env.spec().depth},
                     {"branching", env.spec().branching},
                     {"correct_count", env.correct_count()}});
  }
  manifest["files"] = std::move(files);
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  log << "wrote " << config.envs.count << " envs to " << dir.string() << "\n";
}

std::vector<ReasoningEnv> load_env_set(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  if (!fs::exists(manifest_path)) fail(ErrorCode::kIo, "no env set at " + dir + " (run gen-envs first)");
  std::vector<ReasoningEnv> envs;
  try {
    const auto manifest = nlohmann::json::parse(read_file(manifest_path));
    for (const auto& f : manifest.at("files"))
      envs.push_back(ReasoningEnv::from_json(read_file(fs::path(dir) / f.at("file").get<std::string>())));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, "malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (envs.empty()) fail(ErrorCode::kIo, "env set at " + dir + " is empty");
  return envs;
}

void cmd_run(const RunConfig& config, unsigned workers, std::ostream& log) {
  const std::vector<ReasoningEnv> tasks = load_env_set(config.envs_path());
  const fs::path out = config.output_dir;
  make_dirs(out / "checkpoints");
  write_file(out / "config.json", config.to_json());

  std::optional<RunState> resume;
  if (config.resume) resume = RunState::from_json(read_file(*config.resume));
  const std::size_t keep = resume ? resume->next_iteration : 0;

  std::string reports = kept_rows(out / "reports.csv", reports_csv_header(config.train.k_list), keep);
  std::string metrics = kept_rows(out / "metrics.csv", metrics_csv_header(), keep);
  write_file(out / "reports.csv", reports);
  write_file(out / "metrics.csv", metrics);

  RunOptions options;
  options.workers = workers;
  options.resume = resume ? &*resume : nullptr;
  options.on_iteration = [&](const IterationReport& rep, const RunState& state) {
    reports += reports_csv_row(rep);
    metrics += metrics_csv_row(rep);
    write_file(out / "reports.csv", reports);
    write_file(out / "metrics.csv", metrics);
    write_file(out / "checkpoints" / numbered("iter", rep.iteration, ".json"), state.to_json());
    std::ostringstream pool;
    write_pool_csv(pool, state.pool);
    write_file(out / "checkpoints" / numbered("pool", rep.iteration, ".csv"), pool.str());
    log << "iteration " << rep.iteration << ": pass1 " << short_num(rep.pass1) << " mean_root_value "
        << short_num(rep.mean_root_value) << " valid_pairs " << rep.valid_pairs << " gen_cost "
        << rep.generation_cost << "\n";
  };
  const RunResult result = marge_run(config.train, tasks, config.effective_seed(), options);
  if (result.stopped_early) log << "stopped early after " << result.reports.size() << " iterations\n";
  log << "run written to " << out.string() << "\n";
}

// ---------------------------------------------------------------------------

TrainConfig ablation_config(const TrainConfig& base, const std::string& name) {
  TrainConfig c = base;
  if (name == "vanilla-rl") {
    c.mode = TrainMode::kVanillaRl;
    c.strategy = Strategy::kOurs;
  } else if (name == "sft") {
    c.mode = TrainMode::kSft;
    c.strategy = Strategy::kOurs;
  } else if (name == "dpo") {
    c.mode = TrainMode::kDpo;
    c.strategy = Strategy::kOurs;
  } else {
    c.mode = TrainMode::kRl;
    c.strategy = parse_strategy(name);
  }
  return c;
}

std::vector<ReasoningEnv> matched_task_set(const TrainConfig& config, std::span<const ReasoningEnv> tasks,
                                           std::uint64_t seed, unsigned workers) {
  std::vector<ReasoningEnv> current(tasks.begin(), tasks.end());
  while (!current.empty()) {
    const auto policies = initial_policies(config, current, seed);
    const GuidancePool pool =
        init_candidates(policies, current, config.n1, StreamFactory(seed).derive(Purpose::kInitCandidates, 0), workers);
    std::vector<ReasoningEnv> kept;
    for (std::size_t i = 0; i < current.size(); ++i) {
      bool correct = false, incorrect = false;
      for (const auto& c : pool.tasks[i].candidates) (c.reward ? correct : incorrect) = true;
      if (correct && incorrect) kept.push_back(current[i]);
    }
    if (kept.size() == current.size()) break;
    current = std::move(kept);
  }
  if (current.empty()) fail(ErrorCode::kConfig, "no task yields both outcomes among its initial candidates");
  return current;
}

void cmd_ablate(const RunConfig& config, unsigned workers, std::ostream& log) {
  const std::vector<ReasoningEnv> all_tasks = load_env_set(config.envs_path());
  const fs::path out = config.output_dir;
  make_dirs(out);
  for (const auto& name : config.ablate.strategies) ablation_config(config.train, name).validate();

  std::string table = "strategy,seed,mode,tasks,init_mean_root_value,final_mean_root_value,final_pass1";
  for (std::size_t k : config.train.k_list) table += ",final_pass" + std::to_string(k);
  table += ",total_gen_cost,total_valid_pairs,mean_entropy_bits\n";
  std::string sweep = "seed,n_per_state,collection,gen_cost,valid_pairs,entropy_bits\n";
  std::map<std::string, std::pair<double, std::size_t>> summary;

  for (std::size_t s = 0; s < config.ablate.seeds; ++s) {
    const std::uint64_t seed = config.effective_seed() + s;
    const std::vector<ReasoningEnv> tasks = matched_task_set(config.train, all_tasks, seed, workers);
    const auto init = initial_policies(config.train, tasks, seed);
    const double init_value = mean_exact_root_value(init, tasks);

    for (const auto& name : config.ablate.strategies) {
      const TrainConfig tc = ablation_config(config.train, name);
      RunOptions options;
      options.workers = workers;
      const RunResult r = marge_run(tc, tasks, seed, options);
      std::uint64_t cost = 0;
      std::size_t pairs = 0;
      double entropy = 0.0;
      for (const auto& rep : r.reports) {
        cost += rep.generation_cost;
        pairs += rep.valid_pairs;
        entropy += rep.entropy_bits;
      }
      const double final_value = r.reports.empty() ? init_value : r.reports.back().mean_root_value;
      table += name + "," + std::to_string(seed) + "," + to_string(tc.mode) + "," + std::to_string(tasks.size()) + "," +
               num(init_value) + "," + num(final_value) + "," + num(r.reports.empty() ? 0.0 : r.reports.back().pass1);
      for (std::size_t k : config.train.k_list) table += "," + num(r.reports.empty() ? 0.0 : pass_or_nan(r.reports.back(), k));
      table += "," + std::to_string(cost) + "," + std::to_string(pairs) + "," +
               num(r.reports.empty() ? 0.0 : entropy / static_cast<double>(r.reports.size())) + "\n";
      summary[name].first += final_value;
      ++summary[name].second;
    }

    const GuidancePool base = init_candidates(init, tasks, config.train.n1,
                                              StreamFactory(seed).derive(Purpose::kInitCandidates, 0), workers);
    const std::pair<const char*, Strategy> guided[] = {
        {"ours", Strategy::kOurs}, {"random", Strategy::kRandom}, {"succ", Strategy::kSucc}};
    for (std::size_t n : config.ablate.sweep_n) {
      const StreamFactory streams = StreamFactory(seed).derive(Purpose::kCustom, n);
      for (const auto& [label, strategy] : guided) {
        GuidancePool pool = base;
        select_guidance(pool, strategy, StreamFactory(seed).derive(Purpose::kSelect, 0));
        const CollectionStats st = measure_collection(init, tasks, pool, true, n, streams, workers);
        sweep += std::to_string(seed) + "," + std::to_string(n) + "," + label + "," + std::to_string(st.generation_cost) +
                 "," + std::to_string(st.valid_pairs) + "," + num(st.entropy_bits) + "\n";
      }
      GuidancePool pool = base;
      select_guidance(pool, Strategy::kOurs, StreamFactory(seed).derive(Purpose::kSelect, 0));
      const CollectionStats st = measure_collection(init, tasks, pool, false, n, streams, workers);
      sweep += std::to_string(seed) + "," + std::to_string(n) + ",vanilla," + std::to_string(st.generation_cost) + "," +
               std::to_string(st.valid_pairs) + "," + num(st.entropy_bits) + "\n";
    }
    log << "seed " << seed << ": " << tasks.size() << " of " << all_tasks.size() << " tasks matched\n";
  }
  write_file(out / "ablation.csv", table);
  write_file(out / "collection_sweep.csv", sweep);
  for (const auto& name : config.ablate.strategies) {
    const auto& [total, count] = summary[name];
    log << name << ": mean final root value " << short_num(total / static_cast<double>(count)) << "\n";
  }
  log << "wrote " << (out / "ablation.csv").string() << " and " << (out / "collection_sweep.csv").string() << "\n";
}

// ---------------------------------------------------------------------------

bool cmd_verify(const RunConfig& config, unsigned workers, std::ostream& log) {
  VerifyGrid grid;
  grid.seed = config.effective_seed();
  grid.chain_cases = config.verify.chain_cases;
  grid.variance_cases = config.verify.variance_cases;
  grid.pair_grid_resolution = config.verify.pair_grid_resolution;
  grid.pair_grid_max_states = config.verify.pair_grid_max_states;
  grid.inject_violation = config.verify.inject_violation;
  grid.workers = workers;
  const VerifyReport report = run_verification(grid);
  make_dirs(config.output_dir);
  write_file(fs::path(config.output_dir) / "verify.json", report.to_json());
  for (const auto& r : report.results) {
    log << (r.passed() ? "PASS " : "FAIL ") << r.name << ": " << r.cases_passed << "/" << r.cases_run
        << " worst margin " << num(r.worst_margin);
    if (!r.passed()) log << " first failure: " << r.first_failure;
    log << "\n";
  }
  return report.all_passed();
}

void cmd_report(const RunConfig& config, std::ostream& log) {
  const fs::path dir = config.output_dir;
  const bool has_run = fs::exists(dir / "reports.csv");
  if (!has_run && !fs::exists(dir / "ablation.csv"))
    fail(ErrorCode::kIo, "nothing to report in " + dir.string() + " (no reports.csv or ablation.csv)");
  const auto lines = has_run ? lines_of(read_file(dir / "reports.csv")) : std::vector<std::string>{};
  if (has_run && lines.empty()) fail(ErrorCode::kIo, "empty reports.csv in " + dir.string());
  const auto header = has_run ? split_csv(lines.front()) : std::vector<std::string>{};
  auto column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    fail(ErrorCode::kIo, "reports.csv has no column " + name);
  };

  nlohmann::ordered_json j;
  if (has_run) j["iterations"] = lines.size() - 1;
  if (lines.size() > 1) {
    const auto last = split_csv(lines.back());
    nlohmann::ordered_json final_row;
    for (std::size_t i = 0; i < header.size() && i < last.size(); ++i) final_row[header[i]] = std::stod(last[i]);
    j["final"] = std::move(final_row);

    // Accuracy (%) against cumulative self-training samples.
    std::vector<std::pair<double, double>> points;
    double cumulative = 0.0;
    const std::size_t cost_col = column("gen_cost"), value_col = column("mean_root_value");
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto cells = split_csv(lines[i]);
      const double cost = std::stod(cells[cost_col]);
      if (cost <= 0.0) continue;
      cumulative += cost;
      points.emplace_back(cumulative, 100.0 * std::stod(cells[value_col]));
    }
    j["total_gen_cost"] = cumulative;
    if (points.size() >= 2) {
      const ScalingFit fit = fit_log_scaling(points);
      j["log_fit"] = {{"c1", fit.c1}, {"c2", fit.c2}, {"residual", fit.residual}};
      log << "fit: value% = " << short_num(fit.c1) << " + " << short_num(fit.c2) << " ln(samples)\n";
    }
  }
  auto refs = nlohmann::ordered_json::array();
  for (const auto& r : kPublishedScalingFits) refs.push_back({{"method", r.method}, {"c1", r.c1}, {"c2", r.c2}});
  j["reference_fits"] = std::move(refs);

  if (fs::exists(dir / "ablation.csv")) {
    const auto rows = lines_of(read_file(dir / "ablation.csv"));
    std::map<std::string, std::pair<double, std::size_t>> acc;
    std::vector<std::string> order;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto cells = split_csv(rows[i]);
      if (!acc.count(cells[0])) order.push_back(cells[0]);
      acc[cells[0]].first += std::stod(cells[5]);
      ++acc[cells[0]].second;
    }
    nlohmann::ordered_json ab;
    for (const auto& name : order) ab[name] = acc[name].first / static_cast<double>(acc[name].second);
    j["ablation_mean_final_root_value"] = std::move(ab);
  }
  write_file(dir / "report.json", j.dump(2) + "\n");
  if (has_run) log << "iterations: " << lines.size() - 1 << "\n";
  if (j.contains("final")) {
    log << "final pass1 " << short_num(j["final"]["pass1"].get<double>()) << ", mean_root_value "
        << short_num(j["final"]["mean_root_value"].get<double>()) << "\n";
  }
  log << "wrote " << (dir / "report.json").string() << "\n";
}

}  // namespace marge

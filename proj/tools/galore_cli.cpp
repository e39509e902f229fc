#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "galore/error.hpp"
#include "galore/harness.hpp"
#include "galore/memory.hpp"
#include "galore/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace galore;

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kConfig = 2, kDivergence = 3, kVerifyFailed = 4 };

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::optional<std::size_t> log_every;
};

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  return out;
}

void apply_overrides(harness::RunConfig& c, const Globals& g) {
  if (g.seed) c.seed = *g.seed;
  if (g.log_every) c.log_every = *g.log_every;
  c.validate();
}

int cmd_train(const std::string& config_path, const Globals& g) {
  auto config = harness::load_run_config(config_path);
  apply_overrides(config, g);
  const auto result = harness::run_train_to_files(config, g.out_dir);
  std::cout << "steps " << result.steps << "  final_loss " << result.final_loss
            << "  final_train_loss " << result.final_train_loss << '\n';
  return kOk;
}

int cmd_ablate(const std::string& config_path, const Globals& g) {
  auto config = harness::load_ablation_config(config_path);
  if (g.seed) config.seeds = {*g.seed};
  if (g.log_every) config.base.log_every = *g.log_every;
  config.base.metrics_path.reset();
  config.base.summary_path.reset();
  const auto rows = harness::run_ablation(config);
  auto out = open_out(fs::path(g.out_dir) / "ablation.csv");
  harness::write_ablation_csv(out, rows);
  harness::write_ablation_csv(std::cout, rows);
  return kOk;
}

int cmd_theory(const std::string& spec_path, const Globals& g) {
  const auto spec = harness::load_dynamics_spec(spec_path, g.seed);
  const auto trace = theory::simulate_dynamics(spec);
  {
    auto out = open_out(fs::path(g.out_dir) / "trace.csv");
    theory::write_trace_csv(out, trace);
  }
  const json summary = harness::theory_summary_json(trace);
  auto out = open_out(fs::path(g.out_dir) / "theory_summary.json");
  out << summary.dump(2) << '\n';
  std::cout << summary.dump(2) << '\n';
  return kOk;
}

int cmd_memory(const std::string& config_path, const Globals& g) {
  const auto request = harness::load_memory_request(config_path);
  const auto reports = harness::run_memory(request);
  memory::write_report_table(std::cout, reports);
  auto out = open_out(fs::path(g.out_dir) / "memory.csv");
  memory::write_report_csv(out, reports);
  return kOk;
}

int cmd_verify(const Globals& g) {
  const auto report = harness::run_verify({}, g.seed.value_or(harness::kVerifySeed));
  harness::print_verify_table(std::cout, report);
  return report.all_passed() ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient low-rank projection toolkit"};
  app.require_subcommand(1);

  Globals g;
  std::uint64_t seed = 0;
  std::size_t log_every = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Override the run seed")->expected(1);
  app.add_option("--out-dir", g.out_dir, "Directory for output files")->capture_default_str();
  auto* log_opt =
      app.add_option("--log-every", log_every, "Metrics logging interval")->check(CLI::PositiveNumber);

  std::string config_path;
  auto* train = app.add_subcommand("train", "Run one training job");
  train->add_option("--config", config_path, "Run config JSON")->required()->check(CLI::ExistingFile);
  auto* ablate = app.add_subcommand("ablate", "Sweep rank, switch frequency and seed");
  ablate->add_option("--config", config_path, "Ablation config JSON")->required()->check(CLI::ExistingFile);
  auto* theory_cmd = app.add_subcommand("theory", "Simulate gradient dynamics and the stable-rank bound");
  theory_cmd->add_option("--spec", config_path, "Dynamics spec JSON")->required()->check(CLI::ExistingFile);
  auto* memory_cmd = app.add_subcommand("memory", "Estimate weight and optimizer memory");
  memory_cmd->add_option("--config", config_path, "Model config JSON")->required()->check(CLI::ExistingFile);
  auto* verify = app.add_subcommand("verify", "Run the invariant suite");

  for (auto* sub : {train, ablate, theory_cmd, memory_cmd, verify}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  if (*seed_opt) g.seed = seed;
  if (*log_opt) g.log_every = log_every;

  try {
    if (*train) return cmd_train(config_path, g);
    if (*ablate) return cmd_ablate(config_path, g);
    if (*theory_cmd) return cmd_theory(config_path, g);
    if (*memory_cmd) return cmd_memory(config_path, g);
    if (*verify) return cmd_verify(g);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << " (last valid step " << e.last_valid_step() << ")\n";
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

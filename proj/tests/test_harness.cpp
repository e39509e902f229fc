#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "galore/error.hpp"
#include "galore/harness.hpp"
#include "galore/memory.hpp"

using namespace galore;
using namespace galore::harness;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

RunConfig small_mlp(OptimizerKind opt) {
  RunConfig c;
  c.task = Task::MlpClassification;
  c.input_dim = 6;
  c.width = 10;
  c.output_dim = 4;
  c.depth = 3;
  c.train_size = 64;
  c.eval_size = 32;
  c.batch_size = 16;
  c.steps = 60;
  c.rank = 3;
  c.switch_freq = 20;
  c.optimizer = opt;
  c.eta = 1e-2;
  c.log_every = 5;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string config_error_path(const json& j) {
  try {
    RunConfig::from_json(j);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<none>";
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("galore_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("identical config and seed give byte-identical metrics") {
  const auto base = scratch_dir("determinism");
  auto c = small_mlp(OptimizerKind::GaLoreAdam);
  run_train_to_files(c, base / "a");
  run_train_to_files(c, base / "b");
  const auto a = slurp(base / "a" / "metrics.jsonl");
  CHECK_FALSE(a.empty());
  CHECK(a == slurp(base / "b" / "metrics.jsonl"));

  c.seed = 99;
  run_train_to_files(c, base / "c");
  CHECK(a != slurp(base / "c" / "metrics.jsonl"));
}

TEST_CASE("metrics rows: one per interval, monotone steps, summary fields") {
  auto c = small_mlp(OptimizerKind::Adam);
  const auto r = run_train(c);
  REQUIRE(r.rows.size() == 13);  // steps 0, 5, ..., 55 and the final step 59
  for (std::size_t i = 1; i < r.rows.size(); ++i) CHECK(r.rows[i].step > r.rows[i - 1].step);
  CHECK(r.rows.back().step == 59);
  const auto s = summary_json(c, r);
  for (const char* key : {"final_loss", "steps", "wall_time", "metadata", "config"}) CHECK(s.contains(key));
  CHECK(s["metadata"]["prng"] == kPrngName);

  std::ostringstream out;
  write_metrics_jsonl(out, r.rows);
  std::istringstream in(out.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto row = json::parse(line);
    CHECK(row.contains("grad_fro_norm"));
    CHECK(row.contains("stable_rank"));
    ++n;
  }
  CHECK(n == r.rows.size());
}

TEST_CASE("per-layer updates reproduce the batched trajectory") {
  for (auto opt : {OptimizerKind::Adam, OptimizerKind::GaLoreAdam, OptimizerKind::GaLoreAdafactor,
                   OptimizerKind::LoraAdam, OptimizerKind::GaLoreAdam8bit}) {
    CAPTURE(optimizer_name(opt));
    auto c = small_mlp(opt);
    std::vector<std::vector<Matrix>> batched, streamed;
    run_train(c, [&](std::size_t, const std::vector<Matrix>& w) { batched.push_back(w); });
    c.per_layer_updates = true;
    const auto r = run_train(c, [&](std::size_t, const std::vector<Matrix>& w) { streamed.push_back(w); });
    REQUIRE(batched.size() == streamed.size());
    double worst = 0.0;
    for (std::size_t t = 0; t < batched.size(); ++t) {
      for (std::size_t l = 0; l < batched[t].size(); ++l) {
        worst = std::max(worst, max_abs_diff(batched[t][l], streamed[t][l]));
      }
    }
    CHECK(worst <= 1e-12);
    CHECK(r.live_gradient_entries < r.all_gradient_entries);
    CHECK(r.live_gradient_entries == 10 * 10);
  }
}

TEST_CASE("optimizer_state_entries follows the memory formula") {
  for (auto opt : {OptimizerKind::Adam, OptimizerKind::GaLoreAdam, OptimizerKind::GaLoreAdafactor,
                   OptimizerKind::LoraAdam, OptimizerKind::GaLoreAdam8bit}) {
    for (auto rho : {Rho::Adam, Rho::Identity}) {
      if (rho == Rho::Identity && opt != OptimizerKind::Adam && opt != OptimizerKind::GaLoreAdam) continue;
      CAPTURE(optimizer_name(opt));
      auto c = small_mlp(opt);
      c.rho = rho;
      c.steps = 3;
      c.log_every = 1;
      const auto method = memory_method(c);
      std::uint64_t expect = 0;
      const std::size_t dims[] = {c.input_dim, c.width, c.width, c.output_dim};
      for (std::size_t l = 0; l < c.depth; ++l) {
        const std::size_t rows = dims[l + 1], cols = dims[l];
        const auto d = memory::LayerDims::make(rows, cols, std::min({c.rank, rows, cols}));
        expect += memory::estimate_layer(d, method).optimizer_params;
      }
      for (const auto& row : run_train(c).rows) CHECK(row.optimizer_state_entries == expect);
    }
  }
}

TEST_CASE("linear teacher-student with Adam fits to below 1e-3") {
  RunConfig c;
  c.seed = 1;
  c.steps = 2000;
  c.eta = 1e-2;
  CHECK(run_train(c).final_loss < 1e-3);
}

TEST_CASE("full-rank GaLore with identity rule follows the plain gradient-ascent trajectory") {
  RunConfig plain;
  plain.seed = 3;
  plain.rho = Rho::Identity;
  plain.steps = 100;
  plain.eta = 0.05;
  RunConfig galore = plain;
  galore.optimizer = OptimizerKind::GaLoreAdam;
  galore.rank = 8;
  galore.alpha = 1.0;
  galore.switch_freq = 7;
  std::vector<Matrix> a, b;
  run_train(plain, [&](std::size_t, const std::vector<Matrix>& w) { a.push_back(w[0]); });
  run_train(galore, [&](std::size_t, const std::vector<Matrix>& w) { b.push_back(w[0]); });
  REQUIRE(a.size() == b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(frobenius_distance(a[t], b[t]) <= 1e-10 * std::max(1.0, a[t].frobenius_norm()));
  }
}

TEST_CASE("config round trip and defaults") {
  const auto c = small_mlp(OptimizerKind::GaLoreAdafactor);
  const auto back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(RunConfig::from_json(json::object()).to_json() == RunConfig{}.to_json());
  auto never = c.to_json();
  never["switch_freq"] = "never";
  CHECK(RunConfig::from_json(never).switch_freq == kNeverSwitch);
}

TEST_CASE("config errors name the offending field") {
  CHECK(config_error_path({{"bogus", 1}}) == "bogus");
  CHECK(config_error_path({{"rank", -2}}) == "rank");
  CHECK(config_error_path({{"optimizer", "sgd"}}) == "optimizer");
  CHECK(config_error_path({{"adam", {{"beta1", 1.5}}}}) == "adam.beta1");
  CHECK(config_error_path({{"adam", {{"gamma", 1}}}}) == "adam.gamma");
  CHECK(config_error_path({{"switch_freq", 0}}) == "switch_freq");
  CHECK(config_error_path({{"eta", "fast"}}) == "eta");
  CHECK(config_error_path({{"batch_size", 600}}) == "batch_size");
  CHECK(config_error_path({{"monitor_layer", 2}, {"depth", 2}}) == "monitor_layer");
  CHECK(config_error_path({{"rho", "identity"}, {"optimizer", "lora-adam"}}) == "rho");
  CHECK(config_error_path({{"task", "mlp-classification"}, {"output_dim", 1}}) == "output_dim");

  const json grid = {{"base", json::object()}, {"grid", {{"rank", {2, 4, 0}}}}};
  try {
    AblationConfig::from_json(grid);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(e.path() == "grid.rank[2]");
  }
  try {
    AblationConfig::from_json({{"base", {{"steps", 0}}}, {"grid", json::object()}});
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(e.path() == "base.steps");
  }
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("divergence reports the last finite step") {
  RunConfig c;
  c.rho = Rho::Identity;
  c.eta = 50.0;
  c.steps = 500;
  try {
    run_train(c);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.last_valid_step() >= 0);
    CHECK(e.last_valid_step() < 499);
  }
}

TEST_CASE("ablation produces one row per grid point and records failures") {
  AblationConfig a;
  a.base = small_mlp(OptimizerKind::GaLoreAdam);
  a.base.steps = 10;
  a.ranks = {1, 2, 3};
  a.switch_freqs = {1, kNeverSwitch};
  a.seeds = {0, 1};
  const auto rows = run_ablation(a);
  CHECK(rows.size() == 12);
  for (const auto& r : rows) CHECK(r.ok);
  CHECK(rows[0].rank == 1);
  CHECK(rows[1].seed == 1);
  CHECK(rows[2].switch_freq == kNeverSwitch);

  a.base.rho = Rho::Identity;
  a.base.optimizer = OptimizerKind::Adam;
  a.base.eta = 50.0;
  a.base.steps = 500;
  a.ranks = {1};
  a.switch_freqs = {1};
  a.seeds = {0};
  const auto failed = run_ablation(a);
  REQUIRE(failed.size() == 1);
  CHECK_FALSE(failed[0].ok);
  std::ostringstream csv;
  write_ablation_csv(csv, failed);
  CHECK(csv.str().find("failed") != std::string::npos);

  a.ranks.clear();
  CHECK_THROWS_AS(run_ablation(a), InvalidInput);
}

TEST_CASE("theory and memory readers") {
  const auto spec = dynamics_spec_from_json({{"family", "null-direction"}, {"seed", 4}, {"steps", 50}});
  CHECK(spec.steps == 50);
  const auto other = dynamics_spec_from_json({{"family", "null-direction"}, {"seed", 4}, {"steps", 50}}, 5);
  CHECK(other.w0.rows() == spec.w0.rows());
  CHECK_FALSE(other.a[0] == spec.a[0]);

  const json explicit_spec = {{"A", {{{1.0}, {2.0}}}}, {"B", {{{1, 0}, {0, 2}}}}, {"C", {{{1}}}},
                              {"W0", {{0.0}, {0.0}}}, {"eta", 0.1}, {"steps", 10}};
  const auto tr = theory::simulate_dynamics(dynamics_spec_from_json(explicit_spec));
  const auto summary = theory_summary_json(tr);
  CHECK(summary["lambda1"].get<double>() == doctest::Approx(1.0));
  CHECK(summary["v1_dim"] == 1);
  CHECK(summary["max_bound_violation"].get<double>() <= 1e-9);

  try {
    dynamics_spec_from_json({{"A", {{{1.0}}}}, {"B", {{{1.0}}}}, {"C", {{{1.0}}}}, {"W0", {{0.0}}}});
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(e.path() == "eta");
  }

  const auto req = memory_request_from_json(
      {{"model", {{"preset", "llama"}, {"hidden", 512}, {"intermediate", 1376}, {"layers", 8}}}, {"rank", 128}});
  const auto reps = run_memory(req);
  CHECK(reps.size() == req.methods.size());
  CHECK(reps.front().weight_params == 58073600);
  try {
    memory_request_from_json({{"model", {{"layers", {{{"name", "w"}, {"rows", 4}, {"cols", 8}}}}}}, {"rank", 5}});
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(e.path() == "rank");
  }
}

TEST_CASE("verify passes, is deterministic, and catches a missing bias correction") {
  const auto first = run_verify();
  CHECK(first.all_passed());
  const auto second = run_verify();
  REQUIRE(first.checks.size() == second.checks.size());
  for (std::size_t i = 0; i < first.checks.size(); ++i) CHECK(first.checks[i].value == second.checks[i].value);

  std::ostringstream table;
  print_verify_table(table, first);
  CHECK(table.str().find("verify: all checks passed") != std::string::npos);

  VerifyHooks mutant;
  mutant.adam_direction = [](AdamState& s, const Matrix& g) {
    s.t += 1;
    Matrix out(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      double& m = s.m.data()[i];
      double& v = s.v.data()[i];
      m = s.hyper.beta1 * m + (1 - s.hyper.beta1) * g.data()[i];
      v = s.hyper.beta2 * v + (1 - s.hyper.beta2) * g.data()[i] * g.data()[i];
      out.data()[i] = m / (std::sqrt(v) + s.hyper.eps);
    }
    return out;
  };
  const auto broken = run_verify(mutant);
  CHECK_FALSE(broken.all_passed());
  for (const auto& c : broken.checks) {
    if (c.name == "adam-bias-correction") CHECK_FALSE(c.passed);
  }
}

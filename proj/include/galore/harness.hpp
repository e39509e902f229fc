#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "galore/matrix.hpp"
#include "galore/memory.hpp"
#include "galore/optim.hpp"
#include "galore/theory.hpp"

namespace galore::harness {

inline constexpr const char* kPrngName = "mt19937_64";
inline constexpr std::uint64_t kVerifySeed = 20240306;

enum class Task { LinearRegression, MlpClassification };
enum class OptimizerKind { Adam, GaLoreAdam, GaLoreAdafactor, LoraAdam, GaLoreAdam8bit };
enum class Rho { Adam, Identity };
enum class Schedule { Constant, WarmupCosine };

/// One training run. Every field has a default; unknown JSON keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  Task task = Task::LinearRegression;
  std::size_t input_dim = 8;
  std::size_t width = 8;   // hidden width; unused when depth = 1
  std::size_t output_dim = 8;
  std::size_t depth = 1;   // number of weight matrices
  double leaky_slope = 0.01;

  std::size_t train_size = 512;
  std::size_t eval_size = 512;
  double noise_std = 0.0;         // linear-regression label noise
  std::size_t teacher_width = 32;  // mlp-classification teacher hidden width
  double teacher_scale = 2.0;      // logit scale; smaller means noisier labels
  double init_scale = 1.0;         // student weights ~ N(0, init_scale²/fan_in)

  OptimizerKind optimizer = OptimizerKind::Adam;
  Rho rho = Rho::Adam;
  std::size_t rank = 4;
  std::int64_t switch_freq = 200;  // kNeverSwitch for "never"
  double alpha = 0.25;
  SwitchPolicy switch_policy = SwitchPolicy::Carry;
  double lora_alpha = 16.0;
  AdamHyper adam;
  std::size_t quant_block = kDefaultQuantBlock;

  double eta = 1e-2;
  Schedule schedule = Schedule::Constant;
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  bool per_layer_updates = false;
  std::size_t log_every = 10;
  std::size_t monitor_layer = 0;  // layer whose gradient stable rank is logged

  std::optional<std::string> metrics_path;
  std::optional<std::string> summary_path;

  /// Throws ConfigError with the offending field path.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  /// Cross-field checks; throws ConfigError.
  void validate() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

const char* task_name(Task task);
const char* optimizer_name(OptimizerKind kind);

/// Memory-module method that matches the optimizer state a run allocates.
memory::Method memory_method(const RunConfig& config);

struct MetricsRow {
  std::size_t step = 0;
  double loss = 0.0;  // minibatch loss before the update
  double grad_fro_norm = 0.0;
  double stable_rank = 0.0;
  std::size_t refresh_count = 0;
  std::size_t optimizer_state_entries = 0;
};

nlohmann::json to_json(const MetricsRow& row);

struct RunResult {
  std::vector<MetricsRow> rows;
  double final_loss = 0.0;        // held-out loss of the final weights
  double final_train_loss = 0.0;  // full training-set loss of the final weights
  std::size_t steps = 0;
  double wall_time = 0.0;
  std::vector<Matrix> final_weights;
  std::uint64_t live_gradient_entries = 0;  // peak gradient residency during one step
  std::uint64_t all_gradient_entries = 0;
};

/// Called after every update with the step index and current weights.
using StepObserver = std::function<void(std::size_t step, const std::vector<Matrix>& weights)>;

/// Deterministic given the config. Throws DivergenceError on a non-finite loss.
RunResult run_train(const RunConfig& config, const StepObserver& observer = {});

/// run_train plus metrics JSONL and summary JSON under `out_dir`, unless the
/// config names explicit paths.
RunResult run_train_to_files(const RunConfig& config, const std::filesystem::path& out_dir);

void write_metrics_jsonl(std::ostream& out, const std::vector<MetricsRow>& rows);
nlohmann::json summary_json(const RunConfig& config, const RunResult& result);

struct AblationConfig {
  RunConfig base;
  std::vector<std::size_t> ranks;
  std::vector<std::int64_t> switch_freqs;
  std::vector<std::uint64_t> seeds;

  static AblationConfig from_json(const nlohmann::json& j);
};

AblationConfig load_ablation_config(const std::filesystem::path& path);

struct AblationRow {
  std::size_t rank = 0;
  std::int64_t switch_freq = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  double final_loss = 0.0;
  std::string error;
};

/// Grid order: rank outermost, then switch_freq, then seed. A failing cell is
/// recorded and the sweep continues.
std::vector<AblationRow> run_ablation(const AblationConfig& config);
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);

/// Either a generator request {"family", "seed", "rows", "cols", "batches",
/// "feature_rank", "steps"} or explicit {"A", "B", "C", "W0", "eta", "steps", "t0"}
/// with matrices as arrays of rows. `seed_override` replaces a generator seed.
theory::DynamicsSpec dynamics_spec_from_json(const nlohmann::json& j,
                                             std::optional<std::uint64_t> seed_override = {});
theory::DynamicsSpec load_dynamics_spec(const std::filesystem::path& path,
                                        std::optional<std::uint64_t> seed_override = {});
nlohmann::json theory_summary_json(const theory::DynamicsTrace& trace);

struct MemoryRequest {
  memory::ModelConfig model;
  std::uint64_t rank = 128;
  std::vector<memory::Method> methods;
  std::size_t bytes_per_entry = memory::kDefaultBytesPerEntry;
};

/// {"model": {"preset": "llama", "hidden", "intermediate", "layers", "vocab"} or
/// {"layers": [{"name", "rows", "cols"}], "non_projected_params"}, "rank",
/// "methods", "bytes_per_entry"}.
MemoryRequest memory_request_from_json(const nlohmann::json& j);
MemoryRequest load_memory_request(const std::filesystem::path& path);
std::vector<memory::MemoryReport> run_memory(const MemoryRequest& request);

struct CheckResult {
  std::string name;
  std::string anchor;  // the claim the check exercises
  double value = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  bool informational = false;  // reported but not part of the exit status
  std::string detail;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  bool all_passed() const;
};

/// Injection point for mutation testing of the Adam oracle check.
struct VerifyHooks {
  std::function<Matrix(AdamState&, const Matrix&)> adam_direction;
};

/// Each group draws from its own stream seeded by (seed, group), so a group's
/// results do not depend on which other groups ran.
enum class CheckGroup {
  Optimizer,
  Trajectory,
  Projector,
  Gradients,
  StableRank,
  Contraction,
  Memory,
  Quantization,
};

inline constexpr CheckGroup kAllCheckGroups[] = {
    CheckGroup::Optimizer,  CheckGroup::Trajectory,  CheckGroup::Projector, CheckGroup::Gradients,
    CheckGroup::StableRank, CheckGroup::Contraction, CheckGroup::Memory,    CheckGroup::Quantization,
};

std::vector<CheckResult> run_check_group(CheckGroup group, const VerifyHooks& hooks = {},
                                         std::uint64_t seed = kVerifySeed);

/// All groups in kAllCheckGroups order.
VerifyReport run_verify(const VerifyHooks& hooks = {}, std::uint64_t seed = kVerifySeed);
void print_verify_table(std::ostream& out, const VerifyReport& report);

}  // namespace galore::harness

#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include "galore/error.hpp"
#include "galore/harness.hpp"
#include "galore/linalg.hpp"

namespace galore::harness {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ConfigError(path, msg);
}

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

std::uint64_t as_u64(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
  fail(path, "expected a non-negative integer");
}

std::size_t as_size(const json& v, const std::string& path, std::size_t min_value) {
  const std::uint64_t x = as_u64(v, path);
  if (x < min_value) fail(path, "must be at least " + std::to_string(min_value));
  return static_cast<std::size_t>(x);
}

double as_double(const json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) fail(path, "must be finite");
  return x;
}

double as_positive(const json& v, const std::string& path) {
  const double x = as_double(v, path);
  if (!(x > 0.0)) fail(path, "must be positive");
  return x;
}

bool as_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) fail(path, "expected true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) fail(path, "expected a string");
  return v.get<std::string>();
}

std::int64_t as_switch_freq(const json& v, const std::string& path) {
  if (v.is_string()) {
    if (v.get<std::string>() == "never") return kNeverSwitch;
    fail(path, "expected a positive integer or \"never\"");
  }
  const std::uint64_t x = as_u64(v, path);
  if (x == 0 || x > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
    fail(path, "expected a positive integer or \"never\"");
  }
  return static_cast<std::int64_t>(x);
}

json switch_freq_json(std::int64_t t) { return t == kNeverSwitch ? json("never") : json(t); }

template <typename Enum, std::size_t N>
Enum as_enum(const json& v, const std::string& path,
             const std::pair<const char*, Enum> (&table)[N]) {
  const std::string s = as_string(v, path);
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  std::string allowed;
  for (const auto& [name, value] : table) allowed += (allowed.empty() ? "" : ", ") + std::string(name);
  fail(path, "unknown value \"" + s + "\" (allowed: " + allowed + ")");
}

template <typename Enum, std::size_t N>
const char* enum_name(Enum e, const std::pair<const char*, Enum> (&table)[N]) {
  for (const auto& [name, value] : table) {
    if (value == e) return name;
  }
  return "unknown";
}

const std::pair<const char*, Task> kTasks[] = {
    {"linear-regression", Task::LinearRegression},
    {"mlp-classification", Task::MlpClassification},
};
const std::pair<const char*, OptimizerKind> kOptimizers[] = {
    {"adam", OptimizerKind::Adam},
    {"galore-adam", OptimizerKind::GaLoreAdam},
    {"galore-adafactor", OptimizerKind::GaLoreAdafactor},
    {"lora-adam", OptimizerKind::LoraAdam},
    {"galore-adam-8bit", OptimizerKind::GaLoreAdam8bit},
};
const std::pair<const char*, Rho> kRhos[] = {{"adam", Rho::Adam}, {"identity", Rho::Identity}};
const std::pair<const char*, Schedule> kSchedules[] = {
    {"constant", Schedule::Constant},
    {"warmup-cosine", Schedule::WarmupCosine},
};
const std::pair<const char*, SwitchPolicy> kPolicies[] = {
    {"carry", SwitchPolicy::Carry},
    {"reset", SwitchPolicy::Reset},
    {"rotate", SwitchPolicy::Rotate},
};

void read_adam(const json& j, const std::string& path, AdamHyper& h) {
  if (!j.is_object()) fail(path, "expected an object");
  for (const auto& [key, v] : j.items()) {
    const std::string p = join(path, key);
    if (key == "beta1") {
      h.beta1 = as_double(v, p);
      if (!(h.beta1 >= 0.0 && h.beta1 < 1.0)) fail(p, "must lie in [0, 1)");
    } else if (key == "beta2") {
      h.beta2 = as_double(v, p);
      if (!(h.beta2 >= 0.0 && h.beta2 < 1.0)) fail(p, "must lie in [0, 1)");
    } else if (key == "eps") {
      h.eps = as_positive(v, p);
    } else {
      fail(p, "unknown field");
    }
  }
}

RunConfig parse_run(const json& j, const std::string& prefix) {
  if (!j.is_object()) fail(prefix.empty() ? "<root>" : prefix, "expected an object");
  RunConfig c;
  for (const auto& [key, v] : j.items()) {
    const std::string p = join(prefix, key);
    if (key == "seed") {
      c.seed = as_u64(v, p);
    } else if (key == "task") {
      c.task = as_enum(v, p, kTasks);
    } else if (key == "input_dim") {
      c.input_dim = as_size(v, p, 1);
    } else if (key == "width") {
      c.width = as_size(v, p, 1);
    } else if (key == "output_dim") {
      c.output_dim = as_size(v, p, 1);
    } else if (key == "depth") {
      c.depth = as_size(v, p, 1);
    } else if (key == "leaky_slope") {
      c.leaky_slope = as_double(v, p);
    } else if (key == "train_size") {
      c.train_size = as_size(v, p, 1);
    } else if (key == "eval_size") {
      c.eval_size = as_size(v, p, 1);
    } else if (key == "noise_std") {
      c.noise_std = as_double(v, p);
      if (c.noise_std < 0.0) fail(p, "must be non-negative");
    } else if (key == "teacher_width") {
      c.teacher_width = as_size(v, p, 1);
    } else if (key == "teacher_scale") {
      c.teacher_scale = as_positive(v, p);
    } else if (key == "init_scale") {
      c.init_scale = as_positive(v, p);
    } else if (key == "optimizer") {
      c.optimizer = as_enum(v, p, kOptimizers);
    } else if (key == "rho") {
      c.rho = as_enum(v, p, kRhos);
    } else if (key == "rank") {
      c.rank = as_size(v, p, 1);
    } else if (key == "switch_freq") {
      c.switch_freq = as_switch_freq(v, p);
    } else if (key == "alpha") {
      c.alpha = as_positive(v, p);
    } else if (key == "switch_policy") {
      c.switch_policy = as_enum(v, p, kPolicies);
    } else if (key == "lora_alpha") {
      c.lora_alpha = as_positive(v, p);
    } else if (key == "adam") {
      read_adam(v, p, c.adam);
    } else if (key == "quant_block") {
      c.quant_block = as_size(v, p, 1);
    } else if (key == "eta") {
      c.eta = as_positive(v, p);
    } else if (key == "schedule") {
      c.schedule = as_enum(v, p, kSchedules);
    } else if (key == "steps") {
      c.steps = as_size(v, p, 1);
    } else if (key == "batch_size") {
      c.batch_size = as_size(v, p, 1);
    } else if (key == "per_layer_updates") {
      c.per_layer_updates = as_bool(v, p);
    } else if (key == "log_every") {
      c.log_every = as_size(v, p, 1);
    } else if (key == "monitor_layer") {
      c.monitor_layer = as_size(v, p, 0);
    } else if (key == "metrics_path") {
      c.metrics_path = as_string(v, p);
    } else if (key == "summary_path") {
      c.summary_path = as_string(v, p);
    } else {
      fail(p, "unknown field");
    }
  }
  return c;
}

void check_run(const RunConfig& c, const std::string& prefix) {
  if (c.task == Task::MlpClassification && c.output_dim < 2) {
    fail(join(prefix, "output_dim"), "classification needs at least two classes");
  }
  if (c.monitor_layer >= c.depth) fail(join(prefix, "monitor_layer"), "must be below depth");
  if (c.batch_size > c.train_size) {
    fail(join(prefix, "batch_size"), "must not exceed train_size");
  }
  if (!(c.leaky_slope > 0.0 && c.leaky_slope < 1.0)) {
    fail(join(prefix, "leaky_slope"), "must lie in (0, 1)");
  }
  if (c.rho == Rho::Identity && c.optimizer != OptimizerKind::Adam &&
      c.optimizer != OptimizerKind::GaLoreAdam) {
    fail(join(prefix, "rho"), "identity is only available with adam or galore-adam");
  }
}

json parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

const char* task_name(Task task) { return enum_name(task, kTasks); }
const char* optimizer_name(OptimizerKind kind) { return enum_name(kind, kOptimizers); }

void RunConfig::validate() const { check_run(*this, ""); }

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c = parse_run(j, "");
  c.validate();
  return c;
}

json RunConfig::to_json() const {
  json j = {
      {"seed", seed},
      {"task", task_name(task)},
      {"input_dim", input_dim},
      {"width", width},
      {"output_dim", output_dim},
      {"depth", depth},
      {"leaky_slope", leaky_slope},
      {"train_size", train_size},
      {"eval_size", eval_size},
      {"noise_std", noise_std},
      {"teacher_width", teacher_width},
      {"teacher_scale", teacher_scale},
      {"init_scale", init_scale},
      {"optimizer", optimizer_name(optimizer)},
      {"rho", enum_name(rho, kRhos)},
      {"rank", rank},
      {"switch_freq", switch_freq_json(switch_freq)},
      {"alpha", alpha},
      {"switch_policy", enum_name(switch_policy, kPolicies)},
      {"lora_alpha", lora_alpha},
      {"adam", {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
      {"quant_block", quant_block},
      {"eta", eta},
      {"schedule", enum_name(schedule, kSchedules)},
      {"steps", steps},
      {"batch_size", batch_size},
      {"per_layer_updates", per_layer_updates},
      {"log_every", log_every},
      {"monitor_layer", monitor_layer},
  };
  if (metrics_path) j["metrics_path"] = *metrics_path;
  if (summary_path) j["summary_path"] = *summary_path;
  return j;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return RunConfig::from_json(parse_file(path));
}

memory::Method memory_method(const RunConfig& c) {
  switch (c.optimizer) {
    case OptimizerKind::Adam:
      return c.rho == Rho::Identity ? memory::Method::Sgd : memory::Method::Full;
    case OptimizerKind::GaLoreAdam:
      return c.rho == Rho::Identity ? memory::Method::GaLoreIdentity : memory::Method::GaLore;
    case OptimizerKind::GaLoreAdafactor:
      return memory::Method::GaLoreAdafactor;
    case OptimizerKind::LoraAdam:
      return memory::Method::LoRA;
    case OptimizerKind::GaLoreAdam8bit:
      return memory::Method::GaLore8bit;
  }
  return memory::Method::Full;
}

AblationConfig AblationConfig::from_json(const json& j) {
  if (!j.is_object()) fail("<root>", "expected an object");
  AblationConfig a;
  bool have_base = false;
  bool have_grid = false;
  for (const auto& [key, v] : j.items()) {
    if (key == "base") {
      a.base = parse_run(v, "base");
      have_base = true;
    } else if (key == "grid") {
      if (!v.is_object()) fail("grid", "expected an object");
      have_grid = true;
      for (const auto& [gkey, list] : v.items()) {
        const std::string gp = "grid." + gkey;
        if (!list.is_array() || list.empty()) fail(gp, "expected a non-empty array");
        for (std::size_t i = 0; i < list.size(); ++i) {
          const std::string ip = gp + "[" + std::to_string(i) + "]";
          if (gkey == "rank") {
            a.ranks.push_back(as_size(list[i], ip, 1));
          } else if (gkey == "switch_freq") {
            a.switch_freqs.push_back(as_switch_freq(list[i], ip));
          } else if (gkey == "seed") {
            a.seeds.push_back(as_u64(list[i], ip));
          } else {
            fail(gp, "unknown grid axis");
          }
        }
      }
    } else {
      fail(key, "unknown field");
    }
  }
  if (!have_base) fail("base", "missing");
  if (!have_grid) fail("grid", "missing");
  if (a.ranks.empty()) a.ranks.push_back(a.base.rank);
  if (a.switch_freqs.empty()) a.switch_freqs.push_back(a.base.switch_freq);
  if (a.seeds.empty()) a.seeds.push_back(a.base.seed);
  check_run(a.base, "base");
  return a;
}

AblationConfig load_ablation_config(const std::filesystem::path& path) {
  return AblationConfig::from_json(parse_file(path));
}

namespace {

Matrix as_matrix(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) fail(path, "expected a non-empty array of rows");
  const std::size_t rows = v.size();
  std::size_t cols = 0;
  std::vector<double> data;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::string rp = path + "[" + std::to_string(i) + "]";
    if (!v[i].is_array() || v[i].empty()) fail(rp, "expected a non-empty row");
    if (i == 0) cols = v[i].size();
    if (v[i].size() != cols) fail(rp, "rows must have equal length");
    for (std::size_t j = 0; j < cols; ++j) {
      data.push_back(as_double(v[i][j], rp + "[" + std::to_string(j) + "]"));
    }
  }
  return Matrix(rows, cols, std::move(data));
}

std::vector<Matrix> as_matrix_list(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) fail(path, "expected a non-empty array of matrices");
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(as_matrix(v[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

json nullable(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

}  // namespace

theory::DynamicsSpec dynamics_spec_from_json(const json& j, std::optional<std::uint64_t> seed_override) {
  if (!j.is_object()) fail("<root>", "expected an object");
  if (j.contains("family")) {
    theory::SpecRequest req;
    for (const auto& [key, v] : j.items()) {
      if (key == "family") {
        try {
          req.family = theory::parse_family(as_string(v, key));
        } catch (const InvalidInput& e) {
          fail(key, e.what());
        }
      } else if (key == "seed") {
        req.seed = as_u64(v, key);
      } else if (key == "rows") {
        req.rows = as_size(v, key, 1);
      } else if (key == "cols") {
        req.cols = as_size(v, key, 1);
      } else if (key == "batches") {
        req.batches = as_size(v, key, 1);
      } else if (key == "feature_rank") {
        req.feature_rank = as_size(v, key, 0);
      } else if (key == "steps") {
        req.steps = as_size(v, key, 1);
      } else {
        fail(key, "unknown field");
      }
    }
    if (seed_override) req.seed = *seed_override;
    return theory::generate_spec(req);
  }
  theory::DynamicsSpec spec;
  bool have_eta = false;
  for (const auto& [key, v] : j.items()) {
    if (key == "A") {
      spec.a = as_matrix_list(v, key);
    } else if (key == "B") {
      spec.b = as_matrix_list(v, key);
    } else if (key == "C") {
      spec.c = as_matrix_list(v, key);
    } else if (key == "W0") {
      spec.w0 = as_matrix(v, key);
    } else if (key == "eta") {
      spec.eta = as_positive(v, key);
      have_eta = true;
    } else if (key == "steps") {
      spec.steps = as_size(v, key, 0);
    } else if (key == "t0") {
      spec.t0 = as_size(v, key, 0);
    } else {
      fail(key, "unknown field");
    }
  }
  for (const char* required : {"A", "B", "C", "W0"}) {
    if (!j.contains(required)) fail(required, "missing");
  }
  if (!have_eta) fail("eta", "missing");
  return spec;
}

theory::DynamicsSpec load_dynamics_spec(const std::filesystem::path& path,
                                        std::optional<std::uint64_t> seed_override) {
  return dynamics_spec_from_json(parse_file(path), seed_override);
}

json theory_summary_json(const theory::DynamicsTrace& tr) {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& s : tr.steps) {
    if (std::isfinite(s.bound_rhs)) worst = std::max(worst, s.stable_rank - s.bound_rhs);
  }
  const auto fit = theory::fit_excess_decay(tr);
  json j;
  j["steps"] = tr.steps.empty() ? 0 : tr.steps.size() - 1;
  j["eta"] = tr.eta;
  j["t0"] = tr.t0;
  j["lambda1"] = tr.lambda1;
  j["lambda2"] = nullable(tr.lambda2);
  j["lambda2_undefined"] = tr.lambda2_undefined;
  j["v1_dim"] = tr.v1_basis.cols();
  j["decay_ratio"] = nullable(tr.decay_ratio);
  j["parallel_zero"] = tr.parallel_zero;
  j["parallel_stable_rank"] = nullable(tr.parallel_stable_rank);
  j["max_bound_violation"] = nullable(worst);
  j["final_stable_rank"] = tr.steps.empty() ? json(nullptr) : nullable(tr.steps.back().stable_rank);
  j["excess_fit"] = {{"ok", fit.ok}, {"ratio", nullable(fit.ok ? fit.ratio : NAN)}, {"points", fit.points}};
  return j;
}

MemoryRequest memory_request_from_json(const json& j) {
  if (!j.is_object()) fail("<root>", "expected an object");
  MemoryRequest req;
  bool have_model = false;
  for (const auto& [key, v] : j.items()) {
    if (key == "model") {
      have_model = true;
      if (!v.is_object()) fail(key, "expected an object");
      if (v.contains("preset")) {
        std::string name = "llama";
        std::uint64_t hidden = 0, intermediate = 0, layers = 0, vocab = 32000;
        for (const auto& [mk, mv] : v.items()) {
          const std::string p = "model." + mk;
          if (mk == "preset") {
            if (as_string(mv, p) != "llama") fail(p, "only the \"llama\" preset is available");
          } else if (mk == "name") {
            name = as_string(mv, p);
          } else if (mk == "hidden") {
            hidden = as_size(mv, p, 1);
          } else if (mk == "intermediate") {
            intermediate = as_size(mv, p, 1);
          } else if (mk == "layers") {
            layers = as_size(mv, p, 1);
          } else if (mk == "vocab") {
            vocab = as_size(mv, p, 1);
          } else {
            fail(p, "unknown field");
          }
        }
        if (hidden == 0) fail("model.hidden", "missing");
        if (intermediate == 0) fail("model.intermediate", "missing");
        if (layers == 0) fail("model.layers", "missing");
        req.model = memory::llama_config(name, hidden, intermediate, layers, vocab);
      } else {
        for (const auto& [mk, mv] : v.items()) {
          const std::string p = "model." + mk;
          if (mk == "name") {
            req.model.name = as_string(mv, p);
          } else if (mk == "non_projected_params") {
            req.model.non_projected_params = as_u64(mv, p);
          } else if (mk == "layers") {
            if (!mv.is_array()) fail(p, "expected an array");
            for (std::size_t i = 0; i < mv.size(); ++i) {
              const std::string lp = p + "[" + std::to_string(i) + "]";
              if (!mv[i].is_object()) fail(lp, "expected an object");
              memory::ModelLayer layer;
              for (const auto& [lk, lv] : mv[i].items()) {
                if (lk == "name") {
                  layer.name = as_string(lv, lp + ".name");
                } else if (lk == "rows") {
                  layer.rows = as_size(lv, lp + ".rows", 1);
                } else if (lk == "cols") {
                  layer.cols = as_size(lv, lp + ".cols", 1);
                } else {
                  fail(lp + "." + lk, "unknown field");
                }
              }
              if (layer.rows == 0 || layer.cols == 0) fail(lp, "rows and cols are required");
              req.model.projected.push_back(std::move(layer));
            }
          } else {
            fail(p, "unknown field");
          }
        }
        if (req.model.projected.empty()) fail("model.layers", "must list at least one layer");
      }
    } else if (key == "rank") {
      req.rank = as_size(v, key, 1);
    } else if (key == "bytes_per_entry") {
      req.bytes_per_entry = as_size(v, key, 1);
    } else if (key == "methods") {
      if (!v.is_array() || v.empty()) fail(key, "expected a non-empty array");
      for (std::size_t i = 0; i < v.size(); ++i) {
        const std::string p = key + "[" + std::to_string(i) + "]";
        try {
          req.methods.push_back(memory::parse_method(as_string(v[i], p)));
        } catch (const InvalidInput& e) {
          fail(p, e.what());
        }
      }
    } else {
      fail(key, "unknown field");
    }
  }
  if (!have_model) fail("model", "missing");
  if (req.methods.empty()) {
    using memory::Method;
    req.methods = {Method::Full, Method::GaLore, Method::GaLore8bit, Method::LoRA, Method::ReLoRA,
                   Method::LowRank};
  }
  for (const auto& layer : req.model.projected) {
    if (req.rank > std::min(layer.rows, layer.cols)) {
      fail("rank", "exceeds min(rows, cols) of layer " + layer.name);
    }
  }
  return req;
}

MemoryRequest load_memory_request(const std::filesystem::path& path) {
  return memory_request_from_json(parse_file(path));
}

std::vector<memory::MemoryReport> run_memory(const MemoryRequest& req) {
  std::vector<memory::MemoryReport> out;
  for (auto m : req.methods) {
    out.push_back(memory::estimate_model(req.model, m, req.rank, req.bytes_per_entry));
  }
  return out;
}

}  // namespace galore::harness

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <string>

#include "galore/error.hpp"
#include "galore/harness.hpp"
#include "galore/linalg.hpp"
#include "galore/models.hpp"

namespace galore::harness {

using nlohmann::json;

namespace {

// Independent streams so that changing the optimizer never perturbs the data.
constexpr std::uint64_t kDataStream = 0x6a09e667f3bcc908ULL;
constexpr std::uint64_t kInitStream = 0xbb67ae8584caa73bULL;
constexpr std::uint64_t kBatchStream = 0x3c6ef372fe94f82bULL;

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix g(rows, cols);
  for (double& x : g.data()) x = normal(rng);
  return g;
}

struct Dataset {
  Matrix x_train, y_train, x_eval, y_eval;
};

Dataset make_linear(const RunConfig& c, std::mt19937_64& rng) {
  const Matrix teacher =
      gaussian(c.output_dim, c.input_dim, 1.0 / std::sqrt(static_cast<double>(c.input_dim)), rng);
  auto draw = [&](std::size_t count, Matrix& x, Matrix& y) {
    x = gaussian(c.input_dim, count, 1.0, rng);
    y = matmul(teacher, x);
    if (c.noise_std > 0.0) y += gaussian(c.output_dim, count, c.noise_std, rng);
  };
  Dataset d;
  draw(c.train_size, d.x_train, d.y_train);
  draw(c.eval_size, d.x_eval, d.y_eval);
  return d;
}

// Labels are sampled from the teacher's softmax, so the achievable loss is the
// teacher's conditional entropy rather than zero.
Dataset make_mlp(const RunConfig& c, std::mt19937_64& rng) {
  models::ReversibleNet teacher;
  teacher.activation = models::Activation::LeakyRelu;
  teacher.leaky_slope = c.leaky_slope;
  teacher.layers.push_back(gaussian(c.teacher_width, c.input_dim,
                                    1.0 / std::sqrt(static_cast<double>(c.input_dim)), rng));
  teacher.layers.push_back(gaussian(c.output_dim, c.teacher_width,
                                    c.teacher_scale / std::sqrt(static_cast<double>(c.teacher_width)),
                                    rng));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&](std::size_t count, Matrix& x, Matrix& y) {
    x = gaussian(c.input_dim, count, 1.0, rng);
    const Matrix logits = models::forward(teacher, x).output();
    y = Matrix(c.output_dim, count);
    for (std::size_t s = 0; s < count; ++s) {
      double mx = logits(0, s);
      for (std::size_t k = 1; k < c.output_dim; ++k) mx = std::max(mx, logits(k, s));
      std::vector<double> p(c.output_dim);
      double z = 0.0;
      for (std::size_t k = 0; k < c.output_dim; ++k) {
        p[k] = std::exp(logits(k, s) - mx);
        z += p[k];
      }
      const double u = unit(rng) * z;
      std::size_t label = c.output_dim - 1;
      double acc = 0.0;
      for (std::size_t k = 0; k < c.output_dim; ++k) {
        acc += p[k];
        if (u < acc) {
          label = k;
          break;
        }
      }
      y(label, s) = 1.0;
    }
  };
  Dataset d;
  draw(c.train_size, d.x_train, d.y_train);
  draw(c.eval_size, d.x_eval, d.y_eval);
  return d;
}

models::ReversibleNet make_student(const RunConfig& c, std::mt19937_64& rng) {
  models::ReversibleNet net;
  net.activation = c.task == Task::MlpClassification ? models::Activation::LeakyRelu
                                                     : models::Activation::Identity;
  net.leaky_slope = c.leaky_slope;
  net.loss = c.task == Task::MlpClassification ? models::LossKind::LogSoftmax : models::LossKind::L2;
  for (std::size_t l = 0; l < c.depth; ++l) {
    const std::size_t in = l == 0 ? c.input_dim : c.width;
    const std::size_t out = l + 1 == c.depth ? c.output_dim : c.width;
    net.layers.push_back(
        gaussian(out, in, c.init_scale / std::sqrt(static_cast<double>(in)), rng));
  }
  return net;
}

class LayerOptimizer {
 public:
  virtual ~LayerOptimizer() = default;
  virtual void apply(Matrix& w, const Matrix& grad, double lr, std::int64_t step) = 0;
  virtual std::size_t state_entries() const = 0;
  virtual std::size_t refresh_count() const { return 0; }
};

class SgdLayer final : public LayerOptimizer {
 public:
  void apply(Matrix& w, const Matrix& grad, double lr, std::int64_t) override {
    Matrix inc = grad;
    inc *= lr;
    w += inc;
  }
  std::size_t state_entries() const override { return 0; }
};

class AdamLayer final : public LayerOptimizer {
 public:
  AdamLayer(const Matrix& w, AdamHyper hyper) : state_(AdamState::zeros(w.rows(), w.cols(), hyper)) {}
  void apply(Matrix& w, const Matrix& grad, double lr, std::int64_t) override {
    w += adam_step(state_, grad, lr);
  }
  std::size_t state_entries() const override { return state_.m.size() + state_.v.size(); }

 private:
  AdamState state_;
};

class GaLoreLayer final : public LayerOptimizer {
 public:
  GaLoreLayer(const Matrix& w, GaLoreOptions options) : state_(w.rows(), w.cols(), options) {}
  void apply(Matrix& w, const Matrix& grad, double lr, std::int64_t step) override {
    galore_step(w, grad, state_, lr, step);
  }
  std::size_t state_entries() const override { return state_.state_entries(); }
  std::size_t refresh_count() const override {
    return static_cast<std::size_t>(state_.projector().refresh_count());
  }

 private:
  GaLoreState state_;
};

class LoraLayer final : public LayerOptimizer {
 public:
  LoraLayer(const Matrix& w, std::size_t rank, double lora_alpha, std::mt19937_64& rng,
            AdamHyper hyper)
      : state_(LoraState::init(w, rank, lora_alpha, rng, hyper)) {}
  void apply(Matrix& w, const Matrix& grad, double lr, std::int64_t) override {
    lora_adam_step(state_, grad, lr);
    w = state_.effective();
  }
  std::size_t state_entries() const override { return state_.state_entries(); }

 private:
  LoraState state_;
};

std::unique_ptr<LayerOptimizer> make_optimizer(const RunConfig& c, const Matrix& w,
                                               std::mt19937_64& rng) {
  const std::size_t rank = std::min({c.rank, w.rows(), w.cols()});
  GaLoreOptions g;
  g.projector.rank = rank;
  g.projector.switch_freq = c.switch_freq;
  g.alpha = c.alpha;
  g.adam = c.adam;
  g.adafactor = AdafactorHyper{c.adam.beta1, c.adam.beta2, c.adam.eps};
  g.switch_policy = c.switch_policy;
  g.quant_block = c.quant_block;
  switch (c.optimizer) {
    case OptimizerKind::Adam:
      if (c.rho == Rho::Identity) return std::make_unique<SgdLayer>();
      return std::make_unique<AdamLayer>(w, c.adam);
    case OptimizerKind::GaLoreAdam:
      g.rule = c.rho == Rho::Identity ? InnerRule::Identity : InnerRule::Adam;
      return std::make_unique<GaLoreLayer>(w, g);
    case OptimizerKind::GaLoreAdafactor:
      g.rule = InnerRule::Adafactor;
      return std::make_unique<GaLoreLayer>(w, g);
    case OptimizerKind::GaLoreAdam8bit:
      g.rule = InnerRule::Adam;
      g.storage = StateStorage::Int8Blockwise;
      return std::make_unique<GaLoreLayer>(w, g);
    case OptimizerKind::LoraAdam:
      return std::make_unique<LoraLayer>(w, rank, c.lora_alpha, rng, c.adam);
  }
  throw InvalidInput("unhandled optimizer");
}

double learning_rate(const RunConfig& c, std::size_t t) {
  if (c.schedule == Schedule::Constant) return c.eta;
  const std::size_t warmup = std::max<std::size_t>(1, c.steps / 10);
  if (t < warmup) return c.eta * static_cast<double>(t + 1) / static_cast<double>(warmup);
  const std::size_t span = std::max<std::size_t>(1, c.steps - warmup - 1);
  const double progress = std::min(1.0, static_cast<double>(t - warmup) / static_cast<double>(span));
  return c.eta * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

void gather(const Matrix& src, const std::vector<std::size_t>& idx, Matrix& dst) {
  for (std::size_t r = 0; r < src.rows(); ++r) {
    for (std::size_t j = 0; j < idx.size(); ++j) dst(r, j) = src(r, idx[j]);
  }
}

double monitored_stable_rank(const Matrix& g) {
  return g.frobenius_norm_sq() > 0.0 ? linalg::stable_rank(g)
                                     : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

json to_json(const MetricsRow& row) {
  json j;
  j["step"] = row.step;
  j["loss"] = row.loss;
  j["grad_fro_norm"] = row.grad_fro_norm;
  j["stable_rank"] = row.stable_rank;
  j["refresh_count"] = row.refresh_count;
  j["optimizer_state_entries"] = row.optimizer_state_entries;
  return j;
}

RunResult run_train(const RunConfig& c, const StepObserver& observer) {
  c.validate();
  const auto start = std::chrono::steady_clock::now();

  std::mt19937_64 data_rng(c.seed ^ kDataStream);
  std::mt19937_64 init_rng(c.seed ^ kInitStream);
  std::mt19937_64 batch_rng(c.seed ^ kBatchStream);

  const Dataset data = c.task == Task::LinearRegression ? make_linear(c, data_rng) : make_mlp(c, data_rng);
  models::ReversibleNet net = make_student(c, init_rng);
  std::vector<std::unique_ptr<LayerOptimizer>> opts;
  for (const auto& w : net.layers) opts.push_back(make_optimizer(c, w, init_rng));

  RunResult result;
  std::vector<memory::ModelLayer> shapes;
  for (const auto& w : net.layers) shapes.push_back({"", w.rows(), w.cols()});
  result.all_gradient_entries = memory::gradient_buffer_entries(shapes, false);
  result.live_gradient_entries = memory::gradient_buffer_entries(shapes, c.per_layer_updates);

  Matrix xb(c.input_dim, c.batch_size);
  Matrix yb(c.output_dim, c.batch_size);
  std::vector<std::size_t> idx(c.batch_size);
  std::uniform_int_distribution<std::size_t> pick(0, c.train_size - 1);

  for (std::size_t t = 0; t < c.steps; ++t) {
    for (auto& i : idx) i = pick(batch_rng);
    gather(data.x_train, idx, xb);
    gather(data.y_train, idx, yb);
    const double lr = learning_rate(c, t);
    const bool log_row = t % c.log_every == 0 || t + 1 == c.steps;
    const auto step = static_cast<std::int64_t>(t);

    double grad_sq = 0.0;
    double sr = std::numeric_limits<double>::quiet_NaN();
    auto observe = [&](std::size_t l, const Matrix& g) {
      grad_sq += g.frobenius_norm_sq();
      if (log_row && l == c.monitor_layer) sr = monitored_stable_rank(g);
    };

    double batch_loss = 0.0;
    if (c.per_layer_updates) {
      batch_loss = models::backward_sweep(net, xb, yb, [&](std::size_t l, const Matrix& g) {
        observe(l, g);
        opts[l]->apply(net.layers[l], g, lr, step);
      });
    } else {
      const auto report = models::backward(net, xb, yb);
      batch_loss = report.loss;
      for (std::size_t l = net.depth(); l-- > 0;) observe(l, report.grads[l]);
      for (std::size_t l = net.depth(); l-- > 0;) opts[l]->apply(net.layers[l], report.grads[l], lr, step);
    }
    if (!std::isfinite(batch_loss)) {
      throw DivergenceError(static_cast<long>(t) - 1,
                            "non-finite loss at step " + std::to_string(t));
    }

    if (log_row) {
      MetricsRow row;
      row.step = t;
      row.loss = batch_loss;
      row.grad_fro_norm = std::sqrt(grad_sq);
      row.stable_rank = sr;
      for (const auto& o : opts) {
        row.refresh_count += o->refresh_count();
        row.optimizer_state_entries += o->state_entries();
      }
      result.rows.push_back(row);
    }
    if (observer) observer(t, net.layers);
  }

  result.steps = c.steps;
  result.final_loss = models::loss(net, data.x_eval, data.y_eval);
  result.final_train_loss = models::loss(net, data.x_train, data.y_train);
  if (!std::isfinite(result.final_loss) || !std::isfinite(result.final_train_loss)) {
    throw DivergenceError(static_cast<long>(c.steps) - 1, "non-finite loss after training");
  }
  result.final_weights = net.layers;
  result.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void write_metrics_jsonl(std::ostream& out, const std::vector<MetricsRow>& rows) {
  for (const auto& row : rows) out << to_json(row).dump() << '\n';
}

json summary_json(const RunConfig& c, const RunResult& r) {
  json j;
  j["final_loss"] = r.final_loss;
  j["final_train_loss"] = r.final_train_loss;
  j["steps"] = r.steps;
  j["wall_time"] = r.wall_time;
  j["metadata"] = {
      {"prng", kPrngName},
      {"seed", c.seed},
      {"task", task_name(c.task)},
      {"optimizer", optimizer_name(c.optimizer)},
      {"memory_method", memory::method_name(memory_method(c))},
      {"live_gradient_entries", r.live_gradient_entries},
      {"all_gradient_entries", r.all_gradient_entries},
  };
  j["config"] = c.to_json();
  return j;
}

RunResult run_train_to_files(const RunConfig& c, const std::filesystem::path& out_dir) {
  const std::filesystem::path metrics = c.metrics_path ? std::filesystem::path(*c.metrics_path) : out_dir / "metrics.jsonl";
  const std::filesystem::path summary = c.summary_path ? std::filesystem::path(*c.summary_path) : out_dir / "summary.json";
  RunResult r = run_train(c);
  for (const auto& p : {metrics, summary}) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  }
  std::ofstream m(metrics, std::ios::binary);
  if (!m) throw Error("cannot write " + metrics.string());
  write_metrics_jsonl(m, r.rows);
  std::ofstream s(summary, std::ios::binary);
  if (!s) throw Error("cannot write " + summary.string());
  s << summary_json(c, r).dump(2) << '\n';
  return r;
}

}  // namespace galore::harness

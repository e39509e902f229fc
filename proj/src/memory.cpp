#include "galore/memory.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <utility>

#include "galore/error.hpp"

namespace galore::memory {

namespace {

bool is_8bit(Method method) { return method == Method::Full8bit || method == Method::GaLore8bit; }

bool is_stateless_dense(Method method) {
  return method == Method::Sgd || method == Method::GaLoreIdentity;
}

std::uint64_t quantized_bytes(std::uint64_t entries) {
  return entries + kQuantScaleBytes * ((entries + kQuantBlock - 1) / kQuantBlock);
}

MemoryReport make(Method method, std::uint64_t weights, std::uint64_t optimizer,
                  std::uint64_t optimizer_bytes, std::size_t bpe) {
  MemoryReport r;
  r.method = method;
  r.weight_params = weights;
  r.optimizer_params = optimizer;
  r.weight_bytes = weights * bpe;
  r.optimizer_bytes = optimizer_bytes;
  r.total_bytes = r.weight_bytes + r.optimizer_bytes;
  return r;
}

}  // namespace

const char* method_name(Method method) {
  switch (method) {
    case Method::Sgd:
      return "sgd";
    case Method::Full:
      return "full";
    case Method::Full8bit:
      return "full-8bit";
    case Method::GaLore:
      return "galore";
    case Method::GaLore8bit:
      return "galore-8bit";
    case Method::GaLoreAdafactor:
      return "galore-adafactor";
    case Method::GaLoreIdentity:
      return "galore-identity";
    case Method::LoRA:
      return "lora";
    case Method::ReLoRA:
      return "relora";
    case Method::LowRank:
      return "low-rank";
  }
  return "unknown";
}

std::vector<Method> all_methods() {
  return {Method::Sgd,        Method::Full,           Method::Full8bit,
          Method::GaLore,     Method::GaLore8bit,     Method::GaLoreAdafactor,
          Method::GaLoreIdentity, Method::LoRA,       Method::ReLoRA,
          Method::LowRank};
}

Method parse_method(const std::string& name) {
  for (Method m : all_methods()) {
    if (name == method_name(m)) return m;
  }
  throw InvalidInput("unknown memory method '" + name + "'");
}

LayerDims LayerDims::make(std::uint64_t rows, std::uint64_t cols, std::uint64_t rank) {
  if (rows == 0 || cols == 0) throw InvalidInput("layer dimensions must be positive");
  LayerDims d{std::min(rows, cols), std::max(rows, cols), rank};
  if (rank < 1 || rank > d.m) {
    throw InvalidInput("rank " + std::to_string(rank) + " must lie in [1, " + std::to_string(d.m) +
                       "]");
  }
  return d;
}

MemoryReport& MemoryReport::operator+=(const MemoryReport& other) {
  weight_params += other.weight_params;
  optimizer_params += other.optimizer_params;
  weight_bytes += other.weight_bytes;
  optimizer_bytes += other.optimizer_bytes;
  total_bytes += other.total_bytes;
  notes.insert(notes.end(), other.notes.begin(), other.notes.end());
  return *this;
}

MemoryReport estimate_layer(const LayerDims& raw, Method method, std::size_t bpe) {
  if (bpe == 0) throw InvalidInput("bytes_per_entry must be positive");
  const LayerDims d = LayerDims::make(raw.m, raw.n, raw.r);
  const std::uint64_t m = d.m, n = d.n, r = d.r;
  MemoryReport out;
  switch (method) {
    case Method::Sgd:
      out = make(method, m * n, 0, 0, bpe);
      break;
    case Method::Full:
      out = make(method, m * n, 2 * m * n, 2 * m * n * bpe, bpe);
      break;
    case Method::Full8bit:
      out = make(method, m * n, 2 * m * n, 2 * quantized_bytes(m * n), bpe);
      break;
    case Method::GaLore:
      out = make(method, m * n, m * r + 2 * n * r, (m * r + 2 * n * r) * bpe, bpe);
      break;
    case Method::GaLore8bit:
      out = make(method, m * n, m * r + 2 * n * r, m * r * bpe + 2 * quantized_bytes(n * r), bpe);
      break;
    case Method::GaLoreAdafactor: {
      const std::uint64_t opt = m * r + n * r + r + n;
      out = make(method, m * n, opt, opt * bpe, bpe);
      break;
    }
    case Method::GaLoreIdentity:
      out = make(method, m * n, m * r, m * r * bpe, bpe);
      break;
    case Method::LoRA:
    case Method::ReLoRA: {
      const std::uint64_t opt = 2 * m * r + 2 * n * r;
      out = make(method, m * n + m * r + n * r, opt, opt * bpe, bpe);
      break;
    }
    case Method::LowRank: {
      const std::uint64_t opt = 2 * (m * r + n * r);
      out = make(method, m * r + n * r, opt, opt * bpe, bpe);
      break;
    }
  }
  const bool galore_family = method == Method::GaLore || method == Method::GaLore8bit ||
                             method == Method::GaLoreAdafactor || method == Method::GaLoreIdentity;
  if (galore_family && r == m) {
    out.notes.push_back("rank equals min(m, n): the projector makes GaLore state exceed plain Adam");
  }
  return out;
}

MemoryReport estimate_dense(std::uint64_t entries, Method method, std::size_t bpe) {
  if (bpe == 0) throw InvalidInput("bytes_per_entry must be positive");
  if (is_stateless_dense(method)) return make(method, entries, 0, 0, bpe);
  const std::uint64_t opt_bytes = is_8bit(method) ? 2 * quantized_bytes(entries) : 2 * entries * bpe;
  return make(method, entries, 2 * entries, entries == 0 ? 0 : opt_bytes, bpe);
}

MemoryReport estimate_model(const ModelConfig& config, Method method, std::uint64_t rank,
                            std::size_t bpe) {
  if (config.projected.empty() && config.non_projected_params == 0) {
    throw InvalidInput("model config lists no parameters");
  }
  MemoryReport total = estimate_dense(config.non_projected_params, method, bpe);
  for (const auto& layer : config.projected) {
    MemoryReport part = estimate_layer(LayerDims::make(layer.rows, layer.cols, rank), method, bpe);
    for (auto& note : part.notes) note = layer.name + ": " + note;
    total += part;
  }
  return total;
}

ModelConfig llama_config(const std::string& name, std::uint64_t hidden, std::uint64_t intermediate,
                         std::uint64_t layers, std::uint64_t vocab) {
  if (hidden == 0 || intermediate == 0 || layers == 0 || vocab == 0) {
    throw InvalidInput("llama config dimensions must be positive");
  }
  ModelConfig cfg;
  cfg.name = name;
  for (std::uint64_t l = 0; l < layers; ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    for (const char* proj : {"q_proj", "k_proj", "v_proj", "o_proj"}) {
      cfg.projected.push_back({prefix + proj, hidden, hidden});
    }
    cfg.projected.push_back({prefix + "gate_proj", intermediate, hidden});
    cfg.projected.push_back({prefix + "up_proj", intermediate, hidden});
    cfg.projected.push_back({prefix + "down_proj", hidden, intermediate});
  }
  cfg.non_projected_params = 2 * vocab * hidden + (2 * layers + 1) * hidden;
  return cfg;
}

std::uint64_t gradient_buffer_entries(const std::vector<ModelLayer>& layers, bool per_layer) {
  std::uint64_t total = 0;
  std::uint64_t largest = 0;
  for (const auto& l : layers) {
    total += l.rows * l.cols;
    largest = std::max(largest, l.rows * l.cols);
  }
  return per_layer ? largest : total;
}

void write_report_table(std::ostream& out, const std::vector<MemoryReport>& reports) {
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::left << std::setw(18) << "method" << std::right << std::setw(12) << "weights"
      << std::setw(12) << "optimizer" << std::setw(12) << "total" << '\n';
  out << std::fixed << std::setprecision(3);
  for (const auto& r : reports) {
    out << std::left << std::setw(18) << method_name(r.method) << std::right << std::setw(11)
        << static_cast<double>(r.weight_bytes) / kGigabyte << 'G' << std::setw(11)
        << static_cast<double>(r.optimizer_bytes) / kGigabyte << 'G' << std::setw(11)
        << static_cast<double>(r.total_bytes) / kGigabyte << "G\n";
  }
  out.flags(flags);
  out.precision(prec);
}

void write_report_csv(std::ostream& out, const std::vector<MemoryReport>& reports) {
  out << "method,weight_params,optimizer_params,weight_bytes,optimizer_bytes,total_bytes\n";
  for (const auto& r : reports) {
    out << method_name(r.method) << ',' << r.weight_params << ',' << r.optimizer_params << ','
        << r.weight_bytes << ',' << r.optimizer_bytes << ',' << r.total_bytes << '\n';
  }
}

}  // namespace galore::memory

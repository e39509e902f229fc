#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace galore::memory {

inline constexpr std::size_t kDefaultBytesPerEntry = 2;
inline constexpr std::size_t kQuantBlock = 256;
inline constexpr std::size_t kQuantScaleBytes = 4;
inline constexpr double kGigabyte = 1e9;

enum class Method {
  Sgd,              // plain gradient step, no optimizer state
  Full,             // Adam: M and V at full shape
  Full8bit,         // Adam with blockwise 8-bit M and V
  GaLore,           // projector plus Adam moments on the compact gradient
  GaLore8bit,       // as GaLore with blockwise 8-bit moments
  GaLoreAdafactor,  // projector plus first moment and factored second moment
  GaLoreIdentity,   // projector only; identity rule on the compact gradient
  LoRA,
  ReLoRA,
  LowRank,          // W = BA trained directly
};

const char* method_name(Method method);
Method parse_method(const std::string& name);
std::vector<Method> all_methods();

/// Weight shape, normalized so m ≤ n.
struct LayerDims {
  std::uint64_t m = 0;
  std::uint64_t n = 0;
  std::uint64_t r = 0;

  /// Swaps m and n when needed; throws InvalidInput unless 1 ≤ r ≤ min(m, n).
  static LayerDims make(std::uint64_t rows, std::uint64_t cols, std::uint64_t rank);
};

struct MemoryReport {
  Method method = Method::Full;
  std::uint64_t weight_params = 0;
  std::uint64_t optimizer_params = 0;
  std::uint64_t weight_bytes = 0;
  std::uint64_t optimizer_bytes = 0;
  std::uint64_t total_bytes = 0;
  std::vector<std::string> notes;

  std::uint64_t total_params() const noexcept { return weight_params + optimizer_params; }
  MemoryReport& operator+=(const MemoryReport& other);
};

/// Table-1 entry counts for one matrix. 8-bit moments cost one byte per
/// entry plus a 4-byte scale per 256-entry block; projectors stay at
/// bytes_per_entry.
MemoryReport estimate_layer(const LayerDims& dims, Method method,
                            std::size_t bytes_per_entry = kDefaultBytesPerEntry);

/// Weights and optimizer state of `entries` parameters trained by plain Adam
/// (8-bit when the method is an 8-bit one, stateless for the identity rules).
MemoryReport estimate_dense(std::uint64_t entries, Method method,
                            std::size_t bytes_per_entry = kDefaultBytesPerEntry);

struct ModelLayer {
  std::string name;
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
};

struct ModelConfig {
  std::string name;
  std::vector<ModelLayer> projected;     // attention and feed-forward matrices
  std::uint64_t non_projected_params = 0;  // embeddings, output head, norms
};

/// Low-rank methods on every projected layer at `rank`, plain Adam on the
/// rest. Throws InvalidInput for an empty config.
MemoryReport estimate_model(const ModelConfig& config, Method method, std::uint64_t rank,
                            std::size_t bytes_per_entry = kDefaultBytesPerEntry);

/// Decoder-only transformer with untied embedding and output head, RMSNorm
/// weights, and seven projected matrices per block (q, k, v, o, gate, up, down).
ModelConfig llama_config(const std::string& name, std::uint64_t hidden,
                         std::uint64_t intermediate, std::uint64_t layers,
                         std::uint64_t vocab = 32000);

/// Live gradient entries during one backward pass: every layer's buffer, or
/// only the largest one when updates are applied per layer.
std::uint64_t gradient_buffer_entries(const std::vector<ModelLayer>& layers, bool per_layer);

/// Method × {weights, optimizer, total} in units of 1e9 bytes.
void write_report_table(std::ostream& out, const std::vector<MemoryReport>& reports);
void write_report_csv(std::ostream& out, const std::vector<MemoryReport>& reports);

}  // namespace galore::memory

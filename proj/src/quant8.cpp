#include "galore/quant8.hpp"

#include <algorithm>
#include <cmath>

#include "galore/error.hpp"

namespace galore {

std::vector<Quantized8Block> q8_encode(std::span<const double> values, std::size_t block_size) {
  if (block_size == 0) throw InvalidInput("q8_encode: block_size must be at least 1");
  std::vector<Quantized8Block> blocks;
  blocks.reserve((values.size() + block_size - 1) / block_size);
  for (std::size_t start = 0; start < values.size(); start += block_size) {
    const auto chunk = values.subspan(start, std::min(block_size, values.size() - start));
    Quantized8Block block;
    for (double v : chunk) block.scale = std::max(block.scale, std::abs(v));
    block.codes.resize(chunk.size(), 0);
    if (block.scale > 0.0) {
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        const double q = std::round(chunk[i] * 127.0 / block.scale);
        block.codes[i] = static_cast<std::int8_t>(std::clamp(q, -127.0, 127.0));
      }
    }
    blocks.push_back(std::move(block));
  }
  return blocks;
}

std::vector<double> q8_decode(std::span<const Quantized8Block> blocks) {
  std::vector<double> out;
  for (const auto& block : blocks) {
    for (std::int8_t c : block.codes) {
      // ±127 decodes to exactly ±scale.
      out.push_back(c == 127 ? block.scale : c == -127 ? -block.scale : c * block.scale / 127.0);
    }
  }
  return out;
}

Q8Roundtrip q8_roundtrip(const Matrix& x, std::size_t block_size) {
  Q8Roundtrip out;
  out.blocks = q8_encode(x.data(), block_size);
  out.dequantized = Matrix(x.rows(), x.cols(), q8_decode(out.blocks));
  return out;
}

}  // namespace galore

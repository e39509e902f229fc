#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "galore/matrix.hpp"

namespace galore {

inline constexpr std::size_t kDefaultQuantBlock = 256;

/// Blockwise absmax int8 code block. Entry i decodes to codes[i]·scale/127.
struct Quantized8Block {
  double scale = 0.0;
  std::vector<std::int8_t> codes;
};

struct Q8Roundtrip {
  std::vector<Quantized8Block> blocks;
  Matrix dequantized;
};

/// Splits `values` into consecutive blocks of `block_size` (last block may be
/// shorter) and encodes each against its absmax.
std::vector<Quantized8Block> q8_encode(std::span<const double> values,
                                       std::size_t block_size = kDefaultQuantBlock);
std::vector<double> q8_decode(std::span<const Quantized8Block> blocks);

/// Encode then decode the row-major entries of `x`.
Q8Roundtrip q8_roundtrip(const Matrix& x, std::size_t block_size = kDefaultQuantBlock);

}  // namespace galore

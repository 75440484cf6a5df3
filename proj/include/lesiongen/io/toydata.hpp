#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lesiongen/tensor/tensor.hpp"

namespace lesiongen {

struct ToySpec {
  int count = 348;
  int size = 32;
  bool shifted = false;  // different background texture statistics
};

struct ToyData {
  Tensor samples;  // [count, 4, size, size], colors on the 8-bit grid
  std::vector<std::string> ids;
};

/// Textured pink background with one darker, redder ellipse or polygon
/// "lesion"; the mask is exactly the lesion support (pixel centers inside).
/// Sample i depends only on (seed, i, spec).
ToyData gen_toy_data(const ToySpec& spec, std::uint64_t seed);

}  // namespace lesiongen

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lesiongen/tensor/tensor.hpp"

namespace lesiongen {

/// 8-bit image, interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Binary Netpbm: P6 (RGB) and P5 (gray), maxval 255.
Image8 read_netpbm(const std::filesystem::path& path);
void write_netpbm(const std::filesystem::path& path, const Image8& image);

/// Planar float [C,H,W] copy of an 8-bit image, values 0..255.
Tensor to_planes(const Image8& image);

/// Separable bicubic (Keys, a = -0.5) with the kernel stretched by the scale
/// factor when shrinking, so downsampling is antialiased. Edges clamp.
/// Same-size input is returned unchanged.
Tensor resize_bicubic(const Tensor& planes, int out_h, int out_w);

}  // namespace lesiongen

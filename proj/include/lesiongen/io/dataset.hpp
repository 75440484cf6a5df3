#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lesiongen/io/image_io.hpp"
#include "lesiongen/tensor/tensor.hpp"

namespace lesiongen {

/// Samples [N,4,S,S] in [-1,1] (mask channel +-1) with their basenames.
/// `hash` is FNV-1a over every byte read, in id order.
struct Dataset {
  Tensor samples;
  std::vector<std::string> ids;
  std::uint64_t hash = 0;
};

/// Layout: root/images/<id>.ppm, root/masks/<id>.pgm, optional
/// root/tensors/<id>.dtf sidecars. Images are resized to size x size, mapped
/// 0..255 -> [-1,1]; masks above 127 are lesion. When `prefer_sidecars` is set
/// and every id has a sidecar of the right shape, sidecars are loaded instead.
Dataset load_dataset(const std::filesystem::path& root, int size, bool prefer_sidecars = true);

/// One sample from decoded files (already validated to share dims).
Tensor sample_from_8bit(const Image8& image, const Image8& mask, int size);

/// Writes images/<id>.ppm, masks/<id>.pgm (only 0 and 255) and tensors/<id>.dtf.
/// Returns the written paths relative to root.
std::vector<std::string> save_sample(const Tensor& sample, const std::filesystem::path& root, const std::string& id);
std::vector<std::string> save_dataset(const Tensor& samples, const std::vector<std::string>& ids, const std::filesystem::path& root);

/// Pixel value in [-1,1] -> nearest 8-bit level.
std::uint8_t to_byte(float v);

}  // namespace lesiongen

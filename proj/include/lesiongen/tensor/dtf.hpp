#pragma once

#include <filesystem>
#include <iosfwd>

#include "lesiongen/tensor/tensor.hpp"

namespace lesiongen {

// DTF1 layout: "DTF1", u8 rank, rank x u32 dims (LE), then row-major f32 values (LE).

void write_dtf(std::ostream& os, const Tensor& t);
Tensor read_dtf(std::istream& is);
std::size_t dtf_encoded_size(const Tensor& t);

void save_dtf(const std::filesystem::path& path, const Tensor& t);
Tensor load_dtf(const std::filesystem::path& path);

}  // namespace lesiongen

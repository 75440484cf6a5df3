#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "lesiongen/tensor/params.hpp"

namespace lesiongen {

/// Checkpoint file layout (all text lines end in '\n'):
///
///   LESIONGEN-CKPT 1
///   meta <key> <value>            zero or more; value runs to end of line
///   step <optimizer step>
///   tensor <name> <offset> <dims> one per parameter; dims like 16x4x3x3, "-" for scalars
///   end
///   <blob>                        concatenated DTF1 records; offsets are relative to the blob start
struct Checkpoint {
  ParamSet params;
  std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params,
                     const std::map<std::string, std::string>& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lesiongen

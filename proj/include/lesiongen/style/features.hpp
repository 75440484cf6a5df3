#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lesiongen/diffusion/denoiser.hpp"

namespace lesiongen {

enum class ExtractorMode { SeededRandomConv, DenoiserTaps };

std::string to_string(ExtractorMode mode);
ExtractorMode parse_extractor_mode(const std::string& s);

struct ExtractorConfig {
  ExtractorMode mode = ExtractorMode::SeededRandomConv;
  std::uint64_t seed = 0;
  std::vector<int> widths{8, 16, 32};
  /// Timestep fed to the denoiser in taps mode.
  int tap_timestep = 1;
};

/// Per-layer maps z_l and the global token (spatial mean of the deepest map).
struct FeatureNodes {
  std::vector<NodeId> layers;
  NodeId token;
};

/// Fixed feature network over color images [N, 3, H, W] in [-1, 1].
///
/// Seeded mode: conv3x3 + SiLU per layer with 2x mean-pooling before every
/// layer but the first; weights are drawn once from the seed. Taps mode runs
/// the denoiser at a small timestep with a background mask channel and reads
/// its encoder outputs.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(ExtractorConfig config = {});
  FeatureExtractor(ExtractorConfig config, const DenoiserNet& net);

  const ExtractorConfig& config() const { return config_; }
  int token_dim() const;

  template <typename T>
  FeatureNodes record(BasicGraph<T>& graph, NodeId image) const;

  /// [N, D] tokens, no graph kept.
  Tensor tokens(const Tensor& image) const;
  std::vector<Tensor> layers(const Tensor& image) const;

 private:
  ExtractorConfig config_;
  ParamSet weights_;
  const DenoiserNet* net_ = nullptr;
};

extern template FeatureNodes FeatureExtractor::record(Graph&, NodeId) const;
extern template FeatureNodes FeatureExtractor::record(GraphD&, NodeId) const;

/// Channels [begin, end) of an [N, C, H, W] tensor.
Tensor channel_slice(const Tensor& x, int begin, int end);

}  // namespace lesiongen

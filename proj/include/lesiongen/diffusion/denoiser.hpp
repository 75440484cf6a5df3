#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lesiongen/diffusion/predictor.hpp"
#include "lesiongen/tensor/params.hpp"

namespace lesiongen {

struct DenoiserConfig {
  int image_channels = 4;
  int base_channels = 16;
  int time_dim = 64;
  std::uint64_t init_seed = 0;
};

/// Outputs of one denoiser pass. `features` are the encoder outputs at full,
/// half and quarter resolution; `token` is the [N, 2C] spatial mean of the
/// bottleneck.
struct DenoiserTaps {
  NodeId eps;
  std::vector<NodeId> features;
  NodeId token;
};

/// Sinusoidal embedding, [N, dim]: sin in the first half, cos in the second.
Tensor timestep_embedding(std::span<const int> timesteps, int dim);

/// Two-level encoder-decoder with skip connections and timestep conditioning
/// in every residual block, plus a timestep-conditioned per-channel input
/// skip. Spatial dims must be divisible by 4. The output convolution and the
/// skip gain start at zero so a fresh net predicts zero noise.
class DenoiserNet final : public NoisePredictor {
 public:
  explicit DenoiserNet(DenoiserConfig config);
  DenoiserNet(DenoiserConfig config, ParamSet params);

  const DenoiserConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  template <typename T>
  DenoiserTaps forward(BasicGraph<T>& graph, const ParamBinding<T>& p, NodeId x, std::span<const int> timesteps) const;

  Tensor predict(const Tensor& x_t, std::span<const int> timesteps) const override;
  NodeId record(Graph& graph, NodeId x_t, std::span<const int> timesteps) const override;
  NodeId record(GraphD& graph, NodeId x_t, std::span<const int> timesteps) const override;

 private:
  void init_params();

  DenoiserConfig config_;
  ParamSet params_;
};

extern template DenoiserTaps DenoiserNet::forward(Graph&, const ParamBinding<float>&, NodeId, std::span<const int>) const;
extern template DenoiserTaps DenoiserNet::forward(GraphD&, const ParamBinding<double>&, NodeId, std::span<const int>) const;

}  // namespace lesiongen

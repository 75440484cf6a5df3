#pragma once

#include <span>

#include "lesiongen/tensor/graph.hpp"

namespace lesiongen {

/// Anything that predicts the noise in x_t: the trained denoiser, or an
/// analytic stand-in used by oracles.
///
/// `timesteps` holds one base-schedule timestep per batch item.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;

  virtual Tensor predict(const Tensor& x_t, std::span<const int> timesteps) const = 0;

  /// Differentiable prediction with respect to `x_t`. The default throws;
  /// predictors used under guidance override it.
  virtual NodeId record(Graph& graph, NodeId x_t, std::span<const int> timesteps) const;
  virtual NodeId record(GraphD& graph, NodeId x_t, std::span<const int> timesteps) const;
};

/// Predicts zero noise everywhere.
class ZeroPredictor final : public NoisePredictor {
 public:
  Tensor predict(const Tensor& x_t, std::span<const int> timesteps) const override;
  NodeId record(Graph& graph, NodeId x_t, std::span<const int> timesteps) const override;
  NodeId record(GraphD& graph, NodeId x_t, std::span<const int> timesteps) const override;
};

}  // namespace lesiongen

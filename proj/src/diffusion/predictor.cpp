#include "lesiongen/diffusion/predictor.hpp"

namespace lesiongen {

NodeId NoisePredictor::record(Graph&, NodeId, std::span<const int>) const {
  throw ValidationError("this noise predictor is not differentiable");
}

NodeId NoisePredictor::record(GraphD&, NodeId, std::span<const int>) const {
  throw ValidationError("this noise predictor is not differentiable");
}

Tensor ZeroPredictor::predict(const Tensor& x_t, std::span<const int>) const { return Tensor::zeros(x_t.dims()); }

NodeId ZeroPredictor::record(Graph& graph, NodeId x_t, std::span<const int>) const {
  return graph.scale(x_t, 0.0);
}

NodeId ZeroPredictor::record(GraphD& graph, NodeId x_t, std::span<const int>) const {
  return graph.scale(x_t, 0.0);
}

}  // namespace lesiongen

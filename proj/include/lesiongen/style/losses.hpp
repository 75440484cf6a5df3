#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lesiongen/rng.hpp"
#include "lesiongen/style/features.hpp"

namespace lesiongen {

/// Loss weights. `mse` is carried for completeness; it only contributes when
/// `fold_mse_into_l2` is set, in which case it is added to the L2 weight.
struct StyleWeights {
  double zecon = 500.0;
  double vgg = 100.0;
  double mse = 5000.0;
  double sty = 10000.0;
  double l2 = 10000.0;
  double sem = 40000.0;
  double rng = 200.0;
  bool fold_mse_into_l2 = false;
  double step_scale = 1.0;
  double clip_norm = 10.0;
  double temperature = 0.07;
  int zecon_locations = 16;

  void validate() const;
  double effective_l2() const { return l2 + (fold_mse_into_l2 ? mse : 0.0); }
  bool all_zero() const;
  static StyleWeights zeros();
};

/// Content target x_0 (the inpainted image), style target x_src, and the
/// previous step's clean prediction for the semantic term. Color channels
/// only ([N, 3, H, W]).
struct StyleTargets {
  Tensor content;
  Tensor style;
  std::optional<Tensor> prev_x0;
};

struct TermValues {
  double zecon = 0.0;
  double vgg = 0.0;
  double sty = 0.0;
  double l2 = 0.0;
  double sem = 0.0;
  double rng = 0.0;
  double total = 0.0;
};

/// Sampled spatial locations per layer for the contrastive loss.
using ZeconPlan = std::vector<std::vector<int>>;
ZeconPlan draw_zecon_plan(const std::vector<Shape>& layer_dims, int locations, Rng& rng);

/// Contrastive cross-entropy between locations of `fx` (query) and `fx0`
/// (keys) with cosine logits / temperature; averaged over locations and batch,
/// summed over layers.
template <typename T>
NodeId zecon_loss(BasicGraph<T>& g, const std::vector<NodeId>& fx, const std::vector<NodeId>& fx0, const ZeconPlan& plan,
                  double temperature);

/// Mean over layers of the per-layer feature MSE.
template <typename T>
NodeId content_feature_loss(BasicGraph<T>& g, const std::vector<NodeId>& fx, const std::vector<NodeId>& fx0);

/// Batch mean of per-item Euclidean distance between [N, D] tokens.
template <typename T>
NodeId token_distance(BasicGraph<T>& g, NodeId a, NodeId b);

template <typename T>
NodeId pixel_l2_loss(BasicGraph<T>& g, NodeId a, NodeId b);

/// mean(max(|x| - 1, 0)^2)
template <typename T>
NodeId range_loss(BasicGraph<T>& g, NodeId x);

/// x - relu(x - hi) + relu(lo - x)
template <typename T>
NodeId clamp_node(BasicGraph<T>& g, NodeId x, double lo, double hi);

struct TotalLossNodes {
  NodeId total;
  NodeId zecon, vgg, sty, l2, sem, rng;
};

/// Weighted sum of all terms on the color prediction `x0hat` ([N, 3, H, W]).
/// The semantic term is zero while `targets.prev_x0` is empty.
template <typename T>
TotalLossNodes total_loss(BasicGraph<T>& g, NodeId x0hat, const StyleTargets& targets, const StyleWeights& weights,
                          const FeatureExtractor& extractor, Rng rng);

/// Reads term values; throws NumericError naming the first non-finite term.
template <typename T>
TermValues read_terms(const BasicGraph<T>& g, const TotalLossNodes& nodes);

// Tensor-level conveniences.
double zecon_loss(const Tensor& x, const Tensor& x0, const FeatureExtractor& extractor, Rng& rng, double temperature = 0.07,
                  int locations = 16);
double content_feature_loss(const Tensor& x, const Tensor& x0, const FeatureExtractor& extractor);
double style_token_loss(const Tensor& x, const Tensor& x_src, const FeatureExtractor& extractor);
/// Negated token distance; 0 when there is no previous prediction.
double semantic_accel_loss(const Tensor& x0_t, const std::optional<Tensor>& x0_prev, const FeatureExtractor& extractor);
double pixel_l2_loss(const Tensor& a, const Tensor& b);
double range_loss(const Tensor& x);
TermValues total_loss(const Tensor& x0hat, const StyleTargets& targets, const StyleWeights& weights,
                      const FeatureExtractor& extractor, Rng rng);

}  // namespace lesiongen

#pragma once

#include <cstdint>
#include <vector>

#include "lesiongen/diffusion/sampler.hpp"
#include "lesiongen/style/losses.hpp"

namespace lesiongen {

/// Loss and its gradient with respect to x_t, taken through the clean
/// prediction x0hat(x_t) = clamp(tweedie(x_t, net(x_t))) and the net itself.
template <typename T>
struct GuidanceGradient {
  TermValues terms;
  BasicTensor<T> grad;  // same dims as x_t; mask channel included
  Tensor x0hat;         // color channels, clamped
};

template <typename T>
GuidanceGradient<T> guidance_gradient(const NoisePredictor& net, const BasicTensor<T>& x_t, int position,
                                      const RespacedSchedule& schedule, const StyleTargets& targets,
                                      const StyleWeights& weights, const FeatureExtractor& extractor, Rng rng);

struct GuidedStep {
  Tensor x;
  TermValues terms;
  bool skipped = false;  // gradient was non-finite, update not applied
  std::vector<double> grad_norms;
};

/// Reverse step plus x_{t-1} -= scale * clip(grad) on the color channels. The
/// mask channel of the result is set to `frozen_mask` ([N, 1, H, W]) and the
/// semantic cache in `targets` is updated with the new clean prediction.
/// `loss_rng` drives the contrastive location draws.
GuidedStep guided_reverse_step(const NoisePredictor& net, const Tensor& x_t, int position, StyleTargets& targets,
                               const Tensor& frozen_mask, const StyleWeights& weights, const FeatureExtractor& extractor,
                               const RespacedSchedule& schedule, RngStreams& rngs, Rng& loss_rng,
                               VarianceMode mode = VarianceMode::FixedSmall);

struct StylizeReport {
  std::vector<TermValues> steps;
  int skipped_steps = 0;
};

/// Noises the inpainted batch to the chain's start position and walks guided
/// steps down to 0. Color channels are clamped to [-1, 1]; the mask channel
/// of `inpainted` is returned unchanged. Chain i uses streams
/// derive_seed(seed, "stylize", first_index + i).
Tensor stylize(const NoisePredictor& net, const Tensor& inpainted, const Tensor& source, const RespacedSchedule& schedule,
               const StyleWeights& weights, const FeatureExtractor& extractor, std::uint64_t seed, int first_index = 0,
               VarianceMode mode = VarianceMode::FixedSmall, StylizeReport* report = nullptr);

/// Replaces channel `c` of x with `values` ([N, 1, H, W]).
void set_channel(Tensor& x, int c, const Tensor& values);

}  // namespace lesiongen

#pragma once

#include <cstdint>
#include <vector>

#include "lesiongen/diffusion/predictor.hpp"
#include "lesiongen/diffusion/schedule.hpp"
#include "lesiongen/rng.hpp"

namespace lesiongen {

/// One generator per batch item, so a chain's randomness does not depend on
/// which other chains share its batch.
using RngStreams = std::vector<Rng>;

RngStreams make_streams(std::uint64_t seed, std::string_view stage, int count, int first_index = 0);

inline constexpr float kTweedieClamp = 1.5f;

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; t = 0 returns x0.
Tensor forward_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule);

/// (x_t - (1 - alpha_t) / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)
Tensor predict_mean(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& schedule);

/// (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t), optionally clamped to +-1.5.
Tensor tweedie_x0(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& schedule, bool clamp = true);

/// One reverse step at respaced `position` given a noise estimate. Adds
/// sigma * z unless the mode is None or this is the last step.
Tensor reverse_step_from_eps(const Tensor& x_t, int position, const Tensor& eps_hat, const RespacedSchedule& schedule,
                             RngStreams& rngs, VarianceMode mode);

/// x_t is [N, C, H, W] with rngs.size() == N.
Tensor reverse_step(const NoisePredictor& model, const Tensor& x_t, int position, const RespacedSchedule& schedule,
                    RngStreams& rngs, VarianceMode mode);

struct SampleOptions {
  int channels = 4;
  int height = 32;
  int width = 32;
  VarianceMode variance = VarianceMode::FixedSmall;
  int batch_size = 16;
};

/// Unconditional sampling down the whole respaced chain; chain i draws from
/// the stream derive_seed(seed, "sample", i). Output is clamped to [-1, 1].
Tensor sample(const NoisePredictor& model, const RespacedSchedule& schedule, int count, std::uint64_t seed,
              const SampleOptions& options = {});

/// Copies of items [begin, end) along axis 0.
Tensor batch_slice(const Tensor& batch, int begin, int end);
Tensor batch_concat(const std::vector<Tensor>& parts);
void clamp_inplace(Tensor& t, float lo, float hi);

}  // namespace lesiongen

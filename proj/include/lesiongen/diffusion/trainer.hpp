#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lesiongen/diffusion/denoiser.hpp"
#include "lesiongen/diffusion/schedule.hpp"
#include "lesiongen/rng.hpp"

namespace lesiongen {

/// Desk-scale defaults; the 1000/200/80 chain of the original setup maps to 100/50/20 here.
struct TrainConfig {
  int batch_size = 16;
  int iterations = 3000;
  double learning_rate = 2e-4;
  double weight_decay = 0.0;
  ScheduleKind schedule = ScheduleKind::Linear;
  int timesteps = 100;
  double beta_min = 1e-3;
  double beta_max = 0.2;
  int respaced_length = 50;
  int skip = 20;
  int base_channels = 16;
  std::uint64_t seed = 0;

  void validate() const;
  NoiseSchedule make_noise_schedule() const;
  std::map<std::string, std::string> to_meta() const;
  static TrainConfig from_meta(const std::map<std::string, std::string>& meta);
};

/// Mean over every element, mask channel included, of (eps_pred - eps)^2.
template <typename T>
NodeId noise_prediction_loss(BasicGraph<T>& graph, NodeId eps_pred, const Tensor& eps);

/// One optimization step: per-item uniform t, Gaussian eps, MSE on the noise,
/// one AdamW update. Throws NumericError (parameters untouched) when the loss
/// or a gradient is non-finite.
double train_step(DenoiserNet& net, const Tensor& batch, const NoiseSchedule& schedule, Rng& rng, double lr,
                  double weight_decay = 0.0);

/// Loss for explicit timesteps and noise, with parameter gradients. Used by
/// train_step and by tests that pin the randomness.
struct StepResult {
  double loss = 0.0;
  ParamGrads grads;
};
StepResult noise_loss_and_grads(const DenoiserNet& net, const Tensor& x0, std::span<const int> timesteps,
                                const Tensor& eps, const NoiseSchedule& schedule);

using TrainProgress = std::function<void(int iteration, double loss)>;

/// Trains on `data` ([N, 4, H, W]) with batches drawn uniformly with
/// replacement. Returns the per-iteration loss curve.
std::vector<double> train_denoiser(DenoiserNet& net, const Tensor& data, const TrainConfig& config,
                                   const TrainProgress& progress = {});

}  // namespace lesiongen

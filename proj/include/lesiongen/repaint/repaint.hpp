#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lesiongen/cluster/cluster.hpp"
#include "lesiongen/diffusion/denoiser.hpp"
#include "lesiongen/diffusion/sampler.hpp"
#include "lesiongen/diffusion/trainer.hpp"

namespace lesiongen {

/// m is [N, 1, H, W] with 1 = known (kept) and 0 = unknown (generated).
struct RepaintMask {
  Tensor m;
  int radius = 0;
  bool all_known = false;
  bool all_unknown = false;  // generation degenerates to unconditional
};

/// round(20 * H / 256): 20 px at 256, 2 px at 32.
int scaled_dilation_radius(int height);

/// `label` is [N, 1, H, W] on the [0, 1] scale. Pixels >= threshold form the
/// label region, which is dilated by a Chebyshev ball of `radius` and marked
/// unknown.
RepaintMask binarize_and_dilate(const Tensor& label, double threshold, int radius);

/// Same, from the mask channel of [N, 4, H, W] samples in [-1, 1].
RepaintMask mask_from_samples(const Tensor& samples, double threshold, int radius);

struct RepaintPlan {
  std::vector<std::pair<int, int>> transitions;  // (from, to) respaced positions
  int down = 0;
  int up = 0;
};

/// Descend one step at a time; after every j consecutive down-steps do r-1
/// cycles of (j up-steps, j down-steps). Ends at 0.
RepaintPlan repaint_plan(int chain_len, int j, int r);

/// Eq. 3 composition at respaced `position`: known pixels from the source
/// noised to position-1 (the source itself at 0), unknown pixels from one
/// reverse step. Chain b draws its known-region noise from rngs[b] first,
/// then the reverse-step noise.
Tensor repaint_step(const NoisePredictor& net, const Tensor& x_t, int position, const Tensor& source,
                    const RepaintMask& mask, const RespacedSchedule& schedule, RngStreams& rngs, VarianceMode mode);

/// One forward transition x_{t+1} = sqrt(1 - beta_{t+1}) x_t + sqrt(beta_{t+1}) eps.
Tensor renoise_step(const Tensor& x_t, int position, const RespacedSchedule& schedule, RngStreams& rngs);

/// Walks the plan from pure noise at the chain top, then pastes the known
/// region from the source, re-binarizes the mask channel at 0 and clamps
/// colors to [-1, 1].
Tensor repaint_batch(const NoisePredictor& net, const Tensor& sources, const RepaintMask& mask,
                     const RespacedSchedule& schedule, const RepaintPlan& plan, RngStreams& rngs, VarianceMode mode);

struct GenerationConfig {
  int samples = 3;
  int radius = -1;  // < 0: scaled_dilation_radius(H)
  double threshold = 0.5;
  int jump = 10;
  int resample = 5;
  VarianceMode variance = VarianceMode::FixedSmall;
  bool full_diff = false;
  int batch_size = 16;

  void validate() const;
};

/// Denoisers and schedules per cluster, loaded from checkpoints on first use.
class ModelBank {
 public:
  explicit ModelBank(ClusterRegistry registry);
  /// In-memory models; index K (== models.size()) is not used. `full` may be null.
  ModelBank(std::vector<std::shared_ptr<const NoisePredictor>> models, std::shared_ptr<const NoisePredictor> full,
            RespacedSchedule schedule);

  int clusters() const { return k_; }
  bool has_full() const;
  /// Throws naming the cluster when it has no checkpoint.
  const NoisePredictor& model(int cluster) const;
  const NoisePredictor& full() const;
  const RespacedSchedule& schedule(int cluster) const;  // cluster -1 = full model
  /// Uniform draw over clusters (validates completeness).
  int pick(Rng& rng) const;

 private:
  struct Slot {
    std::shared_ptr<const NoisePredictor> net;
    std::shared_ptr<const RespacedSchedule> schedule;
  };
  const Slot& load(int cluster) const;

  int k_ = 0;
  ClusterRegistry registry_;
  mutable std::vector<Slot> slots_;  // index k_ holds the full model
};

/// Loads a denoiser and its respaced schedule from a checkpoint.
std::pair<std::shared_ptr<DenoiserNet>, RespacedSchedule> load_denoiser(const std::filesystem::path& path);

struct InpaintJob {
  int source = 0;   // row in the source batch
  int sample = 0;   // 0..samples-1
  int model = -1;   // drawn cluster, -1 = full model
};

struct InpaintResult {
  Tensor outputs;  // [S * samples, 4, H, W], source-major
  std::vector<InpaintJob> jobs;
  std::vector<std::string> warnings;
};

/// Generates `config.samples` outputs per source ([S, 4, H, W]). Job
/// i = source * samples + k draws its model from derive_seed(seed,
/// "inpaint-model", i) and its chain noise from derive_seed(seed, "inpaint", i),
/// so results do not depend on batching.
InpaintResult inpaint(const ModelBank& bank, const Tensor& sources, const GenerationConfig& config, std::uint64_t seed,
                      const std::vector<std::string>& source_ids = {});

}  // namespace lesiongen

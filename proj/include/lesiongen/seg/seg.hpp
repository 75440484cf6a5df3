#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lesiongen/rng.hpp"
#include "lesiongen/tensor/params.hpp"

namespace lesiongen {

struct SegNetConfig {
  int base_channels = 8;
  std::uint64_t init_seed = 0;
};

/// Two-level encoder-decoder: color image [N,3,H,W] -> mask logits [N,1,H,W].
/// H and W must be even.
class SegNet {
 public:
  explicit SegNet(SegNetConfig config = {});
  SegNet(SegNetConfig config, ParamSet params);

  const SegNetConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  NodeId record(Graph& graph, const ParamBinding<float>& p, NodeId images) const;
  Tensor logits(const Tensor& images) const;

 private:
  SegNetConfig config_;
  ParamSet params_;
};

void save_segnet(const std::filesystem::path& path, const SegNet& net);
SegNet load_segnet(const std::filesystem::path& path);

/// Mean over the batch of 1 - (2 sum(p g) + 1) / (sum p + sum g + 1), p = sigmoid(logits).
NodeId soft_dice_loss(Graph& graph, NodeId logits, const Tensor& target);

/// Channel 3 of [N,4,H,W] samples as a {0,1} mask [N,1,H,W].
Tensor target_masks(const Tensor& samples);

enum class AugMode { Replace, Add };
std::string to_string(AugMode m);
AugMode parse_aug_mode(const std::string& s);

struct AugPlan {
  double alpha = 0.5;
  int r = 3;
  int m = 3;
  std::uint64_t seed = 0;
  AugMode mode = AugMode::Replace;

  void validate() const;
};

struct AugResult {
  Tensor data;               // [N', 4, H, W]
  std::vector<int> source;   // -1 for a real sample, else the synthetic row
  int replaced = 0;          // real samples that drew synthetics
};

/// `synth` holds M rows per real sample: rows [i*M, (i+1)*M) belong to real i.
/// With probability alpha a real sample draws r of its synthetics without
/// replacement; Replace emits only those, Add emits the real one too. The
/// result is shuffled with the plan seed.
AugResult augment_dataset(const Tensor& real, const Tensor& synth, const AugPlan& plan);

struct GeoTransform {
  bool flip = false;
  int dy = 0;
  int dx = 0;
  double brightness = 1.0;
};

inline constexpr int kMaxShift = 3;

GeoTransform draw_geo(Rng& rng);
/// Flip, then integer shift with reflect padding, then brightness on color
/// channels. The mask channel gets the same spatial map and is re-binarized.
Tensor apply_geo(const Tensor& sample, const GeoTransform& t);
inline Tensor geo_augment(const Tensor& sample, Rng& rng) { return apply_geo(sample, draw_geo(rng)); }

struct SegTrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double learning_rate = 3e-3;
  int lr_drop_epoch = 10;
  double lr_drop_factor = 0.1;
  double val_fraction = 0.2;
  int min_steps_per_epoch = 8;
  bool augment = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SegTrainResult {
  std::vector<double> train_loss;  // mean per epoch
  std::vector<double> val_iou;     // per epoch
  int best_epoch = -1;
  int train_count = 0;
  int val_count = 0;
};

/// Shuffled 80/20 split, Dice-loss AdamW training, best-validation-IoU
/// weights restored at the end. A set too small to split validates on the
/// training samples. An epoch is one pass over the training split, but at
/// least min_steps_per_epoch batches. Throws NumericError on a non-finite loss.
SegTrainResult train_seg(SegNet& net, const Tensor& data, const SegTrainConfig& config);

using SegPredictor = std::function<Tensor(const Tensor& images)>;

struct SegEval {
  double dice = 0.0;
  double iou = 0.0;
  std::vector<double> dices;
  std::vector<double> ious;
};

/// sigmoid(logit) > threshold, per-sample Dice/IoU, arithmetic means.
SegEval test_seg(const SegPredictor& predictor, const Tensor& test, double threshold = 0.5);
SegEval test_seg(const SegNet& net, const Tensor& test, double threshold = 0.5);
SegEval test_seg(const std::filesystem::path& checkpoint, const Tensor& test, double threshold = 0.5);

}  // namespace lesiongen

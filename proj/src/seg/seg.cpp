#include "lesiongen/seg/seg.hpp"

#include <algorithm>
#include <cmath>

#include "lesiongen/diffusion/checkpoint.hpp"
#include "lesiongen/diffusion/sampler.hpp"
#include "lesiongen/error.hpp"
#include "lesiongen/metrics/metrics.hpp"
#include "lesiongen/style/features.hpp"

namespace lesiongen {

namespace {

void add_conv(ParamSet& ps, Rng& rng, const std::string& name, int out, int in) {
  const double bound = 1.0 / std::sqrt(in * 9.0);
  Tensor w({out, in, 3, 3});
  for (auto& v : w.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  ps.add(name + ".w", std::move(w));
  ps.add(name + ".b", Tensor::zeros({out}));
}

Tensor gather(const Tensor& batch, const std::vector<int>& rows) {
  std::vector<Tensor> parts;
  parts.reserve(rows.size());
  for (int r : rows) parts.push_back(batch_slice(batch, r, r + 1));
  return batch_concat(parts);
}

void check_samples(const char* what, const Tensor& data) {
  if (data.rank() != 4 || data.dim(1) != 4 || data.dim(0) < 1) {
    throw ShapeError(std::string(what) + ": expects non-empty [N,4,H,W], got " + shape_string(data.dims()));
  }
}

}  // namespace

SegNet::SegNet(SegNetConfig config) : config_(config) {
  const int c = config_.base_channels;
  if (c < 1) throw ValidationError("segnet: base_channels must be >= 1");
  Rng rng(derive_seed(config_.init_seed, "segnet-init"));
  add_conv(params_, rng, "enc1a", c, 3);
  add_conv(params_, rng, "enc1b", c, c);
  add_conv(params_, rng, "enc2a", 2 * c, c);
  add_conv(params_, rng, "enc2b", 2 * c, 2 * c);
  add_conv(params_, rng, "dec1a", c, 3 * c);
  add_conv(params_, rng, "out", 1, c);
}

SegNet::SegNet(SegNetConfig config, ParamSet params) : config_(config), params_(std::move(params)) {
  const SegNet reference(config_);
  if (params_.size() != reference.params().size()) throw ValidationError("segnet checkpoint has unexpected parameters");
  for (const auto& e : reference.params().entries()) {
    if (!params_.contains(e.name) || params_.value(e.name).dims() != e.value.dims()) {
      throw ValidationError("segnet checkpoint parameter '" + e.name + "' missing or misshapen");
    }
  }
}

NodeId SegNet::record(Graph& g, const ParamBinding<float>& p, NodeId images) const {
  const Shape d = g.dims(images);
  if (d.size() != 4 || d[1] != 3) throw ShapeError("segnet expects [N,3,H,W], got " + shape_string(d));
  if (d[2] % 2 || d[3] % 2) throw ShapeError("segnet spatial dims must be even, got " + shape_string(d));
  auto conv = [&](NodeId x, const std::string& n) { return g.conv2d(x, p[n + ".w"], p[n + ".b"], 1, 1); };
  const NodeId e1 = g.silu(conv(g.silu(conv(images, "enc1a")), "enc1b"));
  const NodeId e2 = g.silu(conv(g.silu(conv(g.mean_pool2x2(e1), "enc2a")), "enc2b"));
  const NodeId up = g.upsample_nearest(e2, 2);
  const NodeId cat[] = {up, e1};
  const NodeId d1 = g.silu(conv(g.concat(cat, 1), "dec1a"));
  return conv(d1, "out");
}

Tensor SegNet::logits(const Tensor& images) const {
  Graph g;
  const ParamBinding<float> p(params_, g, false);
  return g.value(record(g, p, g.constant(images)));
}

void save_segnet(const std::filesystem::path& path, const SegNet& net) {
  save_checkpoint(path, net.params(),
                  {{"kind", "segnet"}, {"base_channels", std::to_string(net.config().base_channels)}, {"init_seed", std::to_string(net.config().init_seed)}});
}

SegNet load_segnet(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  const auto kind = ck.meta.find("kind");
  if (kind == ck.meta.end() || kind->second != "segnet") throw ValidationError(path.string() + ": not a segmentation checkpoint");
  SegNetConfig cfg;
  try {
    cfg.base_channels = std::stoi(ck.meta.at("base_channels"));
    cfg.init_seed = std::stoull(ck.meta.at("init_seed"));
  } catch (const std::exception&) {
    throw ValidationError(path.string() + ": segmentation checkpoint metadata incomplete");
  }
  return SegNet(cfg, std::move(ck.params));
}

NodeId soft_dice_loss(Graph& g, NodeId logits, const Tensor& target) {
  const Shape d = g.dims(logits);
  if (target.dims() != d) throw ShapeError("soft_dice_loss: target " + shape_string(target.dims()) + " vs logits " + shape_string(d));
  const int n = d[0];
  const int per = static_cast<int>(target.size()) / n;
  const NodeId p = g.reshape(g.sigmoid(logits), {n, per});
  const NodeId t = g.constant(target.reshaped({n, per}));
  const NodeId inter = g.sum_axis(g.mul(p, t), 1);
  const NodeId denom = g.add_scalar(g.add(g.sum_axis(p, 1), g.sum_axis(t, 1)), 1.0);
  const NodeId dice = g.div(g.add_scalar(g.scale(inter, 2.0), 1.0), denom);
  return g.add_scalar(g.scale(g.mean(dice), -1.0), 1.0);
}

Tensor target_masks(const Tensor& samples) {
  Tensor m = channel_slice(samples, 3, 4);
  for (auto& v : m.data()) v = v > 0.f ? 1.f : 0.f;
  return m;
}

// ---- augmentation ----

std::string to_string(AugMode m) { return m == AugMode::Replace ? "replace" : "add"; }

AugMode parse_aug_mode(const std::string& s) {
  if (s == "replace") return AugMode::Replace;
  if (s == "add") return AugMode::Add;
  throw ValidationError("unknown augmentation mode '" + s + "' (expected replace or add)");
}

void AugPlan::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("augmentation alpha must be in [0, 1]");
  if (m < 1) throw ValidationError("augmentation needs M >= 1 synthetics per real sample");
  if (r < 1 || r > m) throw ValidationError("augmentation r=" + std::to_string(r) + " must be in [1, M=" + std::to_string(m) + "]");
}

AugResult augment_dataset(const Tensor& real, const Tensor& synth, const AugPlan& plan) {
  plan.validate();
  check_samples("augment_dataset", real);
  const int n = real.dim(0);
  if (synth.rank() != 4 || synth.dim(0) != n * plan.m || synth.dim(1) != real.dim(1) || synth.dim(2) != real.dim(2) || synth.dim(3) != real.dim(3)) {
    throw ValidationError("augment_dataset: need " + std::to_string(plan.m) + " synthetic samples per real sample, got " +
                          shape_string(synth.dims()) + " for " + std::to_string(n) + " real");
  }
  Rng rng(derive_seed(plan.seed, "augment"));
  AugResult out;
  for (int i = 0; i < n; ++i) {
    if (rng.bernoulli(plan.alpha)) {
      ++out.replaced;
      if (plan.mode == AugMode::Add) out.source.push_back(-1 - i);
      for (int j : rng.sample_without_replacement(plan.m, plan.r)) out.source.push_back(i * plan.m + j);
    } else {
      out.source.push_back(-1 - i);
    }
  }
  rng.shuffle(out.source.begin(), out.source.end());
  std::vector<Tensor> parts;
  parts.reserve(out.source.size());
  for (int& s : out.source) {
    if (s < 0) {
      parts.push_back(batch_slice(real, -1 - s, -s));
      s = -1;
    } else {
      parts.push_back(batch_slice(synth, s, s + 1));
    }
  }
  out.data = batch_concat(parts);
  return out;
}

GeoTransform draw_geo(Rng& rng) {
  GeoTransform t;
  t.flip = rng.bernoulli(0.5);
  t.dy = rng.uniform_int(-kMaxShift, kMaxShift);
  t.dx = rng.uniform_int(-kMaxShift, kMaxShift);
  t.brightness = rng.uniform(0.9, 1.1);
  return t;
}

namespace {

int reflect(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

}  // namespace

Tensor apply_geo(const Tensor& sample, const GeoTransform& t) {
  const bool batched = sample.rank() == 4;
  if (!(batched && sample.dim(0) == 1 && sample.dim(1) == 4) && !(sample.rank() == 3 && sample.dim(0) == 4)) {
    throw ShapeError("geo_augment: expects one 4-channel sample, got " + shape_string(sample.dims()));
  }
  const int h = sample.dim(sample.rank() - 2), w = sample.dim(sample.rank() - 1);
  Tensor out(sample.dims());
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < 4; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        // output (y, x) reads the flipped image at (y - dy, x - dx)
        const int sy = reflect(y - t.dy, h);
        int sx = reflect(x - t.dx, w);
        if (t.flip) sx = w - 1 - sx;
        float v = sample[c * hw + static_cast<std::size_t>(sy) * w + sx];
        if (c == 3) {
          v = v > 0.f ? 1.f : -1.f;
        } else if (t.brightness != 1.0) {
          v = std::clamp(static_cast<float>(((v + 1.0) * 0.5 * t.brightness) * 2.0 - 1.0), -1.f, 1.f);
        }
        out[c * hw + static_cast<std::size_t>(y) * w + x] = v;
      }
    }
  }
  return out;
}

// ---- training ----

void SegTrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1 || min_steps_per_epoch < 1) throw ValidationError("seg training: epochs, batch size and steps must be >= 1");
  if (!(learning_rate >= 0.0) || !(lr_drop_factor > 0.0)) throw ValidationError("seg training: learning rate must be >= 0 and drop factor > 0");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ValidationError("seg training: validation fraction must be in [0, 1)");
}

SegTrainResult train_seg(SegNet& net, const Tensor& data, const SegTrainConfig& config) {
  config.validate();
  check_samples("train_seg", data);
  const Tensor masks = channel_slice(data, 3, 4);
  for (float v : masks.data()) {
    if (v != 1.f && v != -1.f) throw ValidationError("train_seg: mask channel must be binary (+-1)");
  }
  Rng rng(derive_seed(config.seed, "seg-train"));
  const int n = data.dim(0);
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order.begin(), order.end());
  const int n_val = static_cast<int>(std::floor(n * config.val_fraction));
  std::vector<int> val(order.begin(), order.begin() + n_val), train(order.begin() + n_val, order.end());
  const Tensor train_set = gather(data, train);
  const Tensor val_set = val.empty() ? train_set : gather(data, val);

  SegTrainResult result;
  result.train_count = static_cast<int>(train.size());
  result.val_count = static_cast<int>(val.size());
  ParamSet best = net.params();
  double best_iou = -1.0;
  const int nt = result.train_count;
  const int steps = std::max(config.min_steps_per_epoch, (nt + config.batch_size - 1) / config.batch_size);
  std::vector<int> perm(static_cast<std::size_t>(nt));
  for (int i = 0; i < nt; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::size_t cursor = perm.size();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.learning_rate * (epoch >= config.lr_drop_epoch ? config.lr_drop_factor : 1.0);
    double loss_sum = 0.0;
    for (int s = 0; s < steps; ++s) {
      std::vector<Tensor> items;
      for (int b = 0; b < std::min(config.batch_size, nt); ++b) {
        if (cursor == perm.size()) {
          rng.shuffle(perm.begin(), perm.end());
          cursor = 0;
        }
        Tensor item = batch_slice(train_set, perm[cursor], perm[cursor] + 1);
        ++cursor;
        items.push_back(config.augment ? geo_augment(item, rng) : item);
      }
      const Tensor batch = batch_concat(items);
      Graph g;
      const ParamBinding<float> p(net.params(), g, true);
      const NodeId loss = soft_dice_loss(g, net.record(g, p, g.constant(channel_slice(batch, 0, 3))), target_masks(batch));
      const double lv = g.value(loss).item();
      if (!std::isfinite(lv)) throw NumericError("train_seg: non-finite loss at epoch " + std::to_string(epoch));
      adamw_step(net.params(), p.gradients(g.backward(loss)), lr, 0.0);
      loss_sum += lv;
    }
    result.train_loss.push_back(loss_sum / steps);
    const double iou = test_seg(net, val_set).iou;
    result.val_iou.push_back(iou);
    if (iou > best_iou) {
      best_iou = iou;
      best = net.params();
      result.best_epoch = epoch;
    }
  }
  net.params() = std::move(best);
  return result;
}

SegEval test_seg(const SegPredictor& predictor, const Tensor& test, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("test_seg: threshold must be in (0, 1)");
  if (test.rank() != 4 || test.dim(0) < 1) throw ValidationError("test_seg: empty test set");
  check_samples("test_seg", test);
  const Tensor gt = target_masks(test);
  const Tensor logits = predictor(channel_slice(test, 0, 3));
  if (logits.dims() != gt.dims()) throw ShapeError("test_seg: predictor returned " + shape_string(logits.dims()));
  // sigmoid(z) > t  <=>  z > logit(t)
  const double cut = std::log(threshold / (1.0 - threshold));
  SegEval e;
  const int n = test.dim(0);
  for (int i = 0; i < n; ++i) {
    Tensor pred = batch_slice(logits, i, i + 1);
    for (auto& v : pred.data()) v = v > cut ? 1.f : 0.f;
    const SegScore s = seg_metrics(pred, batch_slice(gt, i, i + 1));
    e.dices.push_back(s.dice);
    e.ious.push_back(s.iou);
    e.dice += s.dice;
    e.iou += s.iou;
  }
  e.dice /= n;
  e.iou /= n;
  return e;
}

SegEval test_seg(const SegNet& net, const Tensor& test, double threshold) {
  // Batches of 32 keep the tape small.
  return test_seg([&net](const Tensor& images) {
    std::vector<Tensor> parts;
    for (int b = 0; b < images.dim(0); b += 32) parts.push_back(net.logits(batch_slice(images, b, std::min(images.dim(0), b + 32))));
    return batch_concat(parts);
  }, test, threshold);
}

SegEval test_seg(const std::filesystem::path& checkpoint, const Tensor& test, double threshold) {
  return test_seg(load_segnet(checkpoint), test, threshold);
}

}  // namespace lesiongen

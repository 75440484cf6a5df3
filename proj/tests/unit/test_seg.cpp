#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "lesiongen/diffusion/sampler.hpp"
#include "lesiongen/error.hpp"
#include "lesiongen/seg/seg.hpp"
#include "lesiongen/style/features.hpp"

using namespace lesiongen;

namespace {

// Bright disc on a darker textured background; the mask is the disc.
Tensor disc_samples(Rng& rng, int n, int size = 16) {
  Tensor t({n, 4, size, size});
  const std::size_t hw = static_cast<std::size_t>(size) * size;
  for (int i = 0; i < n; ++i) {
    const double cy = rng.uniform(5, size - 5), cx = rng.uniform(5, size - 5), r = rng.uniform(2.5, 4.5);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const bool in = (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r;
        for (int c = 0; c < 3; ++c) {
          t[(static_cast<std::size_t>(i) * 4 + c) * hw + static_cast<std::size_t>(y) * size + x] =
              static_cast<float>((in ? 0.6 : -0.4) + 0.15 * rng.normal());
        }
        t[(static_cast<std::size_t>(i) * 4 + 3) * hw + static_cast<std::size_t>(y) * size + x] = in ? 1.f : -1.f;
      }
    }
  }
  return t;
}

Tensor ramp_sample(int size = 12) {
  Tensor t({1, 4, size, size});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(std::sin(0.37 * static_cast<double>(i)));
  for (std::size_t i = 3 * static_cast<std::size_t>(size) * size; i < t.size(); ++i) t[i] = t[i] > 0.f ? 1.f : -1.f;
  return t;
}

double chi_square_sf(double x, int dof) {
  // Wilson-Hilferty normal approximation.
  const double k = dof;
  const double z = (std::cbrt(x / k) - (1 - 2 / (9 * k))) / std::sqrt(2 / (9 * k));
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

}  // namespace

TEST(Augment, AlphaZeroIsIdentitySet) {
  Rng rng(1);
  const Tensor real = disc_samples(rng, 5, 8), synth = disc_samples(rng, 15, 8);
  AugPlan plan;
  plan.alpha = 0.0;
  const auto out = augment_dataset(real, synth, plan);
  ASSERT_EQ(out.data.dim(0), 5);
  EXPECT_EQ(out.replaced, 0);
  // Same multiset of rows (order is shuffled).
  int found = 0;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) found += batch_slice(out.data, i, i + 1) == batch_slice(real, j, j + 1);
  }
  EXPECT_EQ(found, 5);
}

TEST(Augment, AlphaOneAllSynthetic) {
  Rng rng(2);
  const Tensor real = disc_samples(rng, 4, 8), synth = disc_samples(rng, 12, 8);
  AugPlan plan;
  plan.alpha = 1.0;
  const auto out = augment_dataset(real, synth, plan);
  ASSERT_EQ(out.data.dim(0), 12);
  for (int s : out.source) EXPECT_GE(s, 0);
  std::vector<int> sorted = out.source;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 12; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
}

TEST(Augment, AddModeKeepsReal) {
  Rng rng(3);
  const Tensor real = disc_samples(rng, 4, 8), synth = disc_samples(rng, 12, 8);
  AugPlan plan;
  plan.alpha = 1.0;
  plan.r = 2;
  plan.mode = AugMode::Add;
  const auto out = augment_dataset(real, synth, plan);
  EXPECT_EQ(out.data.dim(0), 12);
  EXPECT_EQ(std::count(out.source.begin(), out.source.end(), -1), 4);
}

TEST(Augment, ExpectedSizeMonteCarlo) {
  Rng rng(4);
  const int n = 10;
  const Tensor real = disc_samples(rng, n, 4), synth = disc_samples(rng, 3 * n, 4);
  AugPlan plan;
  double sum = 0, sum2 = 0;
  for (int s = 0; s < 1000; ++s) {
    plan.seed = static_cast<std::uint64_t>(s);
    const double size = augment_dataset(real, synth, plan).data.dim(0);
    sum += size;
    sum2 += size * size;
  }
  const double mean = sum / 1000, var = sum2 / 1000 - mean * mean;
  EXPECT_NEAR(mean, 2.0 * n, 3 * std::sqrt(var / 1000));
}

TEST(Augment, ReplacedCountIsBinomial) {
  Rng rng(5);
  const int n = 8;
  const Tensor real = disc_samples(rng, n, 4), synth = disc_samples(rng, 3 * n, 4);
  AugPlan plan;
  std::vector<int> hist(n + 1, 0);
  for (int s = 0; s < 1000; ++s) {
    plan.seed = static_cast<std::uint64_t>(s) + 1000;
    const auto out = augment_dataset(real, synth, plan);
    const int k = out.replaced;
    ASSERT_EQ(out.data.dim(0), n + k * (plan.r - 1));
    ++hist[static_cast<std::size_t>(k)];
  }
  // Pool tails so every expected count is >= 5.
  std::vector<double> expected(n + 1);
  for (int k = 0; k <= n; ++k) expected[static_cast<std::size_t>(k)] = 1000 * std::tgamma(n + 1) / (std::tgamma(k + 1) * std::tgamma(n - k + 1)) / 256.0;
  double chi = 0.0;
  double e_lo = expected[0] + expected[1], o_lo = hist[0] + hist[1];
  double e_hi = expected[7] + expected[8], o_hi = hist[7] + hist[8];
  chi += (o_lo - e_lo) * (o_lo - e_lo) / e_lo + (o_hi - e_hi) * (o_hi - e_hi) / e_hi;
  for (int k = 2; k <= 6; ++k) chi += (hist[static_cast<std::size_t>(k)] - expected[static_cast<std::size_t>(k)]) * (hist[static_cast<std::size_t>(k)] - expected[static_cast<std::size_t>(k)]) / expected[static_cast<std::size_t>(k)];
  EXPECT_GT(chi_square_sf(chi, 6), 0.001) << "chi2=" << chi;
}

TEST(Augment, Errors) {
  Rng rng(6);
  const Tensor real = disc_samples(rng, 2, 4);
  AugPlan plan;
  plan.r = 4;
  EXPECT_THROW(augment_dataset(real, disc_samples(rng, 6, 4), plan), ValidationError);
  plan.r = 3;
  EXPECT_THROW(augment_dataset(real, disc_samples(rng, 5, 4), plan), ValidationError);
}

TEST(Geo, IdentityUnchanged) {
  const Tensor s = ramp_sample();
  EXPECT_EQ(apply_geo(s, GeoTransform{}), s);
}

TEST(Geo, FlipInvolution) {
  const Tensor s = ramp_sample();
  GeoTransform t;
  t.flip = true;
  EXPECT_EQ(apply_geo(apply_geo(s, t), t), s);
  EXPECT_NE(apply_geo(s, t), s);
}

TEST(Geo, ShiftRoundTripInterior) {
  const Tensor s = ramp_sample();
  GeoTransform a, b;
  a.dy = 1;
  b.dy = -1;
  const Tensor back = apply_geo(apply_geo(s, a), b);
  for (int c = 0; c < 4; ++c) {
    for (int y = 1; y < 11; ++y) {
      for (int x = 0; x < 12; ++x) EXPECT_EQ(back.at({0, c, y, x}), s.at({0, c, y, x}));
    }
  }
}

TEST(Geo, MaskWarpedLikeImageAndBrightnessSparesMask) {
  Rng rng(7);
  const Tensor s = ramp_sample();
  for (int rep = 0; rep < 50; ++rep) {
    GeoTransform t = draw_geo(rng);
    ASSERT_LE(std::abs(t.dy), 3);
    ASSERT_GE(t.brightness, 0.9);
    ASSERT_LE(t.brightness, 1.1);
    const Tensor out = apply_geo(s, t);
    // Warp the mask as a color channel without brightness; must match bit-exactly.
    Tensor as_color = s;
    for (int i = 0; i < 144; ++i) as_color[static_cast<std::size_t>(i)] = s[static_cast<std::size_t>(3 * 144 + i)];
    GeoTransform spatial = t;
    spatial.brightness = 1.0;
    const Tensor ref = apply_geo(as_color, spatial);
    for (int i = 0; i < 144; ++i) ASSERT_EQ(out[static_cast<std::size_t>(3 * 144 + i)], ref[static_cast<std::size_t>(i)]);
  }
}

TEST(SegTrain, OverfitsOneSample) {
  Rng rng(8);
  const Tensor one = disc_samples(rng, 1);
  SegNet net(SegNetConfig{8, 1});
  SegTrainConfig cfg;
  cfg.augment = false;
  const auto r = train_seg(net, one, cfg);
  EXPECT_EQ(r.val_count, 0);
  EXPECT_GT(test_seg(net, one).dice, 0.95);
}

TEST(SegTrain, EmptyTargetsGiveEmptyPredictions) {
  Rng rng(9);
  Tensor data = disc_samples(rng, 6);
  for (int i = 0; i < 6; ++i) {
    for (std::size_t k = 0; k < 256; ++k) data[static_cast<std::size_t>(i) * 1024 + 768 + k] = -1.f;
  }
  SegNet net(SegNetConfig{8, 2});
  SegTrainConfig cfg;
  cfg.epochs = 10;
  train_seg(net, data, cfg);
  const auto e = test_seg(net, data);
  EXPECT_EQ(e.dice, 1.0);
  EXPECT_EQ(e.iou, 1.0);
}

TEST(SegTrain, DeterministicAndZeroLr) {
  Rng rng(10);
  const Tensor data = disc_samples(rng, 10);
  SegTrainConfig cfg;
  cfg.epochs = 3;
  SegNet a(SegNetConfig{4, 3}), b(SegNetConfig{4, 3});
  const auto ra = train_seg(a, data, cfg), rb = train_seg(b, data, cfg);
  EXPECT_EQ(ra.train_loss, rb.train_loss);
  EXPECT_EQ(ra.val_iou, rb.val_iou);
  EXPECT_EQ(ra.val_count, 2);
  cfg.learning_rate = 0.0;
  SegNet c(SegNetConfig{4, 3});
  train_seg(c, data, cfg);
  for (const auto& e : c.params().entries()) EXPECT_EQ(e.value, SegNet(SegNetConfig{4, 3}).params().value(e.name));
}

TEST(SegTrain, RestoresBestCheckpoint) {
  Rng rng(11);
  const Tensor data = disc_samples(rng, 20);
  SegNet net(SegNetConfig{8, 4});
  SegTrainConfig cfg;
  cfg.epochs = 6;
  const auto r = train_seg(net, data, cfg);
  const double best = *std::max_element(r.val_iou.begin(), r.val_iou.end());
  EXPECT_EQ(r.val_iou[static_cast<std::size_t>(r.best_epoch)], best);
  // Re-evaluating the restored net on the same validation rows gives the best value.
  Rng split(derive_seed(cfg.seed, "seg-train"));
  std::vector<int> order(20);
  for (int i = 0; i < 20; ++i) order[static_cast<std::size_t>(i)] = i;
  split.shuffle(order.begin(), order.end());
  std::vector<Tensor> val;
  for (int i = 0; i < 4; ++i) val.push_back(batch_slice(data, order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)] + 1));
  EXPECT_DOUBLE_EQ(test_seg(net, batch_concat(val)).iou, best);
}

TEST(SegTest, OracleAndEmptyPredictor) {
  Rng rng(12);
  const Tensor data = disc_samples(rng, 5);
  const Tensor gt = target_masks(data);
  Tensor oracle = gt;
  for (auto& v : oracle.data()) v = v > 0.5f ? 10.f : -10.f;
  auto e = test_seg([&](const Tensor&) { return oracle; }, data);
  EXPECT_EQ(e.dice, 1.0);
  EXPECT_EQ(e.iou, 1.0);
  e = test_seg([&](const Tensor&) { return Tensor::full(gt.dims(), -10.f); }, data);
  EXPECT_EQ(e.dice, 0.0);
  EXPECT_EQ(e.iou, 0.0);
}

TEST(SegTest, DiceAtLeastIouPerSample) {
  Rng rng(13);
  const Tensor data = disc_samples(rng, 12);
  SegNet net(SegNetConfig{4, 5});
  SegTrainConfig cfg;
  cfg.epochs = 2;
  train_seg(net, data, cfg);
  const auto e = test_seg(net, data);
  for (std::size_t i = 0; i < e.dices.size(); ++i) EXPECT_GE(e.dices[i], e.ious[i]);
}

TEST(SegTest, CheckpointRoundTripAndErrors) {
  Rng rng(14);
  const Tensor data = disc_samples(rng, 4);
  SegNet net(SegNetConfig{4, 6});
  const auto path = std::filesystem::temp_directory_path() / "lesiongen_segnet_test.ckpt";
  save_segnet(path, net);
  EXPECT_EQ(test_seg(path, data).iou, test_seg(net, data).iou);
  EXPECT_EQ(load_segnet(path).logits(channel_slice(data, 0, 3)), net.logits(channel_slice(data, 0, 3)));
  std::filesystem::remove(path);
  EXPECT_THROW(test_seg(net, data, 1.0), ValidationError);
  EXPECT_THROW(test_seg(net, Tensor()), ValidationError);
}

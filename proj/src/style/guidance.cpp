#include "lesiongen/style/guidance.hpp"

#include <algorithm>
#include <cmath>

namespace lesiongen {

template <typename T>
GuidanceGradient<T> guidance_gradient(const NoisePredictor& net, const BasicTensor<T>& x_t, int position,
                                      const RespacedSchedule& schedule, const StyleTargets& targets,
                                      const StyleWeights& weights, const FeatureExtractor& extractor, Rng rng) {
  if (x_t.rank() != 4 || x_t.dim(1) < 4) throw ShapeError("guidance: expects [N,4,H,W], got " + shape_string(x_t.dims()));
  BasicGraph<T> g;
  const NodeId x = g.variable(x_t);
  const std::vector<int> ts(static_cast<std::size_t>(x_t.dim(0)), schedule.model_timestep(position));
  const NodeId eps = net.record(g, x, ts);
  const double ab = schedule.chain.alpha_bar(position);
  const NodeId raw = g.scale(g.sub(x, g.scale(eps, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
  const NodeId x0 = clamp_node(g, raw, -kTweedieClamp, kTweedieClamp);
  const NodeId color = g.slice(x0, 1, 0, 3);
  const auto nodes = total_loss(g, color, targets, weights, extractor, rng);
  GuidanceGradient<T> out;
  out.terms = read_terms(g, nodes);
  out.x0hat = g.value(color).template cast<float>();
  const auto grads = g.backward(nodes.total);
  out.grad = grads.has(x) ? grads.at(x) : BasicTensor<T>::zeros(x_t.dims());
  return out;
}

template GuidanceGradient<float> guidance_gradient(const NoisePredictor&, const Tensor&, int, const RespacedSchedule&,
                                                   const StyleTargets&, const StyleWeights&, const FeatureExtractor&, Rng);
template GuidanceGradient<double> guidance_gradient(const NoisePredictor&, const TensorD&, int, const RespacedSchedule&,
                                                    const StyleTargets&, const StyleWeights&, const FeatureExtractor&,
                                                    Rng);

void set_channel(Tensor& x, int c, const Tensor& values) {
  if (x.rank() != 4 || values.rank() != 4 || values.dim(1) != 1 || values.dim(0) != x.dim(0) || values.dim(2) != x.dim(2) ||
      values.dim(3) != x.dim(3) || c < 0 || c >= x.dim(1)) {
    throw ShapeError("set_channel: " + shape_string(values.dims()) + " into channel " + std::to_string(c) + " of " +
                     shape_string(x.dims()));
  }
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  for (int b = 0; b < x.dim(0); ++b) {
    std::copy_n(values.data().data() + static_cast<std::size_t>(b) * hw, hw,
                x.data().data() + (static_cast<std::size_t>(b) * x.dim(1) + c) * hw);
  }
}

GuidedStep guided_reverse_step(const NoisePredictor& net, const Tensor& x_t, int position, StyleTargets& targets,
                               const Tensor& frozen_mask, const StyleWeights& weights, const FeatureExtractor& extractor,
                               const RespacedSchedule& schedule, RngStreams& rngs, Rng& loss_rng, VarianceMode mode) {
  GuidedStep out;
  out.x = reverse_step(net, x_t, position, schedule, rngs, mode);
  const Rng step_rng = loss_rng;
  loss_rng.next_u64();  // advance once per step regardless of the path taken
  if (!weights.all_zero()) {
    GuidanceGradient<float> gg;
    bool ok = true;
    try {
      gg = guidance_gradient(net, x_t, position, schedule, targets, weights, extractor, step_rng);
      ok = gg.grad.all_finite();
    } catch (const NumericError&) {
      ok = false;
    }
    if (ok) {
      out.terms = gg.terms;
      const int n = x_t.dim(0), c = x_t.dim(1);
      const std::size_t hw = static_cast<std::size_t>(x_t.dim(2)) * x_t.dim(3);
      for (int b = 0; b < n; ++b) {
        const std::size_t base = static_cast<std::size_t>(b) * c * hw;
        double sq = 0.0;
        for (std::size_t i = 0; i < 3 * hw; ++i) sq += double(gg.grad[base + i]) * gg.grad[base + i];
        const double norm = std::sqrt(sq);
        out.grad_norms.push_back(norm);
        const double clip = norm > weights.clip_norm && norm > 0 ? weights.clip_norm / norm : 1.0;
        const double k = weights.step_scale * clip;
        for (std::size_t i = 0; i < 3 * hw; ++i) out.x[base + i] = static_cast<float>(out.x[base + i] - k * gg.grad[base + i]);
      }
      targets.prev_x0 = std::move(gg.x0hat);
    } else {
      out.skipped = true;
    }
  }
  set_channel(out.x, 3, frozen_mask);
  return out;
}

Tensor stylize(const NoisePredictor& net, const Tensor& inpainted, const Tensor& source, const RespacedSchedule& schedule,
               const StyleWeights& weights, const FeatureExtractor& extractor, std::uint64_t seed, int first_index,
               VarianceMode mode, StylizeReport* report) {
  if (inpainted.dims() != source.dims() || inpainted.rank() != 4 || inpainted.dim(1) != 4) {
    throw ShapeError("stylize: inpainted " + shape_string(inpainted.dims()) + " and source " + shape_string(source.dims()) +
                     " must both be [N,4,H,W]");
  }
  weights.validate();
  const int n = inpainted.dim(0);
  const int start = schedule.start_position();
  if (start < 1) throw ValidationError("stylize: chain start must be >= 1");
  RngStreams rngs = make_streams(seed, "stylize", n, first_index);
  Rng loss_rng(derive_seed(seed, "stylize-loss", static_cast<std::uint64_t>(first_index)));

  const Tensor mask = channel_slice(inpainted, 3, 4);
  StyleTargets targets{channel_slice(inpainted, 0, 3), channel_slice(source, 0, 3), std::nullopt};

  // Starting point: forward-noised inpainted image, one noise draw per chain.
  Tensor eps(inpainted.dims());
  const std::size_t per = inpainted.size() / static_cast<std::size_t>(n);
  for (int b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < per; ++i) eps[static_cast<std::size_t>(b) * per + i] = static_cast<float>(rngs[static_cast<std::size_t>(b)].normal());
  }
  Tensor x = forward_sample(inpainted, start, eps, schedule.chain);
  // The denoiser was trained with all four channels at one noise level, so the
  // frozen mask re-enters every step noised to that step's level.
  const std::size_t hw = per / 4;
  Tensor mask_eps(mask.dims());
  for (int pos = start; pos >= 1; --pos) {
    GuidedStep step = guided_reverse_step(net, x, pos, targets, mask, weights, extractor, schedule, rngs, loss_rng, mode);
    if (report) {
      report->steps.push_back(step.terms);
      report->skipped_steps += step.skipped ? 1 : 0;
    }
    x = std::move(step.x);
    if (pos > 1) {
      for (int b = 0; b < n; ++b) {
        for (std::size_t i = 0; i < hw; ++i) mask_eps[static_cast<std::size_t>(b) * hw + i] = static_cast<float>(rngs[static_cast<std::size_t>(b)].normal());
      }
      set_channel(x, 3, forward_sample(mask, pos - 1, mask_eps, schedule.chain));
    }
  }
  for (int b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < 3 * per / 4; ++i) {
      float& v = x[static_cast<std::size_t>(b) * per + i];
      v = std::clamp(v, -1.0f, 1.0f);
    }
  }
  set_channel(x, 3, mask);
  return x;
}

}  // namespace lesiongen

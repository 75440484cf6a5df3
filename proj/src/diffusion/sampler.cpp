#include "lesiongen/diffusion/sampler.hpp"

#include <algorithm>
#include <cmath>

namespace lesiongen {

namespace {

void require_same(const char* what, const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.dims()) + " vs " + shape_string(b.dims()));
  }
}

}  // namespace

RngStreams make_streams(std::uint64_t seed, std::string_view stage, int count, int first_index) {
  RngStreams out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.emplace_back(derive_seed(seed, stage, static_cast<std::uint64_t>(first_index + i)));
  return out;
}

Tensor forward_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
  require_same("forward_sample", x0, eps);
  if (t == 0) return x0;
  const double ab = schedule.alpha_bar(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out(x0.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(a * x0[i] + b * eps[i]);
  return out;
}

Tensor predict_mean(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& schedule) {
  require_same("predict_mean", x_t, eps_hat);
  const double alpha = schedule.alpha(t);
  const double coef = (1.0 - alpha) / std::sqrt(1.0 - schedule.alpha_bar(t));
  const double inv = 1.0 / std::sqrt(alpha);
  Tensor out(x_t.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(inv * (x_t[i] - coef * eps_hat[i]));
  return out;
}

Tensor tweedie_x0(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& schedule, bool clamp) {
  require_same("tweedie_x0", x_t, eps_hat);
  const double ab = schedule.alpha_bar(t);
  if (!(ab > 0.0)) throw NumericError("tweedie_x0: alpha_bar is zero at t=" + std::to_string(t));
  const double a = 1.0 / std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out(x_t.dims());
  for (std::size_t i = 0; i < out.size(); ++i) {
    float v = static_cast<float>(a * (x_t[i] - b * eps_hat[i]));
    if (clamp) v = std::clamp(v, -kTweedieClamp, kTweedieClamp);
    out[i] = v;
  }
  return out;
}

Tensor reverse_step_from_eps(const Tensor& x_t, int position, const Tensor& eps_hat, const RespacedSchedule& schedule,
                             RngStreams& rngs, VarianceMode mode) {
  Tensor mean = predict_mean(x_t, position, eps_hat, schedule.chain);
  if (mode == VarianceMode::None || position == 1) return mean;
  const double sigma = schedule.chain.sigma(position, mode);
  const int n = x_t.dim(0);
  if (static_cast<int>(rngs.size()) != n) throw ValidationError("reverse_step: need one rng stream per batch item");
  const std::size_t per = x_t.size() / static_cast<std::size_t>(n);
  for (int b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t k = static_cast<std::size_t>(b) * per + i;
      mean[k] = static_cast<float>(mean[k] + sigma * rngs[static_cast<std::size_t>(b)].normal());
    }
  }
  return mean;
}

Tensor reverse_step(const NoisePredictor& model, const Tensor& x_t, int position, const RespacedSchedule& schedule,
                    RngStreams& rngs, VarianceMode mode) {
  if (x_t.rank() != 4) throw ShapeError("reverse_step: expects [N,C,H,W], got " + shape_string(x_t.dims()));
  const std::vector<int> ts(static_cast<std::size_t>(x_t.dim(0)), schedule.model_timestep(position));
  const Tensor eps_hat = model.predict(x_t, ts);
  return reverse_step_from_eps(x_t, position, eps_hat, schedule, rngs, mode);
}

Tensor sample(const NoisePredictor& model, const RespacedSchedule& schedule, int count, std::uint64_t seed,
              const SampleOptions& options) {
  if (count < 1) throw ValidationError("sample: count must be >= 1");
  const int bs = std::max(1, options.batch_size);
  std::vector<Tensor> parts;
  for (int begin = 0; begin < count; begin += bs) {
    const int n = std::min(bs, count - begin);
    RngStreams rngs = make_streams(seed, "sample", n, begin);
    Tensor x({n, options.channels, options.height, options.width});
    const std::size_t per = x.size() / static_cast<std::size_t>(n);
    for (int b = 0; b < n; ++b) {
      for (std::size_t i = 0; i < per; ++i) x[static_cast<std::size_t>(b) * per + i] = static_cast<float>(rngs[static_cast<std::size_t>(b)].normal());
    }
    for (int pos = schedule.length(); pos >= 1; --pos) x = reverse_step(model, x, pos, schedule, rngs, options.variance);
    clamp_inplace(x, -1.0f, 1.0f);
    parts.push_back(std::move(x));
  }
  return batch_concat(parts);
}

Tensor batch_slice(const Tensor& batch, int begin, int end) {
  if (batch.rank() < 1 || begin < 0 || end > batch.dim(0) || begin >= end) {
    throw ShapeError("batch_slice: invalid range on " + shape_string(batch.dims()));
  }
  const std::size_t per = batch.size() / static_cast<std::size_t>(batch.dim(0));
  Shape d = batch.dims();
  d[0] = end - begin;
  std::vector<float> data(batch.data().begin() + static_cast<std::ptrdiff_t>(per * begin),
                          batch.data().begin() + static_cast<std::ptrdiff_t>(per * end));
  return Tensor(std::move(d), std::move(data));
}

Tensor batch_concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("batch_concat: no parts");
  Shape item = parts[0].dims();
  item[0] = 0;
  Shape d = item;
  std::vector<float> data;
  for (const auto& p : parts) {
    Shape pd = p.dims();
    pd[0] = 0;
    if (pd != item) throw ShapeError("batch_concat: mismatched item shapes");
    d[0] += p.dim(0);
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  return Tensor(std::move(d), std::move(data));
}

void clamp_inplace(Tensor& t, float lo, float hi) {
  for (auto& v : t.data()) v = std::clamp(v, lo, hi);
}

}  // namespace lesiongen

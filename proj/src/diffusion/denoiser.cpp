#include "lesiongen/diffusion/denoiser.hpp"

#include <cmath>
#include <string>

#include "lesiongen/rng.hpp"

namespace lesiongen {

namespace {

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for small convnets.
Tensor uniform_init(Rng& rng, Shape dims, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(dims));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

void add_conv(ParamSet& ps, Rng& rng, const std::string& name, int out, int in, bool zero = false) {
  if (zero) {
    ps.add(name + ".w", Tensor::zeros({out, in, 3, 3}));
  } else {
    ps.add(name + ".w", uniform_init(rng, {out, in, 3, 3}, in * 9));
  }
  ps.add(name + ".b", Tensor::zeros({out}));
}

void add_norm(ParamSet& ps, const std::string& name, int ch) {
  ps.add(name + ".g", Tensor::ones({ch}));
  ps.add(name + ".b", Tensor::zeros({ch}));
}

void add_linear(ParamSet& ps, Rng& rng, const std::string& name, int in, int out, bool zero = false) {
  ps.add(name + ".w", zero ? Tensor::zeros({in, out}) : uniform_init(rng, {in, out}, in));
  ps.add(name + ".b", Tensor::zeros({1, out}));
}

void add_resblock(ParamSet& ps, Rng& rng, const std::string& name, int ch, int time_dim) {
  add_norm(ps, name + ".norm1", ch);
  add_conv(ps, rng, name + ".conv1", ch, ch);
  add_linear(ps, rng, name + ".temb", time_dim, ch);
  add_norm(ps, name + ".norm2", ch);
  add_conv(ps, rng, name + ".conv2", ch, ch);
}

template <typename T>
struct Builder {
  BasicGraph<T>& g;
  const ParamBinding<T>& p;

  NodeId conv(NodeId x, const std::string& name) { return g.conv2d(x, p[name + ".w"], p[name + ".b"], 1, 1); }

  NodeId norm(NodeId x, const std::string& name) { return g.group_norm(x, p[name + ".g"], p[name + ".b"]); }

  NodeId linear(NodeId x, const std::string& name) {
    const NodeId y = g.matmul(x, p[name + ".w"]);
    return g.add(y, g.expand(p[name + ".b"], g.dims(y)));
  }

  NodeId resblock(NodeId x, NodeId temb, const std::string& name) {
    const Shape d = g.dims(x);
    NodeId h = conv(g.silu(norm(x, name + ".norm1")), name + ".conv1");
    NodeId t = g.reshape(linear(temb, name + ".temb"), {d[0], d[1], 1, 1});
    h = g.add(h, g.expand(t, d));
    h = conv(g.silu(norm(h, name + ".norm2")), name + ".conv2");
    return g.add(x, h);
  }
};

}  // namespace

Tensor timestep_embedding(std::span<const int> timesteps, int dim) {
  if (dim % 2) throw ValidationError("timestep embedding dim must be even");
  const int half = dim / 2;
  Tensor out({static_cast<int>(timesteps.size()), dim});
  for (std::size_t n = 0; n < timesteps.size(); ++n) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double a = timesteps[n] * freq;
      out[n * dim + i] = static_cast<float>(std::sin(a));
      out[n * dim + half + i] = static_cast<float>(std::cos(a));
    }
  }
  return out;
}

DenoiserNet::DenoiserNet(DenoiserConfig config) : config_(config) { init_params(); }

DenoiserNet::DenoiserNet(DenoiserConfig config, ParamSet params) : config_(config), params_(std::move(params)) {
  DenoiserNet reference(config_);
  for (const auto& e : reference.params().entries()) {
    if (!params_.contains(e.name)) throw ValidationError("denoiser checkpoint lacks parameter '" + e.name + "'");
    if (params_.value(e.name).dims() != e.value.dims()) {
      throw ShapeError("denoiser parameter '" + e.name + "' has dims " + shape_string(params_.value(e.name).dims()) +
                       ", expected " + shape_string(e.value.dims()));
    }
  }
  if (params_.size() != reference.params().size()) throw ValidationError("denoiser checkpoint has unexpected parameters");
}

void DenoiserNet::init_params() {
  Rng rng(derive_seed(config_.init_seed, "denoiser-init"));
  const int c = config_.base_channels;
  const int td = config_.time_dim;
  if (c < 1 || td < 2 || config_.image_channels < 1) throw ValidationError("invalid denoiser config");
  add_linear(params_, rng, "time.fc1", td, td);
  add_linear(params_, rng, "time.fc2", td, td);
  add_conv(params_, rng, "conv_in", c, config_.image_channels);
  add_resblock(params_, rng, "enc1", c, td);
  add_conv(params_, rng, "down1", 2 * c, c);
  add_resblock(params_, rng, "enc2", 2 * c, td);
  add_resblock(params_, rng, "mid", 2 * c, td);
  add_conv(params_, rng, "up2", 2 * c, 4 * c);
  add_resblock(params_, rng, "dec2", 2 * c, td);
  add_conv(params_, rng, "up1", c, 3 * c);
  add_resblock(params_, rng, "dec1", c, td);
  add_norm(params_, "out_norm", c);
  add_conv(params_, rng, "conv_out", config_.image_channels, c, /*zero=*/true);
  add_linear(params_, rng, "skip", td, config_.image_channels, /*zero=*/true);
}

template <typename T>
DenoiserTaps DenoiserNet::forward(BasicGraph<T>& g, const ParamBinding<T>& p, NodeId x, std::span<const int> timesteps) const {
  const Shape d = g.dims(x);
  if (d.size() != 4 || d[1] != config_.image_channels) {
    throw ShapeError("denoiser expects [N," + std::to_string(config_.image_channels) + ",H,W], got " + shape_string(d));
  }
  if (d[2] % 4 || d[3] % 4) throw ShapeError("denoiser spatial dims must be divisible by 4, got " + shape_string(d));
  if (static_cast<int>(timesteps.size()) != d[0]) throw ShapeError("denoiser: one timestep per batch item required");

  Builder<T> b{g, p};
  NodeId temb = g.constant(timestep_embedding(timesteps, config_.time_dim).template cast<T>());
  temb = b.linear(g.silu(b.linear(temb, "time.fc1")), "time.fc2");
  temb = g.silu(temb);

  const NodeId h0 = b.conv(x, "conv_in");
  const NodeId e1 = b.resblock(h0, temb, "enc1");
  const NodeId e2 = b.resblock(b.conv(g.mean_pool2x2(e1), "down1"), temb, "enc2");
  const NodeId mid = b.resblock(g.mean_pool2x2(e2), temb, "mid");

  const NodeId u2_in[] = {g.upsample_nearest(mid), e2};
  const NodeId d2 = b.resblock(b.conv(g.concat(u2_in, 1), "up2"), temb, "dec2");
  const NodeId u1_in[] = {g.upsample_nearest(d2), e1};
  const NodeId d1 = b.resblock(b.conv(g.concat(u1_in, 1), "up1"), temb, "dec1");
  // The normalized path drops per-channel spatial means, so the input reaches
  // the output through a per-channel gain s(t).
  const NodeId gain = g.expand(g.reshape(b.linear(temb, "skip"), {d[0], d[1], 1, 1}), d);
  const NodeId out = g.add(b.conv(g.silu(b.norm(d1, "out_norm")), "conv_out"), g.mul(gain, x));

  const Shape md = g.dims(mid);
  NodeId token = g.sum_axis(g.reshape(mid, {md[0], md[1], md[2] * md[3]}), 2, /*keepdim=*/false);
  token = g.scale(token, 1.0 / (md[2] * md[3]));
  return DenoiserTaps{out, {e1, e2, mid}, token};
}

Tensor DenoiserNet::predict(const Tensor& x_t, std::span<const int> timesteps) const {
  Graph g;
  const ParamBinding<float> p(params_, g, false);
  const NodeId x = g.constant(x_t);
  return g.value(forward(g, p, x, timesteps).eps);
}

NodeId DenoiserNet::record(Graph& g, NodeId x_t, std::span<const int> timesteps) const {
  const ParamBinding<float> p(params_, g, false);
  return forward(g, p, x_t, timesteps).eps;
}

NodeId DenoiserNet::record(GraphD& g, NodeId x_t, std::span<const int> timesteps) const {
  const ParamBinding<double> p(params_, g, false);
  return forward(g, p, x_t, timesteps).eps;
}

template DenoiserTaps DenoiserNet::forward(Graph&, const ParamBinding<float>&, NodeId, std::span<const int>) const;
template DenoiserTaps DenoiserNet::forward(GraphD&, const ParamBinding<double>&, NodeId, std::span<const int>) const;

}  // namespace lesiongen

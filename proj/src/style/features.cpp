#include "lesiongen/style/features.hpp"

#include <cmath>

#include "lesiongen/rng.hpp"

namespace lesiongen {

std::string to_string(ExtractorMode mode) {
  return mode == ExtractorMode::SeededRandomConv ? "seeded-random-conv" : "denoiser-taps";
}

ExtractorMode parse_extractor_mode(const std::string& s) {
  if (s == "seeded-random-conv") return ExtractorMode::SeededRandomConv;
  if (s == "denoiser-taps") return ExtractorMode::DenoiserTaps;
  throw ValidationError("unknown extractor mode '" + s + "'");
}

FeatureExtractor::FeatureExtractor(ExtractorConfig config) : config_(std::move(config)) {
  if (config_.mode != ExtractorMode::SeededRandomConv) throw ValidationError("denoiser-taps extractor needs a denoiser");
  if (config_.widths.empty()) throw ValidationError("extractor needs at least one layer");
  Rng rng(derive_seed(config_.seed, "extractor"));
  int in = 3;
  for (std::size_t l = 0; l < config_.widths.size(); ++l) {
    const int out = config_.widths[l];
    if (out < 1) throw ValidationError("extractor layer widths must be positive");
    Tensor w({out, in, 3, 3});
    const double sd = std::sqrt(2.0 / (in * 9));
    for (auto& v : w.data()) v = static_cast<float>(sd * rng.normal());
    Tensor b({out});
    for (auto& v : b.data()) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    weights_.add("l" + std::to_string(l) + ".w", std::move(w));
    weights_.add("l" + std::to_string(l) + ".b", std::move(b));
    in = out;
  }
}

FeatureExtractor::FeatureExtractor(ExtractorConfig config, const DenoiserNet& net) : config_(std::move(config)), net_(&net) {
  config_.mode = ExtractorMode::DenoiserTaps;
  if (config_.tap_timestep < 1) throw ValidationError("tap timestep must be >= 1");
}

int FeatureExtractor::token_dim() const {
  if (net_) return 2 * net_->config().base_channels;
  return config_.widths.back();
}

template <typename T>
FeatureNodes FeatureExtractor::record(BasicGraph<T>& g, NodeId image) const {
  const Shape d = g.dims(image);
  if (d.size() != 4 || d[1] != 3) throw ShapeError("feature extractor expects [N,3,H,W], got " + shape_string(d));
  FeatureNodes out;
  if (net_) {
    const NodeId mask = g.constant(BasicTensor<T>::full({d[0], 1, d[2], d[3]}, T(-1)));
    const NodeId parts[] = {image, mask};
    const NodeId x = g.concat(parts, 1);
    const ParamBinding<T> p(net_->params(), g, false);
    const std::vector<int> ts(static_cast<std::size_t>(d[0]), config_.tap_timestep);
    const auto taps = net_->forward(g, p, x, ts);
    out.layers = taps.features;
    out.token = taps.token;
    return out;
  }
  NodeId h = image;
  for (std::size_t l = 0; l < config_.widths.size(); ++l) {
    if (l > 0) h = g.mean_pool2x2(h);
    const std::string n = "l" + std::to_string(l);
    const NodeId w = g.constant(weights_.value(n + ".w").template cast<T>());
    const NodeId b = g.constant(weights_.value(n + ".b").template cast<T>());
    h = g.silu(g.conv2d(h, w, b, 1, 1));
    out.layers.push_back(h);
  }
  const Shape hd = g.dims(h);
  const NodeId flat = g.reshape(h, {hd[0], hd[1], hd[2] * hd[3]});
  out.token = g.scale(g.sum_axis(flat, 2, false), 1.0 / (hd[2] * hd[3]));
  return out;
}

Tensor FeatureExtractor::tokens(const Tensor& image) const {
  Graph g;
  const auto f = record(g, g.constant(image));
  return g.value(f.token);
}

std::vector<Tensor> FeatureExtractor::layers(const Tensor& image) const {
  Graph g;
  const auto f = record(g, g.constant(image));
  std::vector<Tensor> out;
  for (NodeId id : f.layers) out.push_back(g.value(id));
  return out;
}

template FeatureNodes FeatureExtractor::record(Graph&, NodeId) const;
template FeatureNodes FeatureExtractor::record(GraphD&, NodeId) const;

Tensor channel_slice(const Tensor& x, int begin, int end) {
  if (x.rank() != 4 || begin < 0 || end > x.dim(1) || begin >= end) {
    throw ShapeError("channel_slice: bad range [" + std::to_string(begin) + "," + std::to_string(end) + ") on " +
                     shape_string(x.dims()));
  }
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor out({n, end - begin, x.dim(2), x.dim(3)});
  for (int b = 0; b < n; ++b) {
    std::copy_n(x.data().data() + (static_cast<std::size_t>(b) * c + begin) * hw, (end - begin) * hw,
                out.data().data() + static_cast<std::size_t>(b) * (end - begin) * hw);
  }
  return out;
}

}  // namespace lesiongen

#include "lesiongen/style/losses.hpp"

#include <cmath>

namespace lesiongen {

void StyleWeights::validate() const {
  for (double w : {zecon, vgg, mse, sty, l2, sem, rng, step_scale, clip_norm}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("style weights must be finite and >= 0");
  }
  if (!(temperature > 0.0)) throw ValidationError("contrastive temperature must be > 0");
  if (zecon_locations < 1) throw ValidationError("contrastive location count must be >= 1");
}

bool StyleWeights::all_zero() const {
  return zecon == 0 && vgg == 0 && sty == 0 && effective_l2() == 0 && sem == 0 && rng == 0;
}

StyleWeights StyleWeights::zeros() {
  StyleWeights w;
  w.zecon = w.vgg = w.mse = w.sty = w.l2 = w.sem = w.rng = 0.0;
  return w;
}

ZeconPlan draw_zecon_plan(const std::vector<Shape>& layer_dims, int locations, Rng& rng) {
  ZeconPlan plan;
  for (const auto& d : layer_dims) {
    if (d.size() != 4) throw ShapeError("zecon: layer must be [N,C,H,W], got " + shape_string(d));
    const int hw = d[2] * d[3];
    if (hw < 1) throw ShapeError("zecon: layer has no spatial locations");
    plan.push_back(rng.sample_without_replacement(hw, std::min(locations, hw)));
  }
  return plan;
}

template <typename T>
NodeId zecon_loss(BasicGraph<T>& g, const std::vector<NodeId>& fx, const std::vector<NodeId>& fx0, const ZeconPlan& plan,
                  double temperature) {
  if (fx.empty() || fx.size() != fx0.size() || plan.size() != fx.size()) {
    throw ShapeError("zecon: need matching non-empty layer lists");
  }
  // L2-normalize each location vector over channels: [N, C, S].
  auto pick = [&](NodeId f, const std::vector<int>& locs) {
    const Shape d = g.dims(f);
    const NodeId flat = g.index_select(g.reshape(f, {d[0], d[1], d[2] * d[3]}), 2, locs);
    const NodeId sq = g.sum_axis(g.mul(flat, flat), 1, true);
    const NodeId norm = g.sqrt(g.add_scalar(sq, 1e-12));
    return g.div(flat, g.expand(norm, g.dims(flat)));
  };
  std::vector<NodeId> terms;
  for (std::size_t l = 0; l < fx.size(); ++l) {
    const Shape d = g.dims(fx[l]);
    if (g.dims(fx0[l]) != d) throw ShapeError("zecon: layer " + std::to_string(l) + " shapes differ");
    const auto& locs = plan[l];
    const int s = static_cast<int>(locs.size());
    const NodeId q = pick(fx[l], locs);
    const NodeId k = pick(fx0[l], locs);
    std::vector<int> targets(static_cast<std::size_t>(s));
    for (int i = 0; i < s; ++i) targets[static_cast<std::size_t>(i)] = i;
    NodeId layer_sum{};
    for (int b = 0; b < d[0]; ++b) {
      const NodeId qb = g.reshape(g.slice(q, 0, b, b + 1), {d[1], s});
      const NodeId kb = g.reshape(g.slice(k, 0, b, b + 1), {d[1], s});
      const NodeId logits = g.scale(g.matmul(g.transpose(qb), kb), 1.0 / temperature);
      const NodeId ce = g.softmax_cross_entropy(logits, targets);
      layer_sum = b == 0 ? ce : g.add(layer_sum, ce);
    }
    terms.push_back(g.scale(layer_sum, 1.0 / d[0]));
  }
  NodeId total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = g.add(total, terms[i]);
  return total;
}

template <typename T>
NodeId content_feature_loss(BasicGraph<T>& g, const std::vector<NodeId>& fx, const std::vector<NodeId>& fx0) {
  if (fx.empty() || fx.size() != fx0.size()) throw ShapeError("content loss: need matching non-empty layer lists");
  NodeId total{};
  for (std::size_t l = 0; l < fx.size(); ++l) {
    const NodeId d = g.sub(fx[l], fx0[l]);
    const NodeId m = g.mean(g.mul(d, d));
    total = l == 0 ? m : g.add(total, m);
  }
  return g.scale(total, 1.0 / static_cast<double>(fx.size()));
}

template <typename T>
NodeId token_distance(BasicGraph<T>& g, NodeId a, NodeId b) {
  const NodeId d = g.sub(a, b);
  return g.mean(g.sqrt(g.sum_axis(g.mul(d, d), 1, false)));
}

template <typename T>
NodeId pixel_l2_loss(BasicGraph<T>& g, NodeId a, NodeId b) {
  const NodeId d = g.sub(a, b);
  return g.mean(g.mul(d, d));
}

template <typename T>
NodeId range_loss(BasicGraph<T>& g, NodeId x) {
  const NodeId over = g.relu(g.add_scalar(g.abs(x), -1.0));
  return g.mean(g.mul(over, over));
}

template <typename T>
NodeId clamp_node(BasicGraph<T>& g, NodeId x, double lo, double hi) {
  const NodeId above = g.relu(g.add_scalar(x, -hi));
  const NodeId below = g.relu(g.scale(g.add_scalar(x, -lo), -1.0));
  return g.add(g.sub(x, above), below);
}

template <typename T>
TotalLossNodes total_loss(BasicGraph<T>& g, NodeId x0hat, const StyleTargets& targets, const StyleWeights& weights,
                          const FeatureExtractor& extractor, Rng rng) {
  weights.validate();
  const Shape d = g.dims(x0hat);
  if (targets.content.dims() != d || targets.style.dims() != d) {
    throw ShapeError("total_loss: targets " + shape_string(targets.content.dims()) + "/" + shape_string(targets.style.dims()) +
                     " do not match prediction " + shape_string(d));
  }
  const NodeId content = g.constant(targets.content.template cast<T>());
  const NodeId style = g.constant(targets.style.template cast<T>());
  const FeatureNodes fx = extractor.record(g, x0hat);
  const FeatureNodes fc = extractor.record(g, content);
  const FeatureNodes fs = extractor.record(g, style);

  std::vector<Shape> layer_dims;
  for (NodeId id : fx.layers) layer_dims.push_back(g.dims(id));
  const ZeconPlan plan = draw_zecon_plan(layer_dims, weights.zecon_locations, rng);

  TotalLossNodes n{};
  n.zecon = zecon_loss(g, fx.layers, fc.layers, plan, weights.temperature);
  n.vgg = content_feature_loss(g, fx.layers, fc.layers);
  n.sty = token_distance(g, fx.token, fs.token);
  n.l2 = pixel_l2_loss(g, x0hat, style);
  if (targets.prev_x0) {
    if (targets.prev_x0->dims() != d) throw ShapeError("total_loss: cached prediction has wrong dims");
    const FeatureNodes fp = extractor.record(g, g.constant(targets.prev_x0->template cast<T>()));
    n.sem = g.scale(token_distance(g, fp.token, fx.token), -1.0);
  } else {
    n.sem = g.constant(BasicTensor<T>::scalar(T(0)));
  }
  n.rng = range_loss(g, x0hat);

  NodeId total = g.scale(n.zecon, weights.zecon);
  total = g.add(total, g.scale(n.vgg, weights.vgg));
  total = g.add(total, g.scale(n.sty, weights.sty));
  total = g.add(total, g.scale(n.l2, weights.effective_l2()));
  total = g.add(total, g.scale(n.sem, weights.sem));
  total = g.add(total, g.scale(n.rng, weights.rng));
  n.total = total;
  return n;
}

template <typename T>
TermValues read_terms(const BasicGraph<T>& g, const TotalLossNodes& n) {
  TermValues v;
  const std::pair<const char*, std::pair<NodeId, double*>> fields[] = {
      {"zecon", {n.zecon, &v.zecon}}, {"vgg", {n.vgg, &v.vgg}}, {"sty", {n.sty, &v.sty}},         {"l2", {n.l2, &v.l2}},
      {"sem", {n.sem, &v.sem}},       {"rng", {n.rng, &v.rng}}, {"total", {n.total, &v.total}},
  };
  for (const auto& [name, slot] : fields) {
    const double x = static_cast<double>(g.value(slot.first).item());
    if (!std::isfinite(x)) throw NumericError(std::string("style loss term '") + name + "' is not finite");
    *slot.second = x;
  }
  return v;
}

#define LESIONGEN_INSTANTIATE(T)                                                                                          \
  template NodeId zecon_loss(BasicGraph<T>&, const std::vector<NodeId>&, const std::vector<NodeId>&, const ZeconPlan&,  \
                             double);                                                                                     \
  template NodeId content_feature_loss(BasicGraph<T>&, const std::vector<NodeId>&, const std::vector<NodeId>&);          \
  template NodeId token_distance(BasicGraph<T>&, NodeId, NodeId);                                                         \
  template NodeId pixel_l2_loss(BasicGraph<T>&, NodeId, NodeId);                                                          \
  template NodeId range_loss(BasicGraph<T>&, NodeId);                                                                     \
  template NodeId clamp_node(BasicGraph<T>&, NodeId, double, double);                                                     \
  template TotalLossNodes total_loss(BasicGraph<T>&, NodeId, const StyleTargets&, const StyleWeights&,                  \
                                     const FeatureExtractor&, Rng);                                                       \
  template TermValues read_terms(const BasicGraph<T>&, const TotalLossNodes&);

LESIONGEN_INSTANTIATE(float)
LESIONGEN_INSTANTIATE(double)
#undef LESIONGEN_INSTANTIATE

double zecon_loss(const Tensor& x, const Tensor& x0, const FeatureExtractor& extractor, Rng& rng, double temperature,
                  int locations) {
  Graph g;
  const auto fx = extractor.record(g, g.constant(x));
  const auto f0 = extractor.record(g, g.constant(x0));
  std::vector<Shape> dims;
  for (NodeId id : fx.layers) dims.push_back(g.dims(id));
  const auto plan = draw_zecon_plan(dims, locations, rng);
  return g.value(zecon_loss(g, fx.layers, f0.layers, plan, temperature)).item();
}

double content_feature_loss(const Tensor& x, const Tensor& x0, const FeatureExtractor& extractor) {
  Graph g;
  const auto fx = extractor.record(g, g.constant(x));
  const auto f0 = extractor.record(g, g.constant(x0));
  return g.value(content_feature_loss(g, fx.layers, f0.layers)).item();
}

double style_token_loss(const Tensor& x, const Tensor& x_src, const FeatureExtractor& extractor) {
  Graph g;
  const auto fx = extractor.record(g, g.constant(x));
  const auto fs = extractor.record(g, g.constant(x_src));
  return g.value(token_distance(g, fs.token, fx.token)).item();
}

double semantic_accel_loss(const Tensor& x0_t, const std::optional<Tensor>& x0_prev, const FeatureExtractor& extractor) {
  if (!x0_prev) return 0.0;
  return -style_token_loss(x0_t, *x0_prev, extractor);
}

double pixel_l2_loss(const Tensor& a, const Tensor& b) {
  Graph g;
  return g.value(pixel_l2_loss(g, g.constant(a), g.constant(b))).item();
}

double range_loss(const Tensor& x) {
  Graph g;
  return g.value(range_loss(g, g.constant(x))).item();
}

TermValues total_loss(const Tensor& x0hat, const StyleTargets& targets, const StyleWeights& weights,
                      const FeatureExtractor& extractor, Rng rng) {
  Graph g;
  const auto n = total_loss(g, g.constant(x0hat), targets, weights, extractor, rng);
  return read_terms(g, n);
}

}  // namespace lesiongen

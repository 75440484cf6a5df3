#pragma once

// One entry per differentiable op, for central-difference gradient checks.

#include <functional>

#include "lesiongen/rng.hpp"
#include "lesiongen/tensor/graph.hpp"

namespace lesiongen::oracle {

inline TensorD random_tensor(Rng& rng, Shape dims, double lo = -2.0, double hi = 2.0) {
  TensorD t(std::move(dims));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Weighted sum with fixed random weights so every output coordinate matters.
inline NodeId weighted_sum(GraphD& g, NodeId y, std::uint64_t seed) {
  Rng rng(seed);
  const NodeId w = g.constant(random_tensor(rng, g.dims(y), 0.5, 1.5));
  return g.sum(g.mul(y, w));
}

struct OpCase {
  const char* name;
  Shape input;
  std::function<NodeId(GraphD&, NodeId, Rng&)> build;
};

inline NodeId other(GraphD& g, NodeId x, Rng& rng, double lo = -2.0, double hi = 2.0) {
  return g.constant(random_tensor(rng, g.dims(x), lo, hi));
}

inline std::vector<OpCase> op_cases() {
  return {
    OpCase{"add", {3, 4}, [](GraphD& g, NodeId x, Rng& r) { return g.add(x, other(g, x, r)); }},
    OpCase{"sub", {3, 4}, [](GraphD& g, NodeId x, Rng& r) { return g.sub(other(g, x, r), x); }},
    OpCase{"mul", {3, 4}, [](GraphD& g, NodeId x, Rng& r) { return g.mul(x, other(g, x, r)); }},
    OpCase{"div_num", {3, 4}, [](GraphD& g, NodeId x, Rng& r) { return g.div(x, other(g, x, r, 0.5, 2.0)); }},
    OpCase{"div_den", {3, 4}, [](GraphD& g, NodeId x, Rng& r) { return g.div(other(g, x, r), g.add_scalar(g.abs(x), 0.5)); }},
    OpCase{"scale", {5}, [](GraphD& g, NodeId x, Rng&) { return g.scale(x, -1.7); }},
    OpCase{"add_scalar", {5}, [](GraphD& g, NodeId x, Rng&) { return g.add_scalar(x, 0.3); }},
    OpCase{"matmul_left", {3, 4}, [](GraphD& g, NodeId x, Rng& r) { return g.matmul(x, g.constant(random_tensor(r, {4, 2}))); }},
    OpCase{"matmul_right", {4, 2}, [](GraphD& g, NodeId x, Rng& r) { return g.matmul(g.constant(random_tensor(r, {3, 4})), x); }},
    OpCase{"transpose", {3, 5}, [](GraphD& g, NodeId x, Rng&) { return g.transpose(x); }},
    OpCase{"conv2d_input", {2, 2, 5, 5},
           [](GraphD& g, NodeId x, Rng& r) { return g.conv2d(x, g.constant(random_tensor(r, {3, 2, 3, 3})), g.constant(random_tensor(r, {3})), 1, 1); }},
    OpCase{"conv2d_weight", {3, 2, 3, 3},
           [](GraphD& g, NodeId w, Rng& r) { return g.conv2d(g.constant(random_tensor(r, {2, 2, 6, 6})), w, std::nullopt, 2, 1); }},
    OpCase{"conv2d_bias", {3},
           [](GraphD& g, NodeId b, Rng& r) {
             return g.conv2d(g.constant(random_tensor(r, {1, 2, 4, 4})), g.constant(random_tensor(r, {3, 2, 3, 3})), b, 1, 0);
           }},
    OpCase{"upsample_nearest", {1, 2, 3, 3}, [](GraphD& g, NodeId x, Rng&) { return g.upsample_nearest(x, 2); }},
    OpCase{"mean_pool2x2", {2, 2, 4, 6}, [](GraphD& g, NodeId x, Rng&) { return g.mean_pool2x2(x); }},
    OpCase{"silu", {4, 5}, [](GraphD& g, NodeId x, Rng&) { return g.silu(x); }},
    OpCase{"sigmoid", {4, 5}, [](GraphD& g, NodeId x, Rng&) { return g.sigmoid(x); }},
    OpCase{"relu", {4, 5}, [](GraphD& g, NodeId x, Rng&) { return g.relu(x); }},
    OpCase{"abs", {4, 5}, [](GraphD& g, NodeId x, Rng&) { return g.abs(x); }},
    OpCase{"sqrt", {4, 5}, [](GraphD& g, NodeId x, Rng&) { return g.sqrt(g.add_scalar(g.mul(x, x), 0.25)); }},
    OpCase{"group_norm_input", {2, 4, 3, 3},
           [](GraphD& g, NodeId x, Rng& r) {
             return g.group_norm(x, g.constant(random_tensor(r, {4})), g.constant(random_tensor(r, {4})), 2);
           }},
    OpCase{"group_norm_affine", {4},
           [](GraphD& g, NodeId gamma, Rng& r) {
             const NodeId x = g.constant(random_tensor(r, {2, 4, 3, 3}));
             return g.group_norm(x, gamma, g.mul(gamma, gamma));
           }},
    OpCase{"reshape", {2, 6}, [](GraphD& g, NodeId x, Rng&) { return g.reshape(x, {3, 4}); }},
    OpCase{"expand", {2, 1, 3}, [](GraphD& g, NodeId x, Rng&) { return g.expand(x, {2, 4, 3}); }},
    OpCase{"concat", {2, 3},
           [](GraphD& g, NodeId x, Rng& r) {
             const NodeId parts[] = {g.constant(random_tensor(r, {2, 2})), x, g.mul(x, x)};
             return g.concat(parts, 1);
           }},
    OpCase{"slice", {3, 5}, [](GraphD& g, NodeId x, Rng&) { return g.slice(x, 1, 1, 4); }},
    OpCase{"index_select", {5, 3}, [](GraphD& g, NodeId x, Rng&) { return g.index_select(x, 0, {4, 0, 4, 2}); }},
    OpCase{"sum", {3, 3}, [](GraphD& g, NodeId x, Rng&) { return g.mul(g.sum(x), g.sum(x)); }},
    OpCase{"mean", {3, 3}, [](GraphD& g, NodeId x, Rng&) { return g.mul(g.mean(x), g.sum(x)); }},
    OpCase{"sum_axis", {2, 3, 4}, [](GraphD& g, NodeId x, Rng&) { return g.mul(g.sum_axis(x, 1), g.sum_axis(x, 1)); }},
    OpCase{"softmax_cross_entropy", {4, 5}, [](GraphD& g, NodeId x, Rng&) { return g.softmax_cross_entropy(x, {0, 3, 4, 1}); }}
  };
}

}  // namespace lesiongen::oracle

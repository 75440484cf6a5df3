#include "lesiongen/tensor/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <utility>

namespace lesiongen {

namespace {

struct OpNameEntry {
  OpKind kind;
  std::string_view name;
};

constexpr std::array<OpNameEntry, 27> kOpNames{{
    {OpKind::Leaf, "leaf"},
    {OpKind::Add, "add"},
    {OpKind::Sub, "sub"},
    {OpKind::Mul, "mul"},
    {OpKind::Div, "div"},
    {OpKind::Scale, "scale"},
    {OpKind::AddScalar, "add_scalar"},
    {OpKind::MatMul, "matmul"},
    {OpKind::Transpose, "transpose"},
    {OpKind::Conv2d, "conv2d"},
    {OpKind::UpsampleNearest, "upsample_nearest"},
    {OpKind::MeanPool2x2, "mean_pool2x2"},
    {OpKind::SiLU, "silu"},
    {OpKind::Sigmoid, "sigmoid"},
    {OpKind::Relu, "relu"},
    {OpKind::Abs, "abs"},
    {OpKind::Sqrt, "sqrt"},
    {OpKind::GroupNorm, "group_norm"},
    {OpKind::Reshape, "reshape"},
    {OpKind::Expand, "expand"},
    {OpKind::Concat, "concat"},
    {OpKind::Slice, "slice"},
    {OpKind::IndexSelect, "index_select"},
    {OpKind::Sum, "sum"},
    {OpKind::Mean, "mean"},
    {OpKind::SumAxis, "sum_axis"},
    {OpKind::SoftmaxCrossEntropy, "softmax_cross_entropy"},
}};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

[[noreturn]] void shape_fail(OpKind kind, const std::string& detail) {
  throw ShapeError(std::string(op_name(kind)) + ": " + detail);
}

void require_same(OpKind kind, const Shape& a, const Shape& b) {
  if (a != b) shape_fail(kind, "shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

int normalize_axis(OpKind kind, int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) shape_fail(kind, "axis " + std::to_string(axis) + " out of range");
  return axis;
}

std::size_t prod(const Shape& d, int from, int to) {
  std::size_t n = 1;
  for (int i = from; i < to; ++i) n *= static_cast<std::size_t>(d[static_cast<std::size_t>(i)]);
  return n;
}

// Unfolds one CHW image into a [C*kh*kw, Ho*Wo] column matrix.
template <typename T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride, int pad, int ho, int wo, T* cols) {
  const int hw_out = ho * wo;
  for (int ci = 0; ci < c; ++ci) {
    const T* plane = x + static_cast<std::ptrdiff_t>(ci) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* row = cols + static_cast<std::ptrdiff_t>(((ci * kh + ky) * kw + kx)) * hw_out;
        // Output columns whose input column lies inside the image.
        const int ox_lo = std::max(0, (pad - kx + stride - 1) / stride);
        const int ox_hi = std::min(wo, (w - 1 + pad - kx) / stride + 1);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= h || ox_lo >= ox_hi) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          std::fill(dst, dst + ox_lo, T(0));
          const T* src = plane + iy * w - pad + kx;
          if (stride == 1) {
            std::copy(src + ox_lo, src + ox_hi, dst + ox_lo);
          } else {
            for (int ox = ox_lo; ox < ox_hi; ++ox) dst[ox] = src[ox * stride];
          }
          std::fill(dst + ox_hi, dst + wo, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, int c, int h, int w, int kh, int kw, int stride, int pad, int ho, int wo, T* x) {
  const int hw_out = ho * wo;
  for (int ci = 0; ci < c; ++ci) {
    T* plane = x + static_cast<std::ptrdiff_t>(ci) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = cols + static_cast<std::ptrdiff_t>(((ci * kh + ky) * kw + kx)) * hw_out;
        const int ox_lo = std::max(0, (pad - kx + stride - 1) / stride);
        const int ox_hi = std::min(wo, (w - 1 + pad - kx) / stride + 1);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + oy * wo;
          T* dst = plane + iy * w - pad + kx;
          for (int ox = ox_lo; ox < ox_hi; ++ox) dst[ox * stride] += src[ox];
        }
      }
    }
  }
}

// Maps each flat index of `out_dims` to the flat index of `in_dims`, where
// size-1 input axes are repeated.
std::vector<std::size_t> expand_index_map(const Shape& in_dims, const Shape& out_dims) {
  const std::size_t rank = out_dims.size();
  std::vector<std::size_t> in_strides(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_strides[i] = in_dims[i] == 1 ? 0 : s;
    s *= static_cast<std::size_t>(in_dims[i]);
  }
  const std::size_t total = shape_size(out_dims);
  std::vector<std::size_t> map(total);
  std::vector<int> idx(rank, 0);
  std::size_t in_off = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    map[flat] = in_off;
    for (std::size_t a = rank; a-- > 0;) {
      ++idx[a];
      in_off += in_strides[a];
      if (idx[a] < out_dims[a]) break;
      in_off -= in_strides[a] * static_cast<std::size_t>(idx[a]);
      idx[a] = 0;
    }
  }
  return map;
}

}  // namespace

std::string_view op_name(OpKind kind) {
  for (const auto& e : kOpNames) {
    if (e.kind == kind) return e.name;
  }
  return "unknown";
}

OpKind parse_op_kind(std::string_view tag) {
  for (const auto& e : kOpNames) {
    if (e.name == tag) return e.kind;
  }
  throw ValidationError("unknown op tag '" + std::string(tag) + "'");
}

template <typename T>
const BasicTensor<T>& Gradients<T>::at(NodeId id) const {
  if (!has(id)) throw ValidationError("no gradient recorded for node " + std::to_string(id.index));
  return *slots_[id.index];
}

template <typename T>
const typename BasicGraph<T>::Node& BasicGraph<T>::node(NodeId id) const {
  if (id.index >= nodes_.size()) throw ValidationError("node " + std::to_string(id.index) + " does not exist");
  return nodes_[id.index];
}

template <typename T>
bool BasicGraph<T>::any_requires_grad(std::span<const NodeId> ids) const {
  return std::any_of(ids.begin(), ids.end(), [&](NodeId id) { return node(id).requires_grad; });
}

template <typename T>
NodeId BasicGraph<T>::push(OpKind kind, std::vector<NodeId> inputs, TensorT value, BackwardFn backward) {
  Node n;
  n.kind = kind;
  n.requires_grad = any_requires_grad(inputs);
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
NodeId BasicGraph<T>::leaf(TensorT value, bool requires_grad) {
  value.require_finite("graph leaf");
  Node n;
  n.kind = OpKind::Leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
NodeId BasicGraph<T>::record(OpKind kind, std::span<const NodeId> in, const OpAttrs& at) {
  for (NodeId id : in) (void)node(id);
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      shape_fail(kind, "expected " + std::to_string(n) + " inputs, got " + std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::Leaf:
      throw ValidationError("leaf: use leaf() to create input nodes");
    case OpKind::Add: need(2); return add(in[0], in[1]);
    case OpKind::Sub: need(2); return sub(in[0], in[1]);
    case OpKind::Mul: need(2); return mul(in[0], in[1]);
    case OpKind::Div: need(2); return div(in[0], in[1]);
    case OpKind::Scale: need(1); return scale(in[0], at.scalar);
    case OpKind::AddScalar: need(1); return add_scalar(in[0], at.scalar);
    case OpKind::MatMul: need(2); return matmul(in[0], in[1]);
    case OpKind::Transpose: need(1); return transpose(in[0]);
    case OpKind::Conv2d:
      if (in.size() == 2) return conv2d(in[0], in[1], std::nullopt, at.stride, at.pad);
      need(3);
      return conv2d(in[0], in[1], in[2], at.stride, at.pad);
    case OpKind::UpsampleNearest: need(1); return upsample_nearest(in[0], at.factor);
    case OpKind::MeanPool2x2: need(1); return mean_pool2x2(in[0]);
    case OpKind::SiLU: need(1); return silu(in[0]);
    case OpKind::Sigmoid: need(1); return sigmoid(in[0]);
    case OpKind::Relu: need(1); return relu(in[0]);
    case OpKind::Abs: need(1); return abs(in[0]);
    case OpKind::Sqrt: need(1); return sqrt(in[0]);
    case OpKind::GroupNorm: need(3); return group_norm(in[0], in[1], in[2], at.groups, at.eps);
    case OpKind::Reshape: need(1); return reshape(in[0], at.shape);
    case OpKind::Expand: need(1); return expand(in[0], at.shape);
    case OpKind::Concat: return concat(in, at.axis);
    case OpKind::Slice: need(1); return slice(in[0], at.axis, at.begin, at.end);
    case OpKind::IndexSelect: need(1); return index_select(in[0], at.axis, at.indices);
    case OpKind::Sum: need(1); return sum(in[0]);
    case OpKind::Mean: need(1); return mean(in[0]);
    case OpKind::SumAxis: need(1); return sum_axis(in[0], at.axis, at.keepdim);
    case OpKind::SoftmaxCrossEntropy: need(1); return softmax_cross_entropy(in[0], at.indices);
  }
  throw ValidationError("unknown op kind");
}

// ---- elementwise ---------------------------------------------------------

template <typename T>
NodeId BasicGraph<T>::add(NodeId a, NodeId b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  require_same(OpKind::Add, va.dims(), vb.dims());
  TensorT out(va.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  return push(OpKind::Add, {a, b}, std::move(out), [](const BasicGraph&, const TensorT& g, std::span<TensorT* const> gi) {
    for (TensorT* d : gi) {
      if (!d) continue;
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
    }
  });
}

template <typename T>
NodeId BasicGraph<T>::sub(NodeId a, NodeId b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  require_same(OpKind::Sub, va.dims(), vb.dims());
  TensorT out(va.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
  return push(OpKind::Sub, {a, b}, std::move(out), [](const BasicGraph&, const TensorT& g, std::span<TensorT* const> gi) {
    if (gi[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
    }
    if (gi[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
    }
  });
}

template <typename T>
NodeId BasicGraph<T>::mul(NodeId a, NodeId b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  require_same(OpKind::Mul, va.dims(), vb.dims());
  TensorT out(va.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  return push(OpKind::Mul, {a, b}, std::move(out), [a, b](const BasicGraph& gr, const TensorT& g, std::span<TensorT* const> gi) {
    const auto& xa = gr.value(a);
    const auto& xb = gr.value(b);
    if (gi[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * xb[i];
    }
    if (gi[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * xa[i];
    }
  });
}

template <typename T>
NodeId BasicGraph<T>::div(NodeId a, NodeId b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  require_same(OpKind::Div, va.dims(), vb.dims());
  TensorT out(va.dims());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (vb[i] == T(0)) shape_fail(OpKind::Div, "division by zero");
    out[i] = va[i] / vb[i];
  }
  return push(OpKind::Div, {a, b}, std::move(out), [a, b](const BasicGraph& gr, const TensorT& g, std::span<TensorT* const> gi) {
    const auto& xa = gr.value(a);
    const auto& xb = gr.value(b);
    if (gi[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] / xb[i];
    }
    if (gi[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i] * xa[i] / (xb[i] * xb[i]);
    }
  });
}

template <typename T>
NodeId BasicGraph<T>::scale(NodeId a, double s) {
  const auto& va = value(a);
  const T f = static_cast<T>(s);
  TensorT out(va.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * f;
  return push(OpKind::Scale, {a}, std::move(out), [f](const BasicGraph&, const TensorT& g, std::span<TensorT* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * f;
  });
}

template <typename T>
NodeId BasicGraph<T>::add_scalar(NodeId a, double s) {
  const auto& va = value(a);
  const T f = static_cast<T>(s);
  TensorT out(va.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + f;
  return push(OpKind::AddScalar, {a}, std::move(out), [](const BasicGraph&, const TensorT& g, std::span<TensorT* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
  });
}

template <typename T>
NodeId BasicGraph<T>::silu(NodeId x) {
  const auto& v = value(x);
  TensorT out(v.dims());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T s = T(1) / (T(1) + std::exp(-v[i]));
    out[i] = v[i] * s;
  }
  return push(OpKind::SiLU, {x}, std::move(out), [x](const BasicGraph& gr, const TensorT& g, std::span<TensorT* const> gi) {
    const auto& xv = gr.value(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-xv[i]));
      (*gi[0])[i] += g[i] * (s * (T(1) + xv[i] * (T(1) - s)));
    }
  });
}

template <typename T>
NodeId BasicGraph<T>::sigmoid(NodeId x) {
  const auto& v = value(x);
  TensorT out(v.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-v[i]));
  const NodeId id{static_cast<std::uint32_t>(nodes_.size())};
  return push(OpKind::Sigmoid, {x}, std::move(out), [id](const BasicGraph& gr, const TensorT& g, std::span<TensorT* const> gi) {
    const auto& y = gr.value(id);
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
NodeId BasicGraph<T>::relu(NodeId x) {
  const auto& v = value(x);
  TensorT out(v.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] > T(0) ? v[i] : T(0);
  return push(OpKind::Relu, {x}, std::move(out), [x](const BasicGraph& gr, const TensorT& g, std::span<TensorT* const> gi) {
    const auto& xv = gr.value(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T(0)) (*gi[0])[i] += g[i];
    }
  });
}

template <typename T>
NodeId BasicGraph<T>::abs(NodeId x) {
  const auto& v = value(x);
  TensorT out(v.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(v[i]);
  return push(OpKind::Abs, {x}, std::move(out), [x](const BasicGraph& gr, const TensorT& g, std::span<TensorT* const> gi) {
    const auto& xv = gr.value(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T(0)) {
        (*gi[0])[i] += g[i];
      } else if (xv[i] < T(0)) {
        (*gi[0])[i] -= g[i];
      }
    }
  });
}

template <typename T>
NodeId BasicGraph<T>::sqrt(NodeId x) {
  const auto& v = value(x);
  TensorT out(v.dims());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (v[i] < T(0)) shape_fail(OpKind::Sqrt, "negative input");
    out[i] = std::sqrt(v[i]);
  }
  const NodeId id{static_cast<std::uint32_t>(nodes_.size())};
  // Subgradient 0 at the origin.
  return push(OpKind::Sqrt, {x}, std::move(out), [id](const BasicGraph& gr, const TensorT& g, std::span<TensorT* const> gi) {
    const auto& y = gr.value(id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (y[i] > T(0)) (*gi[0])[i] += g[i] / (T(2) * y[i]);
    }
  });
}

// ---- linear algebra ------------------------------------------------------

template <typename T>
NodeId BasicGraph<T>::matmul(NodeId a, NodeId b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0)) {
    shape_fail(OpKind::MatMul, "incompatible " + shape_string(va.dims()) + " x " + shape_string(vb.dims()));
  }
  const int m = va.dim(0), k = va.dim(1), n = vb.dim(1);
  TensorT out({m, n});
  Eigen::Map<const RowMat<T>> ma(va.data().data(), m, k);
  Eigen::Map<const RowMat<T>> mb(vb.data().data(), k, n);
  Eigen::Map<RowMat<T>> mo(out.data().data(), m, n);
  mo.noalias() = ma * mb;
  return push(OpKind::MatMul, {a, b}, std::move(out),
              [a, b, m, k, n](const BasicGraph& gr, const TensorT& g, std::span<TensorT* const> gi) {
                Eigen::Map<const RowMat<T>> mg(g.data().data(), m, n);
                if (gi[0]) {
                  Eigen::Map<const RowMat<T>> mb2(gr.value(b).data().data(), k, n);
                  Eigen::Map<RowMat<T>> da(gi[0]->data().data(), m, k);
                  da.noalias() += mg * mb2.transpose();
                }
                if (gi[1]) {
                  Eigen::Map<const RowMat<T>> ma2(gr.value(a).data().data(), m, k);
                  Eigen::Map<RowMat<T>> db(gi[1]->data().data(), k, n);
                  db.noalias() += ma2.transpose() * mg;
                }
              });
}

template <typename T>
NodeId BasicGraph<T>::transpose(NodeId a) {
  const auto& va = value(a);
  if (va.rank() != 2) shape_fail(OpKind::Transpose, "expects rank 2, got " + shape_string(va.dims()));
  const int r = va.dim(0), c = va.dim(1);
  TensorT out({c, r});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = va[static_cast<std::size_t>(i) * c + j];
  }
  return push(OpKind::Transpose, {a}, std::move(out), [r, c](const BasicGraph&, const TensorT& g, std::span<TensorT* const> gi) {
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) (*gi[0])[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
    }
  });
}

template <typename T>
NodeId BasicGraph<T>::conv2d(NodeId x, NodeId w, std::optional<NodeId> bias, int stride, int pad) {
  const auto& vx = value(x);
  const auto& vw = value(w);
  if (vx.rank() != 4 || vw.rank() != 4 || vx.dim(1) != vw.dim(1)) {
    shape_fail(OpKind::Conv2d, "input " + shape_string(vx.dims()) + " weight " + shape_string(vw.dims()));
  }
  if (stride < 1 || pad < 0) shape_fail(OpKind::Conv2d, "invalid stride/pad");
  const int n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), wd = vx.dim(3);
  const int o = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  if (ho <= 0 || wo <= 0) shape_fail(OpKind::Conv2d, "kernel larger than padded input " + shape_string(vx.dims()));
  if (bias) {
    const auto& vb = value(*bias);
    if (vb.dims() != Shape{o}) shape_fail(OpKind::Conv2d, "bias " + shape_string(vb.dims()) + " for " + std::to_string(o) + " outputs");
  }
  const int ckk = c * kh * kw;
  const int hw = ho * wo;
  TensorT out({n, o, ho, wo});
  std::vector<T> cols(static_cast<std::size_t>(ckk) * hw);
  Eigen::Map<const RowMat<T>> mw(vw.data().data(), o, ckk);
  Eigen::Map<const RowMat<T>> mc(cols.data(), ckk, hw);
  for (int b = 0; b < n; ++b) {
    im2col(vx.data().data() + static_cast<std::size_t>(b) * c * h * wd, c, h, wd, kh, kw, stride, pad, ho, wo, cols.data());
    Eigen::Map<RowMat<T>> mo(out.data().data() + static_cast<std::size_t>(b) * o * hw, o, hw);
    mo.noalias() = mw * mc;
    if (bias) {
      const auto& vb = value(*bias);
      for (int oc = 0; oc < o; ++oc) mo.row(oc).array() += vb[static_cast<std::size_t>(oc)];
    }
  }
  std::vector<NodeId> ins{x, w};
  if (bias) ins.push_back(*bias);
  return push(OpKind::Conv2d, std::move(ins), std::move(out),
              [=](const BasicGraph& gr, const TensorT& g, std::span<TensorT* const> gi) {
                const auto& xv = gr.value(x);
                const auto& wv = gr.value(w);
                std::vector<T> cbuf(static_cast<std::size_t>(ckk) * hw);
                Eigen::Map<const RowMat<T>> wmat(wv.data().data(), o, ckk);
                Eigen::Map<RowMat<T>> cmat(cbuf.data(), ckk, hw);
                for (int b = 0; b < n; ++b) {
                  Eigen::Map<const RowMat<T>> gmat(g.data().data() + static_cast<std::size_t>(b) * o * hw, o, hw);
                  if (gi[1]) {
                    im2col(xv.data().data() + static_cast<std::size_t>(b) * c * h * wd, c, h, wd, kh, kw, stride, pad, ho, wo,
                           cbuf.data());
                    Eigen::Map<RowMat<T>> dw(gi[1]->data().data(), o, ckk);
                    dw.noalias() += gmat * cmat.transpose();
                  }
                  if (gi.size() > 2 && gi[2]) {
                    for (int oc = 0; oc < o; ++oc) {
                      double s = 0.0;
                      for (int p = 0; p < hw; ++p) s += gmat(oc, p);
                      (*gi[2])[static_cast<std::size_t>(oc)] += static_cast<T>(s);
                    }
                  }
                  if (gi[0]) {
                    cmat.noalias() = wmat.transpose() * gmat;
                    col2im_add(cbuf.data(), c, h, wd, kh, kw, stride, pad, ho, wo,
                               gi[0]->data().data() + static_cast<std::size_t>(b) * c * h * wd);
                  }
                }
              });
}

// ---- resampling ----------------------------------------------------------

template <typename T>
NodeId BasicGraph<T>::upsample_nearest(NodeId x, int factor) {
  const auto& v = value(x);
  if (v.rank() != 4 || factor < 1) shape_fail(OpKind::UpsampleNearest, "expects NCHW input, got " + shape_string(v.dims()));
  const int nc = v.dim(0) * v.dim(1), h = v.dim(2), w = v.dim(3);
  const int ho = h * factor, wo = w * factor;
  TensorT out({v.dim(0), v.dim(1), ho, wo});
  for (int p = 0; p < nc; ++p) {
    for (int y = 0; y < ho; ++y) {
      for (int xx = 0; xx < wo; ++xx) {
        out[(static_cast<std::size_t>(p) * ho + y) * wo + xx] = v[(static_cast<std::size_t>(p) * h + y / factor) * w + xx / factor];
      }
    }
  }
  return push(OpKind::UpsampleNearest, {x}, std::move(out),
              [=](const BasicGraph&, const TensorT& g, std::span<TensorT* const> gi) {
                for (int p = 0; p < nc; ++p) {
                  for (int y = 0; y < ho; ++y) {
                    for (int xx = 0; xx < wo; ++xx) {
                      (*gi[0])[(static_cast<std::size_t>(p) * h + y / factor) * w + xx / factor] +=
                          g[(static_cast<std::size_t>(p) * ho + y) * wo + xx];
                    }
                  }
                }
              });
}

template <typename T>
NodeId BasicGraph<T>::mean_pool2x2(NodeId x) {
  const auto& v = value(x);
  if (v.rank() != 4 || v.dim(2) % 2 || v.dim(3) % 2) {
    shape_fail(OpKind::MeanPool2x2, "expects NCHW with even H, W, got " + shape_string(v.dims()));
  }
  const int nc = v.dim(0) * v.dim(1), h = v.dim(2), w = v.dim(3);
  const int ho = h / 2, wo = w / 2;
  TensorT out({v.dim(0), v.dim(1), ho, wo});
  for (int p = 0; p < nc; ++p) {
    const T* src = v.data().data() + static_cast<std::size_t>(p) * h * w;
    for (int y = 0; y < ho; ++y) {
      for (int xx = 0; xx < wo; ++xx) {
        const T s = src[(2 * y) * w + 2 * xx] + src[(2 * y) * w + 2 * xx + 1] + src[(2 * y + 1) * w + 2 * xx] +
                    src[(2 * y + 1) * w + 2 * xx + 1];
        out[(static_cast<std::size_t>(p) * ho + y) * wo + xx] = s * T(0.25);
      }
    }
  }
  return push(OpKind::MeanPool2x2, {x}, std::move(out), [=](const BasicGraph&, const TensorT& g, std::span<TensorT* const> gi) {
    for (int p = 0; p < nc; ++p) {
      T* dst = gi[0]->data().data() + static_cast<std::size_t>(p) * h * w;
      for (int y = 0; y < ho; ++y) {
        for (int xx = 0; xx < wo; ++xx) {
          const T q = g[(static_cast<std::size_t>(p) * ho + y) * wo + xx] * T(0.25);
          dst[(2 * y) * w + 2 * xx] += q;
          dst[(2 * y) * w + 2 * xx + 1] += q;
          dst[(2 * y + 1) * w + 2 * xx] += q;
          dst[(2 * y + 1) * w + 2 * xx + 1] += q;
        }
      }
    }
  });
}

// ---- normalization -------------------------------------------------------

template <typename T>
NodeId BasicGraph<T>::group_norm(NodeId x, NodeId gamma, NodeId beta, int groups, double eps) {
  const auto& v = value(x);
  if (v.rank() != 4) shape_fail(OpKind::GroupNorm, "expects NCHW input, got " + shape_string(v.dims()));
  const int n = v.dim(0), c = v.dim(1);
  const std::size_t hw = static_cast<std::size_t>(v.dim(2)) * v.dim(3);
  if (groups <= 0) groups = std::min(8, c);
  if (c % groups != 0) shape_fail(OpKind::GroupNorm, std::to_string(c) + " channels not divisible by " + std::to_string(groups) + " groups");
  if (value(gamma).dims() != Shape{c} || value(beta).dims() != Shape{c}) {
    shape_fail(OpKind::GroupNorm, "affine params must be [" + std::to_string(c) + "]");
  }
  const int cpg = c / groups;
  const std::size_t gsize = static_cast<std::size_t>(cpg) * hw;
  // Normalized values and inverse std per (n, g) are kept for backward.
  std::vector<T> xhat(v.size());
  std::vector<double> inv_std(static_cast<std::size_t>(n) * groups);
  TensorT out(v.dims());
  const auto& gv = value(gamma);
  const auto& bv = value(beta);
  for (int b = 0; b < n; ++b) {
    for (int gidx = 0; gidx < groups; ++gidx) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + static_cast<std::size_t>(gidx) * cpg) * hw;
      const T* src = v.data().data() + base;
      double mean = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) mean += src[i];
      mean /= static_cast<double>(gsize);
      double var = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) {
        const double d = src[i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(gsize);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(b) * groups + gidx] = is;
      const T tm = static_cast<T>(mean), ts = static_cast<T>(is);
      for (int cc = 0; cc < cpg; ++cc) {
        const std::size_t ch = static_cast<std::size_t>(gidx) * cpg + cc;
        const T gmul = gv[ch], badd = bv[ch];
        T* xh = xhat.data() + base + cc * hw;
        T* o = out.data().data() + base + cc * hw;
        const T* s = src + cc * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          xh[i] = (s[i] - tm) * ts;
          o[i] = xh[i] * gmul + badd;
        }
      }
    }
  }
  return push(OpKind::GroupNorm, {x, gamma, beta}, std::move(out),
              [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](const BasicGraph& gr, const TensorT& g,
                                                                        std::span<TensorT* const> gi) {
                const auto& gam = gr.value(gamma);
                for (int b = 0; b < n; ++b) {
                  for (int gidx = 0; gidx < groups; ++gidx) {
                    const std::size_t base = (static_cast<std::size_t>(b) * c + static_cast<std::size_t>(gidx) * cpg) * hw;
                    double m1 = 0.0, m2 = 0.0;
                    for (int cc = 0; cc < cpg; ++cc) {
                      const std::size_t ch = static_cast<std::size_t>(gidx) * cpg + cc;
                      const T* gp = g.data().data() + base + cc * hw;
                      const T* xh = xhat.data() + base + cc * hw;
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t i = 0; i < hw; ++i) {
                        s1 += gp[i];
                        s2 += static_cast<double>(gp[i]) * xh[i];
                      }
                      if (gi[1]) (*gi[1])[ch] += static_cast<T>(s2);
                      if (gi[2]) (*gi[2])[ch] += static_cast<T>(s1);
                      m1 += s1 * gam[ch];
                      m2 += s2 * gam[ch];
                    }
                    if (!gi[0]) continue;
                    m1 /= static_cast<double>(gsize);
                    m2 /= static_cast<double>(gsize);
                    const double is = inv_std[static_cast<std::size_t>(b) * groups + gidx];
                    for (int cc = 0; cc < cpg; ++cc) {
                      const std::size_t ch = static_cast<std::size_t>(gidx) * cpg + cc;
                      const T* gp = g.data().data() + base + cc * hw;
                      const T* xh = xhat.data() + base + cc * hw;
                      T* dx = gi[0]->data().data() + base + cc * hw;
                      const T gm = gam[ch];
                      const T tis = static_cast<T>(is), tm1 = static_cast<T>(m1), tm2 = static_cast<T>(m2);
                      for (std::size_t i = 0; i < hw; ++i) dx[i] += tis * (gp[i] * gm - tm1 - xh[i] * tm2);
                    }
                  }
                }
              });
}

// ---- shape manipulation --------------------------------------------------

template <typename T>
NodeId BasicGraph<T>::reshape(NodeId x, Shape dims) {
  const auto& v = value(x);
  if (shape_size(dims) != v.size()) shape_fail(OpKind::Reshape, shape_string(v.dims()) + " -> " + shape_string(dims));
  return push(OpKind::Reshape, {x}, v.reshaped(std::move(dims)), [](const BasicGraph&, const TensorT& g, std::span<TensorT* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
  });
}

template <typename T>
NodeId BasicGraph<T>::expand(NodeId x, Shape dims) {
  const auto& v = value(x);
  if (static_cast<int>(dims.size()) != v.rank()) {
    shape_fail(OpKind::Expand, "rank mismatch " + shape_string(v.dims()) + " -> " + shape_string(dims));
  }
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (v.dims()[i] != dims[i] && v.dims()[i] != 1) {
      shape_fail(OpKind::Expand, "cannot expand " + shape_string(v.dims()) + " -> " + shape_string(dims));
    }
  }
  // Common layouts avoid the index map: every element repeated `inner` times
  // ([N,C,1,1] -> [N,C,H,W]) or the whole tensor tiled `outer` times ([1,E] -> [N,E]).
  const int rank = v.rank();
  int split = rank;
  while (split > 0 && v.dims()[static_cast<std::size_t>(split - 1)] == 1) --split;
  bool repeat = true;
  for (int i = 0; i < split; ++i) repeat = repeat && v.dims()[static_cast<std::size_t>(i)] == dims[static_cast<std::size_t>(i)];
  int lead = 0;
  while (lead < rank && v.dims()[static_cast<std::size_t>(lead)] == 1) ++lead;
  bool tile = true;
  for (int i = lead; i < rank; ++i) tile = tile && v.dims()[static_cast<std::size_t>(i)] == dims[static_cast<std::size_t>(i)];

  TensorT out(dims);
  if (repeat) {
    const std::size_t inner = prod(dims, split, rank);
    for (std::size_t i = 0; i < v.size(); ++i) std::fill_n(out.data().data() + i * inner, inner, v[i]);
    return push(OpKind::Expand, {x}, std::move(out), [inner](const BasicGraph&, const TensorT& g, std::span<TensorT* const> gi) {
      for (std::size_t i = 0; i < gi[0]->size(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < inner; ++k) s += g[i * inner + k];
        (*gi[0])[i] += static_cast<T>(s);
      }
    });
  }
  if (tile) {
    const std::size_t outer = prod(dims, 0, lead);
    const std::size_t n = v.size();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(v.data().data(), n, out.data().data() + o * n);
    return push(OpKind::Expand, {x}, std::move(out), [outer, n](const BasicGraph&, const TensorT& g, std::span<TensorT* const> gi) {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < n; ++i) (*gi[0])[i] += g[o * n + i];
      }
    });
  }
  auto map = std::make_shared<std::vector<std::size_t>>(expand_index_map(v.dims(), dims));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[(*map)[i]];
  return push(OpKind::Expand, {x}, std::move(out), [map](const BasicGraph&, const TensorT& g, std::span<TensorT* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[(*map)[i]] += g[i];
  });
}

template <typename T>
NodeId BasicGraph<T>::concat(std::span<const NodeId> xs, int axis) {
  if (xs.empty()) shape_fail(OpKind::Concat, "no inputs");
  const Shape& d0 = dims(xs[0]);
  axis = normalize_axis(OpKind::Concat, axis, static_cast<int>(d0.size()));
  Shape od = d0;
  od[static_cast<std::size_t>(axis)] = 0;
  std::vector<int> sizes;
  for (NodeId id : xs) {
    const Shape& d = dims(id);
    if (d.size() != d0.size()) shape_fail(OpKind::Concat, "rank mismatch " + shape_string(d0) + " vs " + shape_string(d));
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (static_cast<int>(i) != axis && d[i] != d0[i]) {
        shape_fail(OpKind::Concat, "shape mismatch " + shape_string(d0) + " vs " + shape_string(d));
      }
    }
    sizes.push_back(d[static_cast<std::size_t>(axis)]);
    od[static_cast<std::size_t>(axis)] += d[static_cast<std::size_t>(axis)];
  }
  const std::size_t outer = prod(d0, 0, axis);
  const std::size_t inner = prod(d0, axis + 1, static_cast<int>(d0.size()));
  const std::size_t out_row = static_cast<std::size_t>(od[static_cast<std::size_t>(axis)]) * inner;
  TensorT out(od);
  std::size_t col = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& v = value(xs[k]);
    const std::size_t chunk = static_cast<std::size_t>(sizes[k]) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.data().data() + o * chunk, chunk, out.data().data() + o * out_row + col);
    }
    col += chunk;
  }
  return push(OpKind::Concat, std::vector<NodeId>(xs.begin(), xs.end()), std::move(out),
              [=](const BasicGraph&, const TensorT& g, std::span<TensorT* const> gi) {
                std::size_t c0 = 0;
                for (std::size_t k = 0; k < gi.size(); ++k) {
                  const std::size_t chunk = static_cast<std::size_t>(sizes[k]) * inner;
                  if (gi[k]) {
                    for (std::size_t o = 0; o < outer; ++o) {
                      for (std::size_t i = 0; i < chunk; ++i) (*gi[k])[o * chunk + i] += g[o * out_row + c0 + i];
                    }
                  }
                  c0 += chunk;
                }
              });
}

template <typename T>
NodeId BasicGraph<T>::slice(NodeId x, int axis, int begin, int end) {
  const auto& v = value(x);
  axis = normalize_axis(OpKind::Slice, axis, v.rank());
  const int len = v.dim(axis);
  if (begin < 0 || end > len || begin >= end) {
    shape_fail(OpKind::Slice, "range [" + std::to_string(begin) + "," + std::to_string(end) + ") on " + shape_string(v.dims()));
  }
  Shape od = v.dims();
  od[static_cast<std::size_t>(axis)] = end - begin;
  const std::size_t outer = prod(v.dims(), 0, axis);
  const std::size_t inner = prod(v.dims(), axis + 1, v.rank());
  const std::size_t in_row = static_cast<std::size_t>(len) * inner;
  const std::size_t chunk = static_cast<std::size_t>(end - begin) * inner;
  const std::size_t off = static_cast<std::size_t>(begin) * inner;
  TensorT out(od);
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(v.data().data() + o * in_row + off, chunk, out.data().data() + o * chunk);
  return push(OpKind::Slice, {x}, std::move(out), [=](const BasicGraph&, const TensorT& g, std::span<TensorT* const> gi) {
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < chunk; ++i) (*gi[0])[o * in_row + off + i] += g[o * chunk + i];
    }
  });
}

template <typename T>
NodeId BasicGraph<T>::index_select(NodeId x, int axis, std::vector<int> indices) {
  const auto& v = value(x);
  axis = normalize_axis(OpKind::IndexSelect, axis, v.rank());
  const int len = v.dim(axis);
  if (indices.empty()) shape_fail(OpKind::IndexSelect, "empty index list");
  for (int i : indices) {
    if (i < 0 || i >= len) shape_fail(OpKind::IndexSelect, "index " + std::to_string(i) + " out of range for " + shape_string(v.dims()));
  }
  Shape od = v.dims();
  od[static_cast<std::size_t>(axis)] = static_cast<int>(indices.size());
  const std::size_t outer = prod(v.dims(), 0, axis);
  const std::size_t inner = prod(v.dims(), axis + 1, v.rank());
  const std::size_t k = indices.size();
  TensorT out(od);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < k; ++j) {
      std::copy_n(v.data().data() + (o * len + static_cast<std::size_t>(indices[j])) * inner, inner,
                  out.data().data() + (o * k + j) * inner);
    }
  }
  return push(OpKind::IndexSelect, {x}, std::move(out),
              [=, indices = std::move(indices)](const BasicGraph&, const TensorT& g, std::span<TensorT* const> gi) {
                for (std::size_t o = 0; o < outer; ++o) {
                  for (std::size_t j = 0; j < k; ++j) {
                    for (std::size_t i = 0; i < inner; ++i) {
                      (*gi[0])[(o * len + static_cast<std::size_t>(indices[j])) * inner + i] += g[(o * k + j) * inner + i];
                    }
                  }
                }
              });
}

// ---- reductions ----------------------------------------------------------

template <typename T>
NodeId BasicGraph<T>::sum(NodeId x) {
  const auto& v = value(x);
  double s = 0.0;
  for (T e : v.data()) s += e;
  return push(OpKind::Sum, {x}, TensorT::scalar(static_cast<T>(s)), [](const BasicGraph&, const TensorT& g, std::span<TensorT* const> gi) {
    const T gv = g[0];
    for (auto& e : gi[0]->data()) e += gv;
  });
}

template <typename T>
NodeId BasicGraph<T>::mean(NodeId x) {
  const auto& v = value(x);
  double s = 0.0;
  for (T e : v.data()) s += e;
  const double n = static_cast<double>(v.size());
  return push(OpKind::Mean, {x}, TensorT::scalar(static_cast<T>(s / n)), [n](const BasicGraph&, const TensorT& g, std::span<TensorT* const> gi) {
    const T gv = static_cast<T>(g[0] / n);
    for (auto& e : gi[0]->data()) e += gv;
  });
}

template <typename T>
NodeId BasicGraph<T>::sum_axis(NodeId x, int axis, bool keepdim) {
  const auto& v = value(x);
  axis = normalize_axis(OpKind::SumAxis, axis, v.rank());
  const int len = v.dim(axis);
  const std::size_t outer = prod(v.dims(), 0, axis);
  const std::size_t inner = prod(v.dims(), axis + 1, v.rank());
  Shape od = v.dims();
  if (keepdim) {
    od[static_cast<std::size_t>(axis)] = 1;
  } else {
    od.erase(od.begin() + axis);
  }
  TensorT out(od);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      double s = 0.0;
      for (int a = 0; a < len; ++a) s += v[(o * len + static_cast<std::size_t>(a)) * inner + i];
      out[o * inner + i] = static_cast<T>(s);
    }
  }
  return push(OpKind::SumAxis, {x}, std::move(out), [=](const BasicGraph&, const TensorT& g, std::span<TensorT* const> gi) {
    for (std::size_t o = 0; o < outer; ++o) {
      for (int a = 0; a < len; ++a) {
        for (std::size_t i = 0; i < inner; ++i) (*gi[0])[(o * len + static_cast<std::size_t>(a)) * inner + i] += g[o * inner + i];
      }
    }
  });
}

template <typename T>
NodeId BasicGraph<T>::softmax_cross_entropy(NodeId logits, std::vector<int> targets) {
  const auto& v = value(logits);
  if (v.rank() != 2) shape_fail(OpKind::SoftmaxCrossEntropy, "logits must be [N,K], got " + shape_string(v.dims()));
  const int n = v.dim(0), k = v.dim(1);
  if (static_cast<int>(targets.size()) != n) {
    shape_fail(OpKind::SoftmaxCrossEntropy, std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
  }
  std::vector<double> probs(v.size());
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    const int tgt = targets[static_cast<std::size_t>(r)];
    if (tgt < 0 || tgt >= k) shape_fail(OpKind::SoftmaxCrossEntropy, "target " + std::to_string(tgt) + " out of range");
    const T* row = v.data().data() + static_cast<std::size_t>(r) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    for (int j = 0; j < k; ++j) probs[static_cast<std::size_t>(r) * k + j] = std::exp(row[j] - mx) / z;
    loss += -(row[tgt] - mx - std::log(z));
  }
  loss /= n;
  return push(OpKind::SoftmaxCrossEntropy, {logits}, TensorT::scalar(static_cast<T>(loss)),
              [=, probs = std::move(probs), targets = std::move(targets)](const BasicGraph&, const TensorT& g,
                                                                          std::span<TensorT* const> gi) {
                const double scale = static_cast<double>(g[0]) / n;
                for (int r = 0; r < n; ++r) {
                  for (int j = 0; j < k; ++j) {
                    const double onehot = j == targets[static_cast<std::size_t>(r)] ? 1.0 : 0.0;
                    (*gi[0])[static_cast<std::size_t>(r) * k + j] +=
                        static_cast<T>(scale * (probs[static_cast<std::size_t>(r) * k + j] - onehot));
                  }
                }
              });
}

// ---- backward ------------------------------------------------------------

template <typename T>
Gradients<T> BasicGraph<T>::backward(NodeId loss) const {
  const auto& lv = value(loss);
  if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_string(lv.dims()));
  if (!lv.all_finite()) throw NumericError("backward: loss is not finite");
  std::vector<std::optional<TensorT>> grads(nodes_.size());
  if (!node(loss).requires_grad) return Gradients<T>(std::move(grads));

  std::vector<char> live(nodes_.size(), 0);
  live[loss.index] = 1;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    if (!live[i]) continue;
    for (NodeId in : nodes_[i].inputs) {
      if (nodes_[in.index].requires_grad) live[in.index] = 1;
    }
  }
  grads[loss.index] = TensorT(lv.dims(), T(1));
  std::vector<TensorT*> slots;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    const Node& nd = nodes_[i];
    if (!live[i] || !nd.backward || !grads[i]) continue;
    slots.clear();
    for (NodeId in : nd.inputs) {
      if (!live[in.index]) {
        slots.push_back(nullptr);
        continue;
      }
      if (!grads[in.index]) grads[in.index] = TensorT(nodes_[in.index].value.dims());
      slots.push_back(&*grads[in.index]);
    }
    nd.backward(*this, *grads[i], slots);
  }
  return Gradients<T>(std::move(grads));
}

template class Gradients<float>;
template class Gradients<double>;
template class BasicGraph<float>;
template class BasicGraph<double>;

}  // namespace lesiongen

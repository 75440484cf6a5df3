#include "lesiongen/tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace lesiongen {

namespace {

template <typename T>
double evaluate(const ScalarGraphFn<T>& f, const BasicTensor<T>& x) {
  BasicGraph<T> g;
  const NodeId in = g.constant(x);
  const auto& out = g.value(f(g, in));
  if (out.size() != 1) throw ShapeError("finite_diff_check: function must return a scalar, got " + shape_string(out.dims()));
  const double v = out[0];
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite function value");
  return v;
}

}  // namespace

template <typename T>
GradCheckResult<T> finite_diff_gradients(const ScalarGraphFn<T>& f, const BasicTensor<T>& point, double eps) {
  if (!(eps > 0.0)) throw ValidationError("finite_diff_check: eps must be positive");
  GradCheckResult<T> res;
  {
    BasicGraph<T> g;
    const NodeId x = g.variable(point);
    const NodeId y = f(g, x);
    const auto grads = g.backward(y);
    res.autodiff = grads.has(x) ? grads.at(x) : BasicTensor<T>(point.dims());
    if (!res.autodiff.all_finite()) throw NumericError("finite_diff_check: non-finite autodiff gradient");
  }
  res.numeric = BasicTensor<T>(point.dims());
  BasicTensor<T> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const T orig = point[i];
    const T hi = static_cast<T>(orig + eps);
    const T lo = static_cast<T>(orig - eps);
    probe[i] = hi;
    const double fp = evaluate(f, probe);
    probe[i] = lo;
    const double fm = evaluate(f, probe);
    probe[i] = orig;
    const double num = (fp - fm) / (static_cast<double>(hi) - static_cast<double>(lo));
    res.numeric[i] = static_cast<T>(num);
    const double err = std::abs(static_cast<double>(res.autodiff[i]) - num) / std::max(1e-8, std::abs(num));
    res.max_relative_error = std::max(res.max_relative_error, err);
  }
  return res;
}

template GradCheckResult<float> finite_diff_gradients(const ScalarGraphFn<float>&, const Tensor&, double);
template GradCheckResult<double> finite_diff_gradients(const ScalarGraphFn<double>&, const TensorD&, double);

}  // namespace lesiongen

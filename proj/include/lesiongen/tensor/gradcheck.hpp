#pragma once

#include <functional>

#include "lesiongen/tensor/graph.hpp"

namespace lesiongen {

template <typename T>
using ScalarGraphFn = std::function<NodeId(BasicGraph<T>& graph, NodeId x)>;

template <typename T>
struct GradCheckResult {
  double max_relative_error = 0.0;
  BasicTensor<T> autodiff;
  BasicTensor<T> numeric;
};

/// Compares the autodiff gradient of `f` at `point` with central differences.
///
/// The per-coordinate error is |autodiff - numeric| / max(1e-8, |numeric|).
/// The divided difference uses the step actually representable in T rather
/// than the nominal `eps`. `f` must be deterministic.
template <typename T>
GradCheckResult<T> finite_diff_gradients(const ScalarGraphFn<T>& f, const BasicTensor<T>& point, double eps);

template <typename T>
double finite_diff_check(const ScalarGraphFn<T>& f, const BasicTensor<T>& point, double eps) {
  return finite_diff_gradients(f, point, eps).max_relative_error;
}

extern template GradCheckResult<float> finite_diff_gradients(const ScalarGraphFn<float>&, const Tensor&, double);
extern template GradCheckResult<double> finite_diff_gradients(const ScalarGraphFn<double>&, const TensorD&, double);

}  // namespace lesiongen

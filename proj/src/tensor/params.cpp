#include "lesiongen/tensor/params.hpp"

#include <cmath>

namespace lesiongen {

void ParamSet::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ValidationError("duplicate parameter '" + name + "'");
  value.require_finite("parameter " + name);
  Entry e{name, value, Tensor::zeros(value.dims()), Tensor::zeros(value.dims())};
  index_.emplace(name, entries_.size());
  entries_.push_back(std::move(e));
}

const ParamSet::Entry& ParamSet::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return entries_[it->second];
}

const Tensor& ParamSet::value(const std::string& name) const { return entry(name).value; }

Tensor& ParamSet::value(const std::string& name) { return const_cast<Entry&>(entry(name)).value; }

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParamSet::set_step(std::int64_t s) {
  if (s < 0) throw ValidationError("optimizer step counter must be non-negative");
  step_ = s;
}

void ParamSet::reset_optimizer_state() {
  for (auto& e : entries_) {
    e.first_moment = Tensor::zeros(e.value.dims());
    e.second_moment = Tensor::zeros(e.value.dims());
  }
  step_ = 0;
}

template <typename T>
ParamBinding<T>::ParamBinding(const ParamSet& params, BasicGraph<T>& graph, bool trainable) : params_(&params) {
  for (const auto& e : params.entries()) {
    ids_.emplace(e.name, graph.leaf(e.value.template cast<T>(), trainable));
  }
}

template <typename T>
NodeId ParamBinding<T>::operator[](const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) throw ValidationError("parameter '" + name + "' is not bound");
  return it->second;
}

template <typename T>
ParamGrads ParamBinding<T>::gradients(const Gradients<T>& grads) const {
  ParamGrads out;
  for (const auto& e : params_->entries()) {
    const NodeId id = ids_.at(e.name);
    if (grads.has(id)) {
      out.emplace(e.name, grads.at(id).template cast<float>());
    } else {
      out.emplace(e.name, Tensor::zeros(e.value.dims()));
    }
  }
  return out;
}

template class ParamBinding<float>;
template class ParamBinding<double>;

void adamw_step(ParamSet& params, const ParamGrads& grads, double lr, double weight_decay) {
  const AdamHyper hyper;
  for (const auto& [name, g] : grads) {
    const auto& e = params.entry(name);
    if (g.dims() != e.value.dims()) {
      throw ShapeError("adamw_step: gradient for '" + name + "' has dims " + shape_string(g.dims()) + ", parameter has " +
                       shape_string(e.value.dims()));
    }
    if (!g.all_finite()) throw NumericError("adamw_step: non-finite gradient for parameter '" + name + "'");
  }
  const std::int64_t step = params.step_ + 1;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  for (auto& e : params.entries_) {
    auto it = grads.find(e.name);
    const Tensor* g = it == grads.end() ? nullptr : &it->second;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double gi = g ? static_cast<double>((*g)[i]) : 0.0;
      const double m = hyper.beta1 * e.first_moment[i] + (1.0 - hyper.beta1) * gi;
      const double v = hyper.beta2 * e.second_moment[i] + (1.0 - hyper.beta2) * gi * gi;
      e.first_moment[i] = static_cast<float>(m);
      e.second_moment[i] = static_cast<float>(v);
      double p = e.value[i];
      p *= 1.0 - lr * weight_decay;
      p -= lr * (m / bc1) / (std::sqrt(v / bc2) + hyper.eps);
      e.value[i] = static_cast<float>(p);
    }
  }
  params.step_ = step;
}

}  // namespace lesiongen

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "lesiongen/tensor/graph.hpp"

namespace lesiongen {

/// Gradients keyed by parameter name.
using ParamGrads = std::map<std::string, Tensor>;

/// Named trainable tensors with AdamW moment buffers. Insertion order is kept
/// so that serialization and binding are deterministic.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor first_moment;
    Tensor second_moment;
  };

  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& value(const std::string& name) const;
  Tensor& value(const std::string& name);
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s);
  void reset_optimizer_state();

 private:
  friend void adamw_step(ParamSet&, const ParamGrads&, double, double);
  const Entry& entry(const std::string& name) const;

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::int64_t step_ = 0;
};

/// Graph leaves for every parameter of a ParamSet, in ParamSet order.
template <typename T>
class ParamBinding {
 public:
  ParamBinding(const ParamSet& params, BasicGraph<T>& graph, bool trainable);

  NodeId operator[](const std::string& name) const;
  /// Pulls parameter gradients out of a backward result. Parameters that did
  /// not reach the loss get zero gradients.
  ParamGrads gradients(const Gradients<T>& grads) const;

 private:
  const ParamSet* params_;
  std::unordered_map<std::string, NodeId> ids_;
};

extern template class ParamBinding<float>;
extern template class ParamBinding<double>;

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Decoupled-weight-decay Adam: p <- p(1 - lr*wd) - lr * mhat / (sqrt(vhat) + eps).
/// Throws NumericError naming the first parameter with a non-finite gradient;
/// parameters are untouched in that case.
void adamw_step(ParamSet& params, const ParamGrads& grads, double lr, double weight_decay);

}  // namespace lesiongen

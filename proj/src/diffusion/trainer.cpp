#include "lesiongen/diffusion/trainer.hpp"

#include <cmath>
#include <sstream>

#include "lesiongen/diffusion/sampler.hpp"

namespace lesiongen {

void TrainConfig::validate() const {
  if (batch_size < 1 || iterations < 1 || timesteps < 1 || respaced_length < 1 || base_channels < 1) {
    throw ValidationError("train config: batch size, iterations, T, respaced length and channels must be positive");
  }
  if (!(learning_rate > 0.0) || weight_decay < 0.0) throw ValidationError("train config: invalid learning rate or weight decay");
  if (respaced_length > timesteps) throw ValidationError("train config: respaced length exceeds T");
  if (skip < 0 || skip >= respaced_length) throw ValidationError("train config: skip must be in [0, respaced length)");
}

NoiseSchedule TrainConfig::make_noise_schedule() const { return make_schedule(schedule, timesteps, beta_min, beta_max); }

std::map<std::string, std::string> TrainConfig::to_meta() const {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  return {
      {"train.batch_size", std::to_string(batch_size)},
      {"train.iterations", std::to_string(iterations)},
      {"train.learning_rate", num(learning_rate)},
      {"train.weight_decay", num(weight_decay)},
      {"train.schedule", to_string(schedule)},
      {"train.timesteps", std::to_string(timesteps)},
      {"train.beta_min", num(beta_min)},
      {"train.beta_max", num(beta_max)},
      {"train.respaced_length", std::to_string(respaced_length)},
      {"train.skip", std::to_string(skip)},
      {"train.base_channels", std::to_string(base_channels)},
      {"train.seed", std::to_string(seed)},
  };
}

TrainConfig TrainConfig::from_meta(const std::map<std::string, std::string>& meta) {
  TrainConfig c;
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = meta.find(k);
    if (it == meta.end()) throw ValidationError("checkpoint lacks '" + k + "'");
    return it->second;
  };
  c.batch_size = std::stoi(get("train.batch_size"));
  c.iterations = std::stoi(get("train.iterations"));
  c.learning_rate = std::stod(get("train.learning_rate"));
  c.weight_decay = std::stod(get("train.weight_decay"));
  c.schedule = parse_schedule_kind(get("train.schedule"));
  c.timesteps = std::stoi(get("train.timesteps"));
  c.beta_min = std::stod(get("train.beta_min"));
  c.beta_max = std::stod(get("train.beta_max"));
  c.respaced_length = std::stoi(get("train.respaced_length"));
  c.skip = std::stoi(get("train.skip"));
  c.base_channels = std::stoi(get("train.base_channels"));
  c.seed = std::stoull(get("train.seed"));
  c.validate();
  return c;
}

template <typename T>
NodeId noise_prediction_loss(BasicGraph<T>& g, NodeId eps_pred, const Tensor& eps) {
  const NodeId target = g.constant(eps.template cast<T>());
  const NodeId diff = g.sub(eps_pred, target);
  return g.mean(g.mul(diff, diff));
}

template NodeId noise_prediction_loss(Graph&, NodeId, const Tensor&);
template NodeId noise_prediction_loss(GraphD&, NodeId, const Tensor&);

StepResult noise_loss_and_grads(const DenoiserNet& net, const Tensor& x0, std::span<const int> timesteps,
                                const Tensor& eps, const NoiseSchedule& schedule) {
  if (x0.rank() != 4 || x0.dim(0) < 1) throw ShapeError("train_step: batch must be [N,C,H,W] with N >= 1");
  if (static_cast<int>(timesteps.size()) != x0.dim(0)) throw ShapeError("train_step: one timestep per item");
  if (eps.dims() != x0.dims()) throw ShapeError("train_step: noise shape mismatch");
  const int n = x0.dim(0);
  std::vector<Tensor> noisy;
  noisy.reserve(static_cast<std::size_t>(n));
  for (int b = 0; b < n; ++b) {
    noisy.push_back(forward_sample(batch_slice(x0, b, b + 1), timesteps[static_cast<std::size_t>(b)],
                                   batch_slice(eps, b, b + 1), schedule));
  }
  Graph g;
  const ParamBinding<float> p(net.params(), g, true);
  const NodeId x = g.constant(batch_concat(noisy));
  const NodeId pred = net.forward(g, p, x, timesteps).eps;
  const NodeId loss = noise_prediction_loss(g, pred, eps);
  const double lv = g.value(loss).item();
  if (!std::isfinite(lv)) throw NumericError("train_step: non-finite loss");
  return StepResult{lv, p.gradients(g.backward(loss))};
}

double train_step(DenoiserNet& net, const Tensor& batch, const NoiseSchedule& schedule, Rng& rng, double lr,
                  double weight_decay) {
  if (batch.rank() != 4 || batch.dim(0) < 1) throw ShapeError("train_step: batch must be non-empty [N,C,H,W]");
  for (float v : batch.data()) {
    if (v < -1.0f || v > 1.0f) throw ValidationError("train_step: samples must lie in [-1, 1]");
  }
  std::vector<int> ts(static_cast<std::size_t>(batch.dim(0)));
  for (auto& t : ts) t = rng.uniform_int(1, schedule.steps());
  const Tensor eps = rng.normal_tensor(batch.dims());
  StepResult r = noise_loss_and_grads(net, batch, ts, eps, schedule);
  adamw_step(net.params(), r.grads, lr, weight_decay);
  return r.loss;
}

std::vector<double> train_denoiser(DenoiserNet& net, const Tensor& data, const TrainConfig& config,
                                   const TrainProgress& progress) {
  config.validate();
  if (data.rank() != 4 || data.dim(0) < 1) throw ShapeError("train_denoiser: data must be non-empty [N,C,H,W]");
  const NoiseSchedule schedule = config.make_noise_schedule();
  Rng rng(derive_seed(config.seed, "train"));
  const int n = data.dim(0);
  const std::size_t per = data.size() / static_cast<std::size_t>(n);
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(config.iterations));
  Shape bd = data.dims();
  bd[0] = config.batch_size;
  for (int it = 0; it < config.iterations; ++it) {
    std::vector<float> buf(per * static_cast<std::size_t>(config.batch_size));
    for (int b = 0; b < config.batch_size; ++b) {
      const int idx = rng.uniform_int(0, n - 1);
      std::copy_n(data.data().begin() + static_cast<std::ptrdiff_t>(per * idx), per, buf.begin() + static_cast<std::ptrdiff_t>(per * b));
    }
    const double loss = train_step(net, Tensor(bd, std::move(buf)), schedule, rng, config.learning_rate, config.weight_decay);
    losses.push_back(loss);
    if (progress) progress(it, loss);
  }
  return losses;
}

}  // namespace lesiongen

#include "lesiongen/repaint/repaint.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "lesiongen/diffusion/checkpoint.hpp"
#include "lesiongen/style/features.hpp"
#include "lesiongen/style/guidance.hpp"

namespace lesiongen {

// Half-to-even, so 32 px gives 2.
int scaled_dilation_radius(int height) { return static_cast<int>(std::nearbyint(20.0 * height / 256.0)); }

RepaintMask binarize_and_dilate(const Tensor& label, double threshold, int radius) {
  if (label.rank() != 4 || label.dim(1) != 1) throw ShapeError("binarize_and_dilate: expects [N,1,H,W], got " + shape_string(label.dims()));
  if (radius < 0) throw ValidationError("dilation radius must be >= 0");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("mask threshold must be in (0, 1)");
  const int n = label.dim(0), h = label.dim(2), w = label.dim(3);
  RepaintMask out;
  out.radius = radius;
  out.m = Tensor::ones(label.dims());
  // Separable max filter: Chebyshev dilation = row dilation then column dilation.
  for (int b = 0; b < n; ++b) {
    const float* src = label.data().data() + static_cast<std::size_t>(b) * h * w;
    std::vector<char> lab(static_cast<std::size_t>(h) * w), rows(static_cast<std::size_t>(h) * w, 0);
    for (int i = 0; i < h * w; ++i) lab[static_cast<std::size_t>(i)] = src[i] >= threshold;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!lab[static_cast<std::size_t>(y) * w + x]) continue;
        for (int dx = std::max(0, x - radius); dx <= std::min(w - 1, x + radius); ++dx) rows[static_cast<std::size_t>(y) * w + dx] = 1;
      }
    }
    float* dst = out.m.data().data() + static_cast<std::size_t>(b) * h * w;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!rows[static_cast<std::size_t>(y) * w + x]) continue;
        for (int dy = std::max(0, y - radius); dy <= std::min(h - 1, y + radius); ++dy) dst[static_cast<std::size_t>(dy) * w + x] = 0.f;
      }
    }
  }
  const auto known = std::count(out.m.data().begin(), out.m.data().end(), 1.f);
  out.all_known = known == static_cast<std::ptrdiff_t>(out.m.size());
  out.all_unknown = known == 0;
  return out;
}

RepaintMask mask_from_samples(const Tensor& samples, double threshold, int radius) {
  Tensor label = channel_slice(samples, 3, 4);
  for (auto& v : label.data()) v = (v + 1.f) * 0.5f;
  return binarize_and_dilate(label, threshold, radius);
}

RepaintPlan repaint_plan(int chain_len, int j, int r) {
  if (chain_len < 1) throw ValidationError("repaint_plan: chain length must be >= 1");
  if (j < 1 || r < 1) throw ValidationError("repaint_plan: jump length and resample count must be >= 1");
  if (j > chain_len) throw ValidationError("repaint_plan: jump length " + std::to_string(j) + " exceeds chain length " + std::to_string(chain_len));
  RepaintPlan plan;
  auto down = [&](int& t) {
    plan.transitions.emplace_back(t, t - 1);
    --t;
    ++plan.down;
  };
  int t = chain_len;
  while (t > 0) {
    const int block = std::min(j, t);
    for (int s = 0; s < block; ++s) down(t);
    if (block < j) continue;
    for (int cycle = 0; cycle < r - 1; ++cycle) {
      for (int s = 0; s < j; ++s) {
        plan.transitions.emplace_back(t, t + 1);
        ++t;
        ++plan.up;
      }
      for (int s = 0; s < j; ++s) down(t);
    }
  }
  return plan;
}

namespace {

void check_batch(const char* what, const Tensor& x, const Tensor& source, const RepaintMask& mask, const RngStreams& rngs) {
  if (x.rank() != 4 || x.dims() != source.dims()) {
    throw ShapeError(std::string(what) + ": x " + shape_string(x.dims()) + " and source " + shape_string(source.dims()) + " differ");
  }
  if (mask.m.dims() != Shape{x.dim(0), 1, x.dim(2), x.dim(3)}) {
    throw ShapeError(std::string(what) + ": mask " + shape_string(mask.m.dims()) + " does not match " + shape_string(x.dims()));
  }
  if (static_cast<int>(rngs.size()) != x.dim(0)) throw ValidationError(std::string(what) + ": need one rng stream per batch item");
}

Tensor draw_noise(const Shape& dims, RngStreams& rngs) {
  Tensor eps(dims);
  const std::size_t per = eps.size() / static_cast<std::size_t>(dims[0]);
  for (int b = 0; b < dims[0]; ++b) {
    for (std::size_t i = 0; i < per; ++i) eps[static_cast<std::size_t>(b) * per + i] = static_cast<float>(rngs[static_cast<std::size_t>(b)].normal());
  }
  return eps;
}

// out = known where m == 1, else unknown.
Tensor compose(const Tensor& known, const Tensor& unknown, const Tensor& m) {
  Tensor out = unknown;
  const int n = out.dim(0), c = out.dim(1);
  const std::size_t hw = static_cast<std::size_t>(out.dim(2)) * out.dim(3);
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < hw; ++i) {
        if (m[static_cast<std::size_t>(b) * hw + i] > 0.5f) {
          const std::size_t k = (static_cast<std::size_t>(b) * c + ch) * hw + i;
          out[k] = known[k];
        }
      }
    }
  }
  return out;
}

}  // namespace

Tensor repaint_step(const NoisePredictor& net, const Tensor& x_t, int position, const Tensor& source, const RepaintMask& mask,
                    const RespacedSchedule& schedule, RngStreams& rngs, VarianceMode mode) {
  check_batch("repaint_step", x_t, source, mask, rngs);
  Tensor known = source;
  if (position - 1 > 0) known = forward_sample(source, position - 1, draw_noise(source.dims(), rngs), schedule.chain);
  const Tensor unknown = reverse_step(net, x_t, position, schedule, rngs, mode);
  return compose(known, unknown, mask.m);
}

Tensor renoise_step(const Tensor& x_t, int position, const RespacedSchedule& schedule, RngStreams& rngs) {
  const double beta = schedule.chain.beta(position + 1);
  const Tensor eps = draw_noise(x_t.dims(), rngs);
  Tensor out(x_t.dims());
  const double a = std::sqrt(1.0 - beta), b = std::sqrt(beta);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(a * x_t[i] + b * eps[i]);
  return out;
}

Tensor repaint_batch(const NoisePredictor& net, const Tensor& sources, const RepaintMask& mask, const RespacedSchedule& schedule,
                     const RepaintPlan& plan, RngStreams& rngs, VarianceMode mode) {
  check_batch("repaint_batch", sources, sources, mask, rngs);
  Tensor x = draw_noise(sources.dims(), rngs);
  for (const auto& [from, to] : plan.transitions) {
    x = to < from ? repaint_step(net, x, from, sources, mask, schedule, rngs, mode) : renoise_step(x, from, schedule, rngs);
  }
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      float* p = x.data().data() + (static_cast<std::size_t>(b) * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] = ch == c - 1 ? (p[i] > 0.f ? 1.f : -1.f) : std::clamp(p[i], -1.f, 1.f);
    }
  }
  return compose(sources, x, mask.m);
}

void GenerationConfig::validate() const {
  if (samples < 1) throw ValidationError("samples per source must be >= 1");
  if (jump < 1 || resample < 1) throw ValidationError("jump length and resample count must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("mask threshold must be in (0, 1)");
  if (batch_size < 1) throw ValidationError("batch size must be >= 1");
}

std::pair<std::shared_ptr<DenoiserNet>, RespacedSchedule> load_denoiser(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  const TrainConfig cfg = TrainConfig::from_meta(ck.meta);
  DenoiserConfig dc;
  dc.base_channels = cfg.base_channels;
  dc.init_seed = cfg.seed;
  auto net = std::make_shared<DenoiserNet>(dc, std::move(ck.params));
  return {net, respace(cfg.make_noise_schedule(), cfg.respaced_length, cfg.skip)};
}

ModelBank::ModelBank(ClusterRegistry registry) : k_(registry.k), registry_(std::move(registry)) {
  slots_.resize(static_cast<std::size_t>(k_) + 1);
}

ModelBank::ModelBank(std::vector<std::shared_ptr<const NoisePredictor>> models, std::shared_ptr<const NoisePredictor> full,
                     RespacedSchedule schedule)
    : k_(static_cast<int>(models.size())) {
  auto sched = std::make_shared<const RespacedSchedule>(std::move(schedule));
  registry_.k = k_;
  for (auto& m : models) slots_.push_back({std::move(m), sched});
  slots_.push_back({std::move(full), sched});
  for (int j = 0; j < k_; ++j) {
    if (slots_[static_cast<std::size_t>(j)].net) registry_.checkpoints[j] = "<memory>";
  }
  if (slots_.back().net) registry_.full_checkpoint = "<memory>";
}

bool ModelBank::has_full() const { return registry_.full_checkpoint.has_value(); }

const ModelBank::Slot& ModelBank::load(int cluster) const {
  const bool full = cluster < 0;
  const std::size_t idx = full ? static_cast<std::size_t>(k_) : static_cast<std::size_t>(cluster);
  if (!full && cluster >= k_) throw ValidationError("unknown cluster " + std::to_string(cluster));
  Slot& slot = slots_[idx];
  if (slot.net) return slot;
  std::optional<std::filesystem::path> path;
  if (full) {
    path = registry_.full_checkpoint;
    if (!path) throw ValidationError("registry has no full-dataset checkpoint");
  } else {
    auto it = registry_.checkpoints.find(cluster);
    if (it == registry_.checkpoints.end()) throw ValidationError("cluster " + std::to_string(cluster) + " has no checkpoint");
    path = it->second;
  }
  auto [net, sched] = load_denoiser(*path);
  slot.net = std::move(net);
  slot.schedule = std::make_shared<const RespacedSchedule>(std::move(sched));
  return slot;
}

const NoisePredictor& ModelBank::model(int cluster) const {
  if (cluster < 0) throw ValidationError("cluster id must be >= 0");
  return *load(cluster).net;
}

const NoisePredictor& ModelBank::full() const { return *load(-1).net; }

const RespacedSchedule& ModelBank::schedule(int cluster) const { return *load(cluster).schedule; }

int ModelBank::pick(Rng& rng) const { return pick_model(registry_, rng); }

InpaintResult inpaint(const ModelBank& bank, const Tensor& sources, const GenerationConfig& config, std::uint64_t seed,
                      const std::vector<std::string>& source_ids) {
  config.validate();
  if (sources.rank() != 4 || sources.dim(1) != 4) throw ShapeError("inpaint: sources must be [S,4,H,W], got " + shape_string(sources.dims()));
  const int s_count = sources.dim(0);
  const int radius = config.radius >= 0 ? config.radius : scaled_dilation_radius(sources.dim(2));
  const RepaintMask masks = mask_from_samples(sources, config.threshold, radius);
  const std::size_t hw = static_cast<std::size_t>(sources.dim(2)) * sources.dim(3);
  auto id_of = [&](int s) { return s < static_cast<int>(source_ids.size()) ? source_ids[static_cast<std::size_t>(s)] : "#" + std::to_string(s); };

  InpaintResult res;
  std::vector<Tensor> outputs(static_cast<std::size_t>(s_count * config.samples));
  std::map<int, std::vector<int>> by_model;  // model -> job indices
  for (int s = 0; s < s_count; ++s) {
    const float* m = masks.m.data().data() + static_cast<std::size_t>(s) * hw;
    const auto known = std::count(m, m + hw, 1.f);
    const bool all_known = known == static_cast<std::ptrdiff_t>(hw);
    if (all_known) res.warnings.push_back("source " + id_of(s) + ": no label region, outputs equal the source");
    if (known == 0) res.warnings.push_back("source " + id_of(s) + ": mask covers the whole image, generation is unconditional");
    for (int k = 0; k < config.samples; ++k) {
      const int job = s * config.samples + k;
      InpaintJob j{s, k, -1};
      if (!config.full_diff) {
        Rng draw(derive_seed(seed, "inpaint-model", static_cast<std::uint64_t>(job)));
        j.model = bank.pick(draw);
      }
      res.jobs.push_back(j);
      if (all_known) {
        outputs[static_cast<std::size_t>(job)] = batch_slice(sources, s, s + 1);
      } else {
        by_model[j.model].push_back(job);
      }
    }
  }

  for (const auto& [model, jobs] : by_model) {
    const NoisePredictor& net = model < 0 ? bank.full() : bank.model(model);
    const RespacedSchedule& sched = bank.schedule(model);
    const RepaintPlan plan = repaint_plan(sched.length(), std::min(config.jump, sched.length()), config.resample);
    for (std::size_t begin = 0; begin < jobs.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(jobs.size(), begin + static_cast<std::size_t>(config.batch_size));
      std::vector<Tensor> src_parts, mask_parts;
      RngStreams rngs;
      for (std::size_t i = begin; i < end; ++i) {
        const int s = res.jobs[static_cast<std::size_t>(jobs[i])].source;
        src_parts.push_back(batch_slice(sources, s, s + 1));
        mask_parts.push_back(batch_slice(masks.m, s, s + 1));
        rngs.emplace_back(derive_seed(seed, "inpaint", static_cast<std::uint64_t>(jobs[i])));
      }
      RepaintMask bm;
      bm.m = batch_concat(mask_parts);
      bm.radius = radius;
      const Tensor out = repaint_batch(net, batch_concat(src_parts), bm, sched, plan, rngs, config.variance);
      for (std::size_t i = begin; i < end; ++i) {
        const int r = static_cast<int>(i - begin);
        outputs[static_cast<std::size_t>(jobs[i])] = batch_slice(out, r, r + 1);
      }
    }
  }
  res.outputs = batch_concat(outputs);
  return res;
}

}  // namespace lesiongen

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>

#include "acceptance.hpp"
#include "cli.hpp"
#include "lesiongen/diffusion/sampler.hpp"
#include "lesiongen/diffusion/trainer.hpp"
#include "lesiongen/io/dataset.hpp"
#include "lesiongen/io/toydata.hpp"
#include "lesiongen/repaint/repaint.hpp"
#include "lesiongen/seg/seg.hpp"

namespace fs = std::filesystem;

namespace lesiongen::acceptance {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

std::string seed_arg(const char* stage) { return std::to_string(derive_seed(kSeed, stage)); }

void stage(Context& ctx, const std::string& name, std::vector<std::string> args) {
  const fs::path out = ctx.work / name;
  if (ctx.reuse && fs::exists(out / "manifest.txt")) return;
  fs::remove_all(out);
  args.push_back("--out");
  args.push_back(out.string());
  const int code = run_cli(args, ctx.work / "cli.log");
  if (code != 0) throw std::runtime_error("CLI stage " + name + " exited with " + std::to_string(code) + " (see cli.log)");
}

Tensor rows(const Tensor& t, const std::vector<int>& idx) {
  std::vector<Tensor> parts;
  for (int i : idx) parts.push_back(batch_slice(t, i, i + 1));
  return batch_concat(parts);
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

}  // namespace

int run_cli(std::vector<std::string> args, const fs::path& log) {
  args.insert(args.begin(), "lesiongen");
  std::ofstream os(log, std::ios::app);
  os << "$";
  for (std::size_t i = 1; i < args.size(); ++i) os << " " << args[i];
  os << std::endl;
  auto* out = std::cout.rdbuf(os.rdbuf());
  auto* err = std::cerr.rdbuf(os.rdbuf());
  int code = 2;
  try {
    code = run_command(args);
  } catch (...) {
    std::cout.rdbuf(out);
    std::cerr.rdbuf(err);
    throw;
  }
  std::cout.rdbuf(out);
  std::cerr.rdbuf(err);
  return code;
}

const ToyRun& Context::toy_run() {
  if (run_) return *run_;
  const auto start = Clock::now();
  auto run = std::make_shared<ToyRun>();
  run->root = work;
  const std::string w = work.string();
  stage(*this, "toy", {"gen-toy-data", "--seed", seed_arg("toy")});
  stage(*this, "test", {"gen-toy-data", "--count", "100", "--seed", seed_arg("test")});
  stage(*this, "clu", {"cluster", "--data", w + "/toy", "--seed", seed_arg("cluster")});
  stage(*this, "tr", {"train", "--data", w + "/toy", "--registry", w + "/clu/registry.txt", "--iterations",
                      std::to_string(pipeline_iterations), "--seed", seed_arg("train")});
  stage(*this, "inp", {"inpaint", "--data", w + "/toy", "--registry", w + "/tr/registry.txt", "--samples", "1", "--seed",
                       seed_arg("inpaint")});
  const auto with_style = [this](std::vector<std::string> args) {
    for (const auto& kv : style_overrides) {
      args.push_back("--set");
      args.push_back(kv);
    }
    return args;
  };
  stage(*this, "sty", with_style({"stylize", "--data", w + "/toy", "--inpainted", w + "/inp", "--registry", w + "/tr/registry.txt",
                                  "--seed", seed_arg("stylize")}));
  stage(*this, "pool_inp", {"inpaint", "--data", w + "/toy", "--registry", w + "/tr/registry.txt", "--limit",
                            std::to_string(kPoolSize), "--samples", std::to_string(kPoolSamples), "--seed", seed_arg("pool-inpaint")});
  stage(*this, "pool_sty", with_style({"stylize", "--data", w + "/toy", "--inpainted", w + "/pool_inp", "--registry",
                                       w + "/tr/registry.txt", "--seed", seed_arg("pool-stylize")}));

  const Dataset real = load_dataset(work / "toy", 32);
  run->real = real.samples;
  run->real_ids = real.ids;
  run->test = load_dataset(work / "test", 32).samples;
  const Dataset diff = load_dataset(work / "inp", 32);
  run->diff = diff.samples;
  run->diff_ids = diff.ids;
  run->styled = load_dataset(work / "sty", 32).samples;
  run->pool_real = batch_slice(run->real, 0, kPoolSize);
  run->pool_styled = load_dataset(work / "pool_sty", 32).samples;
  if (run->diff.dim(0) != run->real.dim(0) || run->styled.dim(0) != run->real.dim(0) ||
      run->pool_styled.dim(0) != kPoolSize * kPoolSamples) {
    throw std::runtime_error("toy run produced unexpected set sizes");
  }

  // Noise control: uniform noise in all four channels, mask binarized at 0.
  run->noise = Tensor(run->real.dims());
  Rng rng(derive_seed(kSeed, "noise"));
  const std::size_t plane = 32 * 32;
  for (std::size_t i = 0; i < run->noise.size(); ++i) {
    const float v = static_cast<float>(rng.uniform(-1.0, 1.0));
    run->noise[i] = (i / plane) % 4 == 3 ? (v > 0.f ? 1.f : -1.f) : v;
  }
  if (!(reuse && fs::exists(work / "noise/manifest.txt"))) {
    fs::remove_all(work / "noise");
    save_dataset(run->noise, run->real_ids, work / "noise");
    std::ofstream(work / "noise/manifest.txt") << "noise control\n";
  }
  stage(*this, "ev", {"eval", "--data", w + "/toy", "--sets", "Diff=" + w + "/inp,Styled-Diff=" + w + "/sty,Noise=" + w + "/noise",
                      "--seed", seed_arg("eval")});
  run->build_seconds = seconds_since(start);
  run_ = run;
  return *run_;
}

Outcome criterion_toy_training(Context&) {
  const auto start = Clock::now();
  const ToyData toy = gen_toy_data(ToySpec{}, derive_seed(kSeed, "toy"));
  TrainConfig cfg;
  cfg.seed = derive_seed(kSeed, "toy-ddpm");
  DenoiserNet net({4, cfg.base_channels, 64, derive_seed(cfg.seed, "init")});
  const auto losses = train_denoiser(net, toy.samples, cfg);
  const double train_secs = seconds_since(start);
  constexpr int kSamples = 128;
  const Tensor s = sample(net, respace(cfg.make_noise_schedule(), cfg.respaced_length, 0), kSamples, derive_seed(kSeed, "toy-sample"));
  const double elapsed = seconds_since(start);

  Outcome out;
  const int n = toy.samples.dim(0);
  const std::size_t plane = 32 * 32;
  double worst_channel = 0.0, map_dev = 0.0;
  for (int c = 0; c < 4; ++c) {
    double mt = 0.0, ms = 0.0;
    std::vector<double> pt(plane, 0.0), ps(plane, 0.0);
    for (int b = 0; b < n; ++b) {
      for (std::size_t i = 0; i < plane; ++i) pt[i] += toy.samples[(static_cast<std::size_t>(b) * 4 + c) * plane + i] / n;
    }
    for (int b = 0; b < kSamples; ++b) {
      for (std::size_t i = 0; i < plane; ++i) ps[i] += s[(static_cast<std::size_t>(b) * 4 + c) * plane + i] / kSamples;
    }
    double dev = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      mt += pt[i] / plane;
      ms += ps[i] / plane;
      dev += std::abs(pt[i] - ps[i]) / plane;
    }
    worst_channel = std::max(worst_channel, std::abs(mt - ms));
    map_dev = std::max(map_dev, dev);
    out.note("channel " + std::to_string(c) + ": training mean " + fmt(mt) + ", sample mean " + fmt(ms) +
             ", mean |per-pixel difference| " + fmt(dev));
  }
  int polarized = 0;
  for (int b = 0; b < kSamples; ++b) {
    for (std::size_t i = 0; i < plane; ++i) polarized += std::abs(s[(static_cast<std::size_t>(b) * 4 + 3) * plane + i]) > 0.7f;
  }
  const double frac = polarized / static_cast<double>(kSamples * plane);
  double tail = 0.0;
  for (std::size_t i = losses.size() - 100; i < losses.size(); ++i) tail += losses[i] / 100;
  out.note("3000 iterations in " + secs(train_secs) + " s, final 100-step mean loss " + fmt(tail) + "; " +
           std::to_string(kSamples) + " samples");
  out.pass = worst_channel <= 0.15 && frac >= 0.95 && elapsed < 900.0;
  out.summary = "max channel mean gap " + fmt(worst_channel, 3) + " (limit 0.15), mask polarized " + fmt(100 * frac, 4) +
                "% (need 95%), " + secs(elapsed) + " s (limit 900 s)";
  return out;
}

Outcome criterion_repaint(Context& ctx) {
  const ToyRun& run = ctx.toy_run();
  std::map<std::string, int> source_row;
  for (std::size_t i = 0; i < run.real_ids.size(); ++i) source_row[run.real_ids[i]] = static_cast<int>(i);
  const int radius = scaled_dilation_radius(32);
  const std::size_t plane = 32 * 32;
  int checked = 0, exact = 0;
  long known_pixels = 0;
  for (int k = 0; k < 100; ++k) {
    const std::string& id = run.diff_ids[static_cast<std::size_t>(k)];
    const auto it = source_row.find(id.substr(0, id.rfind("_s")));
    if (it == source_row.end()) throw std::runtime_error("no source for " + id);
    const Tensor src = batch_slice(run.real, it->second, it->second + 1);
    const Tensor out = batch_slice(run.diff, k, k + 1);
    const RepaintMask mask = mask_from_samples(src, 0.5, radius);
    bool ok = true;
    for (std::size_t i = 0; i < plane; ++i) {
      if (mask.m[i] != 1.f) continue;
      ++known_pixels;
      for (int c = 0; c < 4; ++c) ok = ok && out[c * plane + i] == src[c * plane + i];
    }
    ++checked;
    exact += ok;
  }
  Outcome out;
  out.note("known region (" + std::to_string(known_pixels) + " pixels x 4 channels) bit-exact in " + std::to_string(exact) + "/" +
           std::to_string(checked) + " pipeline outputs");
  const bool plan_ok = repaint_plan_matches(out);
  out.pass = checked == 100 && exact == 100 && plan_ok;
  out.summary = std::to_string(exact) + "/100 outputs bit-exact; plan enumeration " + (plan_ok ? "matches" : "differs from") +
                " the reference";
  return out;
}

Outcome criterion_pipeline_fid(Context& ctx) {
  const ToyRun& run = ctx.toy_run();
  std::ifstream is(run.root / "ev/report.csv");
  std::map<std::string, double> fid;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    std::vector<std::string> f;
    std::size_t pos = 0;
    for (std::size_t next; (next = line.find(',', pos)) != std::string::npos; pos = next + 1) f.push_back(line.substr(pos, next - pos));
    f.push_back(line.substr(pos));
    if (f.size() >= 4 && f[1] == "FID" && f[2] == "0") fid[f[0]] = std::stod(f[3]);
  }
  for (const char* tag : {"Real", "Diff", "Styled-Diff", "Noise"}) {
    if (!fid.count(tag)) throw std::runtime_error(std::string("report.csv has no FID for ") + tag);
  }
  Outcome out;
  for (const auto& [tag, v] : fid) out.note("FID(" + tag + ", toy-real) = " + fmt(v, 6));
  const double ratio = fid["Noise"] / fid["Styled-Diff"];
  out.note("FID(Noise) / FID(Diff) = " + fmt(fid["Noise"] / fid["Diff"], 4) + " (unstyled inpainting, for reference)");
  out.note("toy run: K=4 clusters, " + std::to_string(ctx.pipeline_iterations) + " iterations per cluster model, 1 sample per source; built in " +
           secs(run.build_seconds) + " s");
  std::string overrides;
  for (const auto& kv : ctx.style_overrides) overrides += " " + kv;
  out.note("stylize settings:" + (overrides.empty() ? std::string(" defaults") : overrides));
  out.pass = ratio >= 10.0;
  out.summary = "FID(Noise) / FID(Styled-Diff) = " + fmt(ratio, 4) + " (need >= 10)";
  return out;
}

Outcome criterion_seg_ordering(Context& ctx) {
  const ToyRun& run = ctx.toy_run();
  const auto start = Clock::now();
  const std::vector<std::pair<std::string, const Tensor*>> sets = {
      {"Real", &run.real}, {"Styled-Diff", &run.styled}, {"Diff", &run.diff}, {"Noise", &run.noise}};
  std::map<std::string, std::vector<double>> dice;
  for (int seed = 0; seed < 3; ++seed) {
    for (const auto& [tag, data] : sets) {
      SegTrainConfig cfg;
      cfg.seed = derive_seed(kSeed, "seg-order/" + tag, static_cast<std::uint64_t>(seed));
      SegNet net({8, derive_seed(kSeed, "seg-init", static_cast<std::uint64_t>(seed))});
      train_seg(net, *data, cfg);
      dice[tag].push_back(test_seg(net, run.test).dice);
    }
  }
  const double elapsed = seconds_since(start);
  Outcome out;
  for (const auto& [tag, data] : sets) {
    std::string per;
    for (double d : dice[tag]) per += (per.empty() ? "" : ", ") + fmt(d);
    out.note(tag + "-trained: mean Dice " + fmt(mean(dice[tag])) + " (" + per + ")");
  }
  const double real = mean(dice["Real"]), styled = mean(dice["Styled-Diff"]), diff = mean(dice["Diff"]), noise = mean(dice["Noise"]);
  const bool order = real >= styled && styled > noise;
  const bool styling = styled >= diff;
  out.note(std::string("Real >= Styled-Diff > Noise: ") + (order ? "holds" : "violated") + "; Styled-Diff >= Diff: " +
           (styling ? "holds" : "violated") + "; 12 trainings on " + std::to_string(run.test.dim(0)) + " held-out samples");
  out.pass = order && styling && elapsed < 1200.0;
  out.summary = "Dice Real " + fmt(real, 3) + ", Styled-Diff " + fmt(styled, 3) + ", Diff " + fmt(diff, 3) + ", Noise " +
                fmt(noise, 3) + "; " + secs(elapsed) + " s (limit 1200 s, generation counted under criterion 8)";
  return out;
}

Outcome criterion_augmentation(Context& ctx) {
  Outcome out;
  // Part 1: size distribution against Binomial(N, alpha), N = 16, 1000 seeds.
  constexpr int kN = 16;
  AugPlan plan;  // alpha 0.5, r 3, m 3
  Rng rng(derive_seed(kSeed, "aug-size"));
  Tensor real({kN, 4, 4, 4}), synth({kN * 3, 4, 4, 4});
  for (auto& v : real.data()) v = rng.uniform() < 0.5 ? 1.f : -1.f;
  for (auto& v : synth.data()) v = rng.uniform() < 0.5 ? 1.f : -1.f;
  std::vector<int> hist(kN + 1, 0);
  bool sizes_ok = true;
  double size_sum = 0.0;
  constexpr int kDraws = 1000;
  for (int s = 0; s < kDraws; ++s) {
    plan.seed = derive_seed(kSeed, "aug-size", static_cast<std::uint64_t>(s));
    const AugResult r = augment_dataset(real, synth, plan);
    sizes_ok = sizes_ok && r.data.dim(0) == kN + r.replaced * (plan.r - 1);
    ++hist[static_cast<std::size_t>(r.replaced)];
    size_sum += r.data.dim(0);
  }
  // Chi-square with both tails pooled until their expected counts reach 5.
  std::vector<double> expected(kN + 1);
  for (int k = 0; k <= kN; ++k) {
    expected[static_cast<std::size_t>(k)] =
        kDraws * std::exp(std::lgamma(kN + 1) - std::lgamma(k + 1) - std::lgamma(kN - k + 1) - kN * std::log(2.0));
  }
  int lo = 0, hi = kN;
  double e_lo = expected[0], e_hi = expected[kN];
  while (e_lo < 5) e_lo += expected[static_cast<std::size_t>(++lo)];
  while (e_hi < 5) e_hi += expected[static_cast<std::size_t>(--hi)];
  double o_lo = 0, o_hi = 0;
  for (int k = 0; k <= lo; ++k) o_lo += hist[static_cast<std::size_t>(k)];
  for (int k = hi; k <= kN; ++k) o_hi += hist[static_cast<std::size_t>(k)];
  double chi = (o_lo - e_lo) * (o_lo - e_lo) / e_lo + (o_hi - e_hi) * (o_hi - e_hi) / e_hi;
  int bins = 2;
  for (int k = lo + 1; k < hi; ++k, ++bins) {
    const double e = expected[static_cast<std::size_t>(k)], o = hist[static_cast<std::size_t>(k)];
    chi += (o - e) * (o - e) / e;
  }
  const double dof = bins - 1;
  const double z = (std::cbrt(chi / dof) - (1 - 2 / (9 * dof))) / std::sqrt(2 / (9 * dof));
  const double p = 0.5 * std::erfc(z / std::sqrt(2.0));  // Wilson-Hilferty
  const double mean_size = size_sum / kDraws, expect = kN * (1 - plan.alpha + plan.alpha * plan.r);
  const double se = (plan.r - 1) * std::sqrt(kN * plan.alpha * (1 - plan.alpha)) / std::sqrt(static_cast<double>(kDraws));
  const bool dist_ok = sizes_ok && p > 0.001 && std::abs(mean_size - expect) <= 3 * se;
  out.note("size distribution: chi-square " + fmt(chi) + " on " + fmt(dof, 2) + " dof, p = " + fmt(p, 3) + "; mean size " +
           fmt(mean_size) + " vs " + fmt(expect) + " +- " + fmt(3 * se, 3) + "; sizes in {N + k(r-1)}: " + (sizes_ok ? "yes" : "no"));

  // Part 2: N = 16 real vs augmented training, 5 seeds.
  const ToyRun& run = ctx.toy_run();
  std::vector<double> iou_real, iou_aug;
  for (int seed = 0; seed < 5; ++seed) {
    Rng pick(derive_seed(kSeed, "aug-subset", static_cast<std::uint64_t>(seed)));
    std::vector<int> idx = pick.sample_without_replacement(kPoolSize, kN);
    std::vector<int> synth_idx;
    for (int i : idx) {
      for (int m = 0; m < kPoolSamples; ++m) synth_idx.push_back(i * kPoolSamples + m);
    }
    const Tensor real16 = rows(run.pool_real, idx), synth48 = rows(run.pool_styled, synth_idx);
    SegTrainConfig cfg;
    cfg.seed = derive_seed(kSeed, "aug-train", static_cast<std::uint64_t>(seed));
    const SegNetConfig net_cfg{8, derive_seed(kSeed, "aug-init", static_cast<std::uint64_t>(seed))};
    SegNet a(net_cfg);
    train_seg(a, real16, cfg);
    iou_real.push_back(test_seg(a, run.test).iou);
    AugPlan aug;
    aug.seed = derive_seed(kSeed, "aug-plan", static_cast<std::uint64_t>(seed));
    const AugResult augmented = augment_dataset(real16, synth48, aug);
    SegNet b(net_cfg);
    train_seg(b, augmented.data, cfg);
    iou_aug.push_back(test_seg(b, run.test).iou);
    out.note("seed " + std::to_string(seed) + ": real-only IoU " + fmt(iou_real.back()) + ", augmented IoU " + fmt(iou_aug.back()) +
             " (" + std::to_string(augmented.data.dim(0)) + " training samples, " + std::to_string(augmented.replaced) + " replaced)");
  }
  const bool ordering = mean(iou_aug) >= mean(iou_real);
  out.pass = dist_ok && ordering;
  out.summary = "binomial fit p = " + fmt(p, 3) + "; N=16 mean IoU augmented " + fmt(mean(iou_aug), 3) + " vs real-only " +
                fmt(mean(iou_real), 3);
  return out;
}

}  // namespace lesiongen::acceptance

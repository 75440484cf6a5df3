#include "lesiongen/io/toydata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "lesiongen/error.hpp"
#include "lesiongen/io/dataset.hpp"
#include "lesiongen/rng.hpp"

namespace lesiongen {

namespace {

struct Wave {
  double fx, fy, phase, amp;
};

bool in_polygon(const std::vector<std::pair<double, double>>& poly, double y, double x) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [yi, xi] = poly[i];
    const auto [yj, xj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

}  // namespace

ToyData gen_toy_data(const ToySpec& spec, std::uint64_t seed) {
  if (spec.count < 1) throw ValidationError("gen_toy_data: count must be >= 1");
  if (spec.size < 8) throw ValidationError("gen_toy_data: size must be >= 8");
  const int s = spec.size;
  const std::size_t hw = static_cast<std::size_t>(s) * s;
  ToyData out;
  out.samples = Tensor({spec.count, 4, s, s});
  for (int n = 0; n < spec.count; ++n) {
    Rng rng(derive_seed(seed, spec.shifted ? "toy-shifted" : "toy", static_cast<std::uint64_t>(n)));
    char id[32];
    std::snprintf(id, sizeof id, "toy_%05d", n);
    out.ids.emplace_back(id);

    // background
    const double base[3] = {(spec.shifted ? 0.70 : 0.78) + rng.uniform(-0.05, 0.05), (spec.shifted ? 0.50 : 0.42) + rng.uniform(-0.04, 0.04),
                            (spec.shifted ? 0.47 : 0.40) + rng.uniform(-0.04, 0.04)};
    const double f_lo = spec.shifted ? 0.6 : 0.2, f_hi = spec.shifted ? 1.2 : 0.6;
    const double amp = spec.shifted ? 0.10 : 0.06, grain = spec.shifted ? 0.04 : 0.02;
    std::vector<Wave> waves;
    for (int k = 0; k < 3; ++k) {
      const double f = rng.uniform(f_lo, f_hi), th = rng.uniform(0, std::numbers::pi);
      waves.push_back({f * std::cos(th) * 32.0 / s, f * std::sin(th) * 32.0 / s, rng.uniform(0, 2 * std::numbers::pi), amp * rng.uniform(0.5, 1.0)});
    }
    const double vx = rng.uniform(0.3, 0.7) * s, vy = rng.uniform(0.3, 0.7) * s;

    // lesion
    const double cy = rng.uniform(0.25, 0.75) * s, cx = rng.uniform(0.25, 0.75) * s;
    const bool ellipse = rng.bernoulli(0.5);
    const double a = rng.uniform(0.12, 0.25) * s, b = rng.uniform(0.12, 0.25) * s, rot = rng.uniform(0, std::numbers::pi);
    std::vector<std::pair<double, double>> poly;
    if (!ellipse) {
      const int k = rng.uniform_int(5, 7);
      const double r0 = rng.uniform(0.12, 0.25) * s;
      for (int i = 0; i < k; ++i) {
        const double t = 2 * std::numbers::pi * (i + rng.uniform(-0.3, 0.3)) / k, r = r0 * rng.uniform(0.75, 1.25);
        poly.emplace_back(cy + r * std::sin(t), cx + r * std::cos(t));
      }
    }
    const double tint[3] = {rng.uniform(0.80, 0.90), rng.uniform(0.60, 0.72), rng.uniform(0.65, 0.78)};
    const double spot_f = rng.uniform(1.0, 1.6) * 32.0 / s, spot_p = rng.uniform(0, 2 * std::numbers::pi);

    std::vector<char> inside(hw, 0);
    bool any = false;
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const double py = y + 0.5, pxx = x + 0.5;
        bool in;
        if (ellipse) {
          const double dy = py - cy, dx = pxx - cx;
          const double u = dx * std::cos(rot) + dy * std::sin(rot), v = -dx * std::sin(rot) + dy * std::cos(rot);
          in = (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
        } else {
          in = in_polygon(poly, py, pxx);
        }
        inside[static_cast<std::size_t>(y) * s + x] = in;
        any |= in;
      }
    }
    // A degenerate polygon still gets the pixel under its center.
    if (!any) inside[static_cast<std::size_t>(std::clamp(static_cast<int>(cy), 0, s - 1)) * s + std::clamp(static_cast<int>(cx), 0, s - 1)] = 1;

    float* px = out.samples.data().data() + static_cast<std::size_t>(n) * 4 * hw;
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const bool in = inside[static_cast<std::size_t>(y) * s + x];
        double tex = 0.0;
        for (const auto& w : waves) tex += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
        const double r2 = ((x - vx) * (x - vx) + (y - vy) * (y - vy)) / (s * s);
        const double shade = 1.0 - 0.35 * r2;
        const double spots = in ? 0.05 * std::sin(spot_f * x + spot_p) * std::sin(spot_f * y - spot_p) : 0.0;
        for (int c = 0; c < 3; ++c) {
          double v = (base[c] * (in ? tint[c] : 1.0) + tex + spots) * shade + grain * rng.normal();
          v = std::clamp(v, 0.0, 1.0) * 2.0 - 1.0;
          px[static_cast<std::size_t>(c) * hw + static_cast<std::size_t>(y) * s + x] = static_cast<float>(to_byte(static_cast<float>(v)) / 127.5 - 1.0);
        }
        px[3 * hw + static_cast<std::size_t>(y) * s + x] = in ? 1.f : -1.f;
      }
    }
  }
  return out;
}

}  // namespace lesiongen

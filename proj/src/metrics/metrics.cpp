#include "lesiongen/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "lesiongen/cluster/cluster.hpp"
#include "lesiongen/diffusion/sampler.hpp"
#include "lesiongen/error.hpp"
#include "lesiongen/hash.hpp"
#include "lesiongen/rng.hpp"

namespace lesiongen {

GaussianStats gaussian_stats(const Eigen::MatrixXd& features) {
  if (features.rows() < 2) throw ValidationError("gaussian_stats: need at least 2 feature vectors, got " + std::to_string(features.rows()));
  if (!features.allFinite()) throw NumericError("gaussian_stats: non-finite feature value");
  GaussianStats s;
  s.count = static_cast<int>(features.rows());
  s.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(s.count - 1);
  s.cov = 0.5 * (s.cov + s.cov.transpose()).eval();
  return s;
}

namespace {

bool near_singular(const Eigen::VectorXd& eig) {
  const double hi = eig.maxCoeff();
  return !(hi > 0.0) || eig.minCoeff() <= 1e-10 * hi;
}

}  // namespace

FidResult fid_detail(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != a.mean.size() || b.cov.rows() != b.mean.size()) {
    throw ValidationError("fid: dimension mismatch (" + std::to_string(a.mean.size()) + " vs " + std::to_string(b.mean.size()) + ")");
  }
  const auto n = a.mean.size();
  Eigen::MatrixXd sa = a.cov, sb = b.cov;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(sa);
  FidResult out;
  if (near_singular(ea.eigenvalues()) || near_singular(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sb, Eigen::EigenvaluesOnly).eigenvalues())) {
    sa += kFidJitter * Eigen::MatrixXd::Identity(n, n);
    sb += kFidJitter * Eigen::MatrixXd::Identity(n, n);
    ea.compute(sa);
    out.jittered = true;
  }
  const Eigen::VectorXd root = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd half = ea.eigenvectors() * root.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd inner = half * sb * half;
  inner = 0.5 * (inner + inner.transpose()).eval();
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(inner, Eigen::EigenvaluesOnly).eigenvalues();
  const double tr_root = ev.cwiseMax(0.0).cwiseSqrt().sum();
  const double v = (a.mean - b.mean).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_root;
  if (!std::isfinite(v)) throw NumericError("fid: non-finite result");
  out.value = std::max(0.0, v);
  return out;
}

// ---- MS-SSIM ----

std::vector<double> ms_ssim_weights(int levels) {
  static const double base[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  if (levels < 1 || levels > 5) throw ValidationError("ms_ssim: levels must be in [1, 5]");
  std::vector<double> w(base, base + levels);
  double s = 0.0;
  for (double v : w) s += v;
  for (double& v : w) v /= s;
  return w;
}

int max_ms_ssim_levels(int height, int width) {
  int levels = 0;
  for (int m = std::min(height, width); m >= kSsimWindow; m /= 2) ++levels;
  return levels;
}

namespace {

struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

std::vector<double> gaussian_window() {
  std::vector<double> g(kSsimWindow);
  double s = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    s += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= s;
  return g;
}

Plane filter(const Plane& p, SsimPadding pad) {
  static const std::vector<double> g = gaussian_window();
  const int r = kSsimWindow / 2;
  const bool valid = pad == SsimPadding::Valid;
  const int oh = valid ? p.h - 2 * r : p.h, ow = valid ? p.w - 2 * r : p.w;
  Plane rows{p.h, ow, std::vector<double>(static_cast<std::size_t>(p.h) * ow)};
  for (int y = 0; y < p.h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) {
        const int sx = valid ? x + k : ((x + k - r) % p.w + p.w) % p.w;
        s += g[static_cast<std::size_t>(k)] * p.at(y, sx);
      }
      rows.v[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  Plane out{oh, ow, std::vector<double>(static_cast<std::size_t>(oh) * ow)};
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) {
        const int sy = valid ? y + k : ((y + k - r) % p.h + p.h) % p.h;
        s += g[static_cast<std::size_t>(k)] * rows.at(sy, x);
      }
      out.v[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane out = a;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.v[i];
  return out;
}

Plane pool(const Plane& p) {
  Plane out{p.h / 2, p.w / 2, {}};
  out.v.resize(static_cast<std::size_t>(out.h) * out.w);
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) {
      out.v[static_cast<std::size_t>(y) * out.w + x] =
          0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) + p.at(2 * y + 1, 2 * x) + p.at(2 * y + 1, 2 * x + 1));
    }
  }
  return out;
}

// Mean luminance and contrast-structure terms at one scale.
std::pair<double, double> ssim_terms(const Plane& a, const Plane& b, SsimPadding pad) {
  constexpr double L = 2.0, c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);
  const Plane ma = filter(a, pad), mb = filter(b, pad);
  const Plane saa = filter(product(a, a), pad), sbb = filter(product(b, b), pad), sab = filter(product(a, b), pad);
  double lum = 0.0, cs = 0.0;
  for (std::size_t i = 0; i < ma.v.size(); ++i) {
    const double mua = ma.v[i], mub = mb.v[i];
    const double va = saa.v[i] - mua * mua, vb = sbb.v[i] - mub * mub, cov = sab.v[i] - mua * mub;
    lum += (2.0 * mua * mub + c1) / (mua * mua + mub * mub + c1);
    cs += (2.0 * cov + c2) / (va + vb + c2);
  }
  const double n = static_cast<double>(ma.v.size());
  return {lum / n, cs / n};
}

Shape image_dims(const Tensor& t) {
  if (t.rank() == 3) return t.dims();
  if (t.rank() == 4 && t.dim(0) == 1) return {t.dim(1), t.dim(2), t.dim(3)};
  throw ShapeError("ms_ssim: expects [C,H,W] or [1,C,H,W], got " + shape_string(t.dims()));
}

}  // namespace

double ms_ssim(const Tensor& a, const Tensor& b, int levels, const std::vector<double>& weights, SsimPadding padding) {
  const Shape da = image_dims(a), db = image_dims(b);
  if (da != db) throw ShapeError("ms_ssim: shapes differ: " + shape_string(a.dims()) + " vs " + shape_string(b.dims()));
  const int c = da[0], h = da[1], w = da[2];
  const int max_levels = max_ms_ssim_levels(h, w);
  if (levels < 1 || levels > max_levels) {
    throw ValidationError("ms_ssim: " + std::to_string(h) + "x" + std::to_string(w) + " images support at most " + std::to_string(max_levels) +
                          " levels with an 11x11 window, requested " + std::to_string(levels));
  }
  if (static_cast<int>(weights.size()) != levels) throw ValidationError("ms_ssim: need one weight per level");
  double wsum = 0.0;
  for (double v : weights) wsum += v;
  if (std::abs(wsum - 1.0) > 1e-6) throw ValidationError("ms_ssim: weights must sum to 1");
  double total = 0.0;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    Plane pa{h, w, std::vector<double>(a.data().begin() + static_cast<std::ptrdiff_t>(ch * hw), a.data().begin() + static_cast<std::ptrdiff_t>((ch + 1) * hw))};
    Plane pb{h, w, std::vector<double>(b.data().begin() + static_cast<std::ptrdiff_t>(ch * hw), b.data().begin() + static_cast<std::ptrdiff_t>((ch + 1) * hw))};
    double value = 1.0;
    for (int l = 0; l < levels; ++l) {
      const auto [lum, cs] = ssim_terms(pa, pb, padding);
      const double wl = weights[static_cast<std::size_t>(l)];
      value *= std::pow(std::max(cs, 0.0), wl);
      if (l == levels - 1) {
        value *= std::pow(std::max(lum, 0.0), wl);
      } else {
        pa = pool(pa);
        pb = pool(pb);
      }
    }
    total += value;
  }
  return total / c;
}

double ms_ssim(const Tensor& a, const Tensor& b) {
  const Shape d = image_dims(a);
  const int levels = default_ms_ssim_levels(d[1], d[2]);
  return ms_ssim(a, b, levels, ms_ssim_weights(levels));
}

// ---- segmentation ----

SegScore seg_metrics(const Tensor& pred, const Tensor& gt) {
  if (pred.dims() != gt.dims()) throw ShapeError("seg_metrics: shapes differ: " + shape_string(pred.dims()) + " vs " + shape_string(gt.dims()));
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const float a = pred[i], b = gt[i];
    if ((a != 0.f && a != 1.f) || (b != 0.f && b != 1.f)) throw ValidationError("seg_metrics: masks must be binary (0/1)");
    p += a == 1.f;
    g += b == 1.f;
    both += a == 1.f && b == 1.f;
  }
  SegScore s;
  if (p + g == 0) return s;
  s.dice = 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
  s.iou = static_cast<double>(both) / static_cast<double>(p + g - both);
  return s;
}

// ---- report ----

const ReportCell* MetricsReport::find(const std::string& tag, const std::string& metric, int repeat) const {
  for (const auto& c : cells) {
    if (c.tag == tag && c.metric == metric && c.repeat == repeat) return &c;
  }
  return nullptr;
}

namespace {

std::vector<std::string> unique_in_order(const std::vector<ReportCell>& cells, std::string ReportCell::*field) {
  std::vector<std::string> out;
  for (const auto& c : cells) {
    if (std::find(out.begin(), out.end(), c.*field) == out.end()) out.push_back(c.*field);
  }
  return out;
}

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

std::vector<std::string> MetricsReport::tags() const { return unique_in_order(cells, &ReportCell::tag); }
std::vector<std::string> MetricsReport::metrics() const { return unique_in_order(cells, &ReportCell::metric); }

void MetricsReport::write_csv(std::ostream& os) const {
  os << "tag,metric,repeat,value,seed,dataset_hash,note\n";
  for (const auto& c : cells) {
    os << c.tag << ',' << c.metric << ',' << c.repeat << ',' << (c.absent ? std::string("absent") : fmt(c.value, "%.10g")) << ',' << c.seed << ','
       << c.dataset_hash << ',' << c.note << '\n';
  }
}

void MetricsReport::write_table(std::ostream& os) const {
  const auto ms = metrics();
  int reps = repeats;
  for (const auto& c : cells) reps = std::max(reps, c.repeat + 1);
  std::size_t tag_w = 8;
  for (const auto& t : tags()) tag_w = std::max(tag_w, t.size() + 2);
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.insert(0, w - s.size(), ' ');
    return s;
  };
  std::string head = std::string("Data type") + std::string(tag_w > 9 ? tag_w - 9 : 1, ' ');
  for (const auto& m : ms) {
    for (int r = 0; r < reps; ++r) head += pad(m + "#" + std::to_string(r + 1), 14);
  }
  os << head << '\n' << std::string(head.size(), '-') << '\n';
  for (const auto& t : tags()) {
    std::string row = t + std::string(tag_w - t.size(), ' ');
    for (const auto& m : ms) {
      for (int r = 0; r < reps; ++r) {
        const ReportCell* c = find(t, m, r);
        row += pad(!c ? "" : c->absent ? "absent" : fmt(c->value), 14);
      }
    }
    os << row << '\n';
  }
}

namespace {

void add_rows(MetricsReport& report, const std::string& tag, const Tensor& samples, const GaussianStats& ref, const FeatureExtractor& extractor,
              const ReportConfig& config) {
  const std::string hash = hex64(tensor_hash(samples));
  const int n = samples.rank() == 4 ? samples.dim(0) : 0;
  for (int r = 0; r < config.repeats; ++r) {
    const std::uint64_t seed = derive_seed(config.seed, "report/" + tag, static_cast<std::uint64_t>(r));
    if (n < 2) {
      report.add({tag, "FID", r, 0.0, true, seed, hash, "fewer than 2 samples"});
      report.add({tag, "MS-SSIM", r, 0.0, true, seed, hash, "fewer than 2 samples"});
    }
  }
  if (n < 2) return;
  const FidResult f = fid_detail(gaussian_stats(embed_samples(samples, extractor)), ref);
  const int levels = config.ssim_levels > 0 ? config.ssim_levels : default_ms_ssim_levels(samples.dim(2), samples.dim(3));
  const auto weights = ms_ssim_weights(levels);
  for (int r = 0; r < config.repeats; ++r) {
    const std::uint64_t seed = derive_seed(config.seed, "report/" + tag, static_cast<std::uint64_t>(r));
    Rng rng(seed);
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order.begin(), order.end());
    double acc = 0.0;
    for (int p = 0; p < config.ssim_pairs; ++p) {
      const auto ij = rng.sample_without_replacement(n, 2);
      const int i = order[static_cast<std::size_t>(ij[0])], j = order[static_cast<std::size_t>(ij[1])];
      acc += ms_ssim(channel_slice(batch_slice(samples, i, i + 1), 0, 3), channel_slice(batch_slice(samples, j, j + 1), 0, 3), levels, weights);
    }
    report.add({tag, "FID", r, f.value, false, seed, hash, f.jittered ? "jitter=1e-06" : ""});
    report.add({tag, "MS-SSIM", r, acc / std::max(1, config.ssim_pairs), false, seed, hash, ""});
  }
}

}  // namespace

MetricsReport eval_report(const std::map<std::string, Tensor>& datasets, const Tensor& reference, const FeatureExtractor& extractor,
                          const ReportConfig& config) {
  if (reference.rank() != 4 || reference.dim(0) < 2) throw ValidationError("eval_report: reference set needs at least 2 samples");
  if (config.repeats < 1 || config.ssim_pairs < 1) throw ValidationError("eval_report: repeats and ssim_pairs must be >= 1");
  const GaussianStats ref = gaussian_stats(embed_samples(reference, extractor));
  MetricsReport report;
  report.repeats = config.repeats;
  add_rows(report, "Real", reference, ref, extractor, config);
  for (const auto& [tag, samples] : datasets) {
    if (tag != "Real") add_rows(report, tag, samples, ref, extractor, config);
  }
  return report;
}

}  // namespace lesiongen

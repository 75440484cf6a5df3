#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lesiongen/style/features.hpp"
#include "lesiongen/tensor/tensor.hpp"

namespace lesiongen {

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased, symmetrized
  int count = 0;
};

/// Rows of `features` are samples.
GaussianStats gaussian_stats(const Eigen::MatrixXd& features);

struct FidResult {
  double value = 0.0;
  bool jittered = false;
};

inline constexpr double kFidJitter = 1e-6;

/// Frechet distance between two Gaussians. The trace of (Sa Sb)^1/2 comes from
/// the eigenvalues of Sa^1/2 Sb Sa^1/2, clipped at zero. If either covariance
/// is near-singular both get kFidJitter * I and `jittered` is set.
FidResult fid_detail(const GaussianStats& a, const GaussianStats& b);
inline double fid(const GaussianStats& a, const GaussianStats& b) { return fid_detail(a, b).value; }

enum class SsimPadding { Valid, Circular };

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// The five-level constants truncated to `levels` and renormalized.
std::vector<double> ms_ssim_weights(int levels);
/// Largest level count whose coarsest scale still fits the window.
int max_ms_ssim_levels(int height, int width);
/// 2 at 32x32.
inline int default_ms_ssim_levels(int height, int width) { return std::min(max_ms_ssim_levels(height, width), 5); }

/// Images are [C,H,W] or [1,C,H,W] with values in [-1, 1] (dynamic range 2).
/// MS-SSIM is computed per channel and averaged. Negative contrast/luminance
/// terms are clipped to 0 before exponentiation.
double ms_ssim(const Tensor& a, const Tensor& b, int levels, const std::vector<double>& weights,
               SsimPadding padding = SsimPadding::Valid);
double ms_ssim(const Tensor& a, const Tensor& b);

struct SegScore {
  double dice = 1.0;
  double iou = 1.0;
};

/// Masks hold only 0 and 1. Both empty scores (1, 1).
SegScore seg_metrics(const Tensor& pred, const Tensor& gt);

struct ReportCell {
  std::string tag;
  std::string metric;
  int repeat = 0;
  double value = 0.0;
  bool absent = false;
  std::uint64_t seed = 0;
  std::string dataset_hash;
  std::string note;
};

struct MetricsReport {
  std::vector<ReportCell> cells;
  int repeats = 0;

  void add(ReportCell cell) { cells.push_back(std::move(cell)); }
  const ReportCell* find(const std::string& tag, const std::string& metric, int repeat) const;
  std::vector<std::string> tags() const;     // first-seen order
  std::vector<std::string> metrics() const;  // first-seen order

  void write_csv(std::ostream& os) const;
  /// One row per tag, one column per (metric, repeat).
  void write_table(std::ostream& os) const;
};

struct ReportConfig {
  int repeats = 3;
  int ssim_pairs = 50;
  int ssim_levels = -1;  // -1: default for the image size
  std::uint64_t seed = 0;
};

/// Every tag (and a "Real" control built from `reference`) gets FID against
/// the reference and mean within-set MS-SSIM over random color-channel pairs.
/// Samples are [N,4,H,W]. Tags with fewer than two samples are marked absent.
MetricsReport eval_report(const std::map<std::string, Tensor>& datasets, const Tensor& reference,
                          const FeatureExtractor& extractor, const ReportConfig& config);

}  // namespace lesiongen

#pragma once

#include <string>
#include <vector>

namespace lesiongen {

enum class ScheduleKind { Linear, Cosine };

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& s);

/// Reverse-step variance choice. FixedSmall is the posterior variance
/// beta_t (1 - abar_{t-1}) / (1 - abar_t); FixedLarge is beta_t.
enum class VarianceMode { FixedSmall, FixedLarge, None };

std::string to_string(VarianceMode mode);
VarianceMode parse_variance_mode(const std::string& s);

/// Variance schedule over timesteps 1..T. Timestep 0 is the clean endpoint
/// with alpha_bar(0) = 1.
class NoiseSchedule {
 public:
  /// Betas must lie in (0, 1).
  NoiseSchedule(ScheduleKind kind, std::vector<double> betas);

  ScheduleKind kind() const { return kind_; }
  int steps() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const;
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const;
  double posterior_variance(int t) const;
  double sigma(int t, VarianceMode mode) const;
  const std::vector<double>& betas() const { return betas_; }

 private:
  void check(int t) const;

  ScheduleKind kind_;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;  // index 0 holds abar(0) = 1
};

/// Linear: beta interpolates beta_min..beta_max. Cosine: beta from the
/// squared-cosine abar curve (offset 0.008), clipped at 0.999; the beta
/// range is validated but unused.
NoiseSchedule make_schedule(ScheduleKind kind, int steps, double beta_min, double beta_max);

/// Evenly spaced subsequence of a base schedule. Position k (1-based) of
/// the respaced chain corresponds to base timestep `indices[k-1]`, and the
/// recomputed betas reproduce base alpha_bar at those timesteps.
struct RespacedSchedule {
  NoiseSchedule base;
  std::vector<int> indices;
  NoiseSchedule chain;
  int skip = 0;

  int length() const { return static_cast<int>(indices.size()); }
  /// Position the reverse chain starts from when `skip` leading steps are omitted.
  int start_position() const { return length() - skip; }
  int model_timestep(int position) const;
};

RespacedSchedule respace(const NoiseSchedule& base, int target_len, int skip);

}  // namespace lesiongen

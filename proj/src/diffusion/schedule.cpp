#include "lesiongen/diffusion/schedule.hpp"

#include <cmath>

#include "lesiongen/error.hpp"

namespace lesiongen {

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::Linear ? "linear" : "cosine"; }

ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "linear") return ScheduleKind::Linear;
  if (s == "cosine") return ScheduleKind::Cosine;
  throw ValidationError("unknown schedule kind '" + s + "' (expected linear|cosine)");
}

std::string to_string(VarianceMode mode) {
  switch (mode) {
    case VarianceMode::FixedSmall: return "fixed-small";
    case VarianceMode::FixedLarge: return "fixed-large";
    case VarianceMode::None: return "none";
  }
  return "none";
}

VarianceMode parse_variance_mode(const std::string& s) {
  if (s == "fixed-small") return VarianceMode::FixedSmall;
  if (s == "fixed-large") return VarianceMode::FixedLarge;
  if (s == "none") return VarianceMode::None;
  throw ValidationError("unknown variance mode '" + s + "' (expected fixed-small|fixed-large|none)");
}

NoiseSchedule::NoiseSchedule(ScheduleKind kind, std::vector<double> betas) : kind_(kind), betas_(std::move(betas)) {
  if (betas_.empty()) throw ValidationError("noise schedule needs at least one step");
  alpha_bars_.reserve(betas_.size() + 1);
  alpha_bars_.push_back(1.0);
  for (double b : betas_) {
    if (!(b > 0.0 && b < 1.0)) throw ValidationError("schedule beta " + std::to_string(b) + " outside (0,1)");
    alpha_bars_.push_back(alpha_bars_.back() * (1.0 - b));
  }
}

void NoiseSchedule::check(int t) const {
  if (t < 1 || t > steps()) {
    throw ValidationError("timestep " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
  }
}

double NoiseSchedule::beta(int t) const {
  check(t);
  return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  check(t);
  return alpha_bars_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::posterior_variance(int t) const {
  check(t);
  return beta(t) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
}

double NoiseSchedule::sigma(int t, VarianceMode mode) const {
  switch (mode) {
    case VarianceMode::FixedSmall: return std::sqrt(posterior_variance(t));
    case VarianceMode::FixedLarge: return std::sqrt(beta(t));
    case VarianceMode::None: check(t); return 0.0;
  }
  return 0.0;
}

NoiseSchedule make_schedule(ScheduleKind kind, int steps, double beta_min, double beta_max) {
  if (steps < 1) throw ValidationError("schedule needs T >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw ValidationError("schedule requires 0 < beta_min <= beta_max < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  if (kind == ScheduleKind::Linear) {
    for (int t = 1; t <= steps; ++t) {
      const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
      betas[static_cast<std::size_t>(t - 1)] = beta_min + (beta_max - beta_min) * frac;
    }
  } else {
    constexpr double s = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / steps + s) / (1.0 + s) * M_PI / 2.0);
      return c * c;
    };
    for (int t = 1; t <= steps; ++t) {
      const double b = 1.0 - f(t) / f(t - 1);
      betas[static_cast<std::size_t>(t - 1)] = std::min(std::max(b, 1e-12), 0.999);
    }
  }
  return NoiseSchedule(kind, std::move(betas));
}

int RespacedSchedule::model_timestep(int position) const {
  if (position < 1 || position > length()) {
    throw ValidationError("respaced position " + std::to_string(position) + " outside 1.." + std::to_string(length()));
  }
  return indices[static_cast<std::size_t>(position - 1)];
}

RespacedSchedule respace(const NoiseSchedule& base, int target_len, int skip) {
  const int steps = base.steps();
  if (target_len < 1 || target_len > steps) {
    throw ValidationError("respace: target length " + std::to_string(target_len) + " outside 1.." + std::to_string(steps));
  }
  if (skip < 0 || skip >= target_len) throw ValidationError("respace: skip must satisfy 0 <= skip < target length");
  std::vector<int> idx(static_cast<std::size_t>(target_len));
  if (target_len == 1) {
    idx[0] = steps;
  } else {
    for (int i = 0; i < target_len; ++i) {
      idx[static_cast<std::size_t>(i)] =
          static_cast<int>(std::lround(1.0 + static_cast<double>(i) * (steps - 1) / (target_len - 1)));
    }
  }
  std::vector<double> betas;
  betas.reserve(idx.size());
  double prev = 1.0;
  for (int t : idx) {
    const double ab = base.alpha_bar(t);
    betas.push_back(1.0 - ab / prev);
    prev = ab;
  }
  return RespacedSchedule{base, std::move(idx), NoiseSchedule(base.kind(), std::move(betas)), skip};
}

}  // namespace lesiongen

#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "mtmr/core.hpp"

namespace mtmr {

enum class ScheduleKind { fixed, linear, exponential };

inline std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::fixed: return "fixed";
    case ScheduleKind::linear: return "linear";
    default: return "exponential";
  }
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "fixed") return ScheduleKind::fixed;
  if (s == "linear") return ScheduleKind::linear;
  if (s == "exponential") return ScheduleKind::exponential;
  throw std::invalid_argument("unknown schedule kind: " + s);
}

// Loss-weight schedule: alpha weights reconstruction, beta = 1 - alpha weights
// segmentation. The exponential kind is alpha(t) = max(exp(-t) - offset,
// floor) with t = epoch * t_scale; linear decays at the rate that reaches the
// floor at linear_end epochs; fixed holds fixed_alpha.
struct WeightSchedule {
  ScheduleKind kind = ScheduleKind::exponential;
  double fixed_alpha = 0.5;
  double t_scale = 1.0;
  double floor = 0.05;
  double offset = 0.2;
  double linear_end = 50.0;  // epoch at which the linear kind reaches the floor

  bool operator==(const WeightSchedule&) const = default;

  void validate() const {
    require(floor > 0.0 && floor < 1.0, "WeightSchedule: floor must be in (0,1)");
    require(offset >= 0.0 && offset < 1.0 - floor, "WeightSchedule: offset out of range");
    require(fixed_alpha >= 0.0 && fixed_alpha <= 1.0, "WeightSchedule: fixed_alpha out of range");
    require(t_scale > 0.0, "WeightSchedule: t_scale must be positive");
    require(linear_end > 0.0, "WeightSchedule: linear_end must be positive");
  }
};

// Both weights are computed branch-wise rather than as 1 - alpha: in doubles
// 1 - (exp(0) - 0.2) evaluates to 0.19999999999999996, while the complement
// form offset - expm1(-t) gives the exact 0.2 the schedule promises at t = 0.
inline std::pair<double, double> alpha_beta(const WeightSchedule& s, double epoch) {
  s.validate();
  require(epoch >= 0.0, "alpha_beta: epoch must be non-negative");
  const double t = epoch * s.t_scale;
  switch (s.kind) {
    case ScheduleKind::fixed:
      return {s.fixed_alpha, 1.0 - s.fixed_alpha};
    case ScheduleKind::linear: {
      const double slope = (1.0 - s.offset - s.floor) / (s.linear_end * s.t_scale);
      const double a = 1.0 - s.offset - slope * t;
      if (a <= s.floor) return {s.floor, 1.0 - s.floor};
      if (a >= 1.0) return {1.0, 0.0};
      return {a, s.offset + slope * t};
    }
    default: {
      const double a = std::exp(-t) - s.offset;
      if (a <= s.floor) return {s.floor, 1.0 - s.floor};
      return {a, s.offset + (-std::expm1(-t))};
    }
  }
}

}  // namespace mtmr

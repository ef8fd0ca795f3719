#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "mtmr/core.hpp"
#include "mtmr/rng.hpp"

namespace mtmr {

enum class ItfsScheduleKind { alternate_steps, bernoulli };

inline std::string to_string(ItfsScheduleKind k) {
  return k == ItfsScheduleKind::alternate_steps ? "alternate-steps" : "bernoulli";
}

inline ItfsScheduleKind itfs_schedule_from_string(const std::string& s) {
  if (s == "alternate-steps") return ItfsScheduleKind::alternate_steps;
  if (s == "bernoulli") return ItfsScheduleKind::bernoulli;
  throw std::invalid_argument("unknown itfs schedule: " + s);
}

// Iterative teacher forcing policy. On a teacher step the segmentation net is
// fed the fully sampled reference image; on a free step it sees the current
// reconstruction. Inference is always free-running.
struct ItfsPolicy {
  bool enabled = true;
  double teacher_ratio = 0.5;
  ItfsScheduleKind schedule = ItfsScheduleKind::alternate_steps;
  std::uint64_t seed = 0x69746673ull;

  bool operator==(const ItfsPolicy&) const = default;

  void validate() const {
    require(teacher_ratio >= 0.0 && teacher_ratio <= 1.0,
            "ItfsPolicy: teacher_ratio must be in [0,1]");
  }
};

// Deterministic alternate-steps rule: step k is a teacher step iff the count
// of teacher steps owed by k+1, ceil((k+1)*r), exceeds the count owed by k.
// Any window of n/r consecutive steps then holds n or n+1 teacher steps, and
// r = 0.5 puts teacher steps exactly on even k.
inline bool itfs_alternate_is_teacher(double ratio, std::uint64_t step) {
  const double k = static_cast<double>(step);
  return std::ceil((k + 1.0) * ratio) - std::ceil(k * ratio) == 1.0;
}

// The bernoulli schedule draws from rng (exactly one draw per enabled call,
// so the stream position stays in lockstep with the step counter).
inline bool itfs_is_teacher(const ItfsPolicy& p, std::uint64_t step, Rng& rng) {
  p.validate();
  if (!p.enabled) return false;
  if (p.schedule == ItfsScheduleKind::bernoulli) return rng.uniform() < p.teacher_ratio;
  return itfs_alternate_is_teacher(p.teacher_ratio, step);
}

}  // namespace mtmr

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mtmr/core.hpp"
#include "mtmr/rng.hpp"

namespace mtmr {

// 1D Cartesian line mask over phase-encode columns: a fully sampled center
// block plus Bernoulli-kept outer lines, tuned so the expected number of kept
// lines equals W / acceleration.
struct SamplingMask {
  std::vector<bool> lines;   // length W, true = line kept
  double center_fraction = 0.08;
  double acceleration = 4.0;
  std::uint64_t seed = 0;

  Index width() const { return static_cast<Index>(lines.size()); }
  Index kept_count() const {
    return static_cast<Index>(std::count(lines.begin(), lines.end(), true));
  }
};

inline Index center_line_count(Index width, double center_fraction) {
  return static_cast<Index>(std::floor(center_fraction * double(width)));
}

// [first, first + count) of the fully sampled center block.
inline std::pair<Index, Index> center_block(Index width, double center_fraction) {
  const Index n_c = center_line_count(width, center_fraction);
  return {(width - n_c) / 2, n_c};
}

// Keep probability for each line outside the center block, solved so the
// expected total kept count is width / acceleration.
inline double tail_keep_probability(Index width, double center_fraction, double acceleration) {
  const Index n_c = center_line_count(width, center_fraction);
  const double budget = double(width) / acceleration;
  if (width == n_c) return 1.0;
  return std::clamp((budget - double(n_c)) / double(width - n_c), 0.0, 1.0);
}

inline SamplingMask make_mask(Index width, double center_fraction, double acceleration,
                              std::uint64_t seed) {
  require(width >= 1, "make_mask: width must be positive");
  require(center_fraction > 0.0 && center_fraction < 1.0,
          "make_mask: center_fraction must be in (0, 1)");
  require(acceleration >= 1.0, "make_mask: acceleration must be >= 1");
  const Index n_c = center_line_count(width, center_fraction);
  if (double(n_c) > double(width) / acceleration + 1e-12)
    throw std::invalid_argument("make_mask: center block alone exceeds the sampling budget");

  SamplingMask mask;
  mask.center_fraction = center_fraction;
  mask.acceleration = acceleration;
  mask.seed = seed;
  mask.lines.assign(static_cast<std::size_t>(width), false);

  const auto [first, count] = center_block(width, center_fraction);
  for (Index i = first; i < first + count; ++i) mask.lines[static_cast<std::size_t>(i)] = true;

  const double p = tail_keep_probability(width, center_fraction, acceleration);
  Rng rng(derive_seed(seed, 0x6d61736bull));  // "mask"
  for (Index i = 0; i < width; ++i) {
    if (i >= first && i < first + count) continue;
    if (rng.uniform() < p) mask.lines[static_cast<std::size_t>(i)] = true;
  }
  return mask;
}

// One-line text form: "W center_fraction acceleration seed : 0110...".
inline std::string mask_to_text(const SamplingMask& mask) {
  std::ostringstream os;
  os.precision(17);
  os << mask.width() << ' ' << mask.center_fraction << ' ' << mask.acceleration << ' '
     << mask.seed << " : ";
  for (bool b : mask.lines) os << (b ? '1' : '0');
  return os.str();
}

inline SamplingMask mask_from_text(const std::string& line) {
  std::istringstream is(line);
  Index width = 0;
  SamplingMask mask;
  std::string colon, bits;
  if (!(is >> width >> mask.center_fraction >> mask.acceleration >> mask.seed >> colon >> bits) ||
      colon != ":" || static_cast<Index>(bits.size()) != width)
    throw std::runtime_error("mask_from_text: malformed mask line");
  mask.lines.resize(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) mask.lines[i] = bits[i] == '1';
  return mask;
}

}  // namespace mtmr

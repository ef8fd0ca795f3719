#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mtmr/core.hpp"
#include "mtmr/rng.hpp"

namespace mtmr {

// Geometry of the synthetic brain-like slice: an elliptical head with a bright
// rim, a handful of inner tissue blobs, and small hyperintense lesions.
struct PhantomConfig {
  Index height = 64;
  Index width = 64;
  int n_ellipses = 6;     // inner structures, not counting head and rim
  int lesion_count = 2;
  int n_classes = 4;      // including background (class 0)

  bool operator==(const PhantomConfig&) const = default;
};

struct Phantom {
  Image<float> image;     // intensities in [0, 1]
  LabelMap labels;        // values in 0..n_classes-1
  std::vector<std::string> class_names;   // index 0 = background
  std::uint64_t seed = 0;
};

namespace detail {

struct Ellipse {
  double cy, cx;          // center, pixels
  double ay, ax;          // semi-axes, pixels
  double rot_c, rot_s;    // rotation as (cos, sin)
  double delta;           // signed intensity contribution
  int cls;                // label class painted where coverage >= 0.5
};

// Anti-aliased coverage from the implicit ellipse equation; roughly a 1px
// smooth edge, pure arithmetic so bytes stay stable across libm builds.
inline double ellipse_coverage(const Ellipse& e, double y, double x) {
  const double dy = y - e.cy, dx = x - e.cx;
  const double u = e.rot_c * dx + e.rot_s * dy;
  const double v = -e.rot_s * dx + e.rot_c * dy;
  const double f = (u / e.ax) * (u / e.ax) + (v / e.ay) * (v / e.ay);
  const double t = (1.0 - f) * std::min(e.ax, e.ay) * 0.5;
  return std::clamp(0.5 + t, 0.0, 1.0);
}

}  // namespace detail

inline int phantom_lesion_class(const PhantomConfig& cfg) {
  return cfg.lesion_count > 0 ? cfg.n_classes - 1 : -1;
}

inline Phantom generate_phantom(const PhantomConfig& cfg, std::uint64_t seed) {
  require(cfg.height >= 16 && cfg.width >= 16, "generate_phantom: H and W must be >= 16");
  require(cfg.n_classes >= 2, "generate_phantom: need at least 2 classes");
  require(cfg.n_ellipses >= 0 && cfg.lesion_count >= 0,
          "generate_phantom: counts must be non-negative");

  // Tissue classes are 1..C-2 when a lesion class exists, else 1..C-1. The
  // head carries the first tissue class and inner blobs cycle over the rest,
  // so every class has at least one generating ellipse.
  const int n_tissues = cfg.n_classes - 1 - (cfg.lesion_count > 0 ? 1 : 0);
  require(n_tissues <= 1 + cfg.n_ellipses,
          "generate_phantom: not enough ellipses to cover all tissue classes");

  const double H = double(cfg.height), W = double(cfg.width);
  Rng rng(derive_seed(seed, 0x7068616eull));  // "phan"

  std::vector<detail::Ellipse> scene;

  // Head with a bright rim: outer ellipse at rim intensity, interior pulled
  // back down by the head ellipse painted on top of it.
  detail::Ellipse outer;
  outer.cy = H * 0.5 * (1.0 + 0.04 * rng.uniform(-1.0, 1.0));
  outer.cx = W * 0.5 * (1.0 + 0.04 * rng.uniform(-1.0, 1.0));
  outer.ay = H * rng.uniform(0.38, 0.43);
  outer.ax = W * rng.uniform(0.31, 0.36);
  rng.unit_circle(outer.rot_c, outer.rot_s);
  // keep the head near-axis-aligned: shrink the rotation toward identity
  outer.rot_s *= 0.15;
  outer.rot_c = std::sqrt(1.0 - outer.rot_s * outer.rot_s);
  outer.delta = 0.85;
  outer.cls = 0;  // skull rim is not a tissue class
  scene.push_back(outer);

  detail::Ellipse head = outer;
  head.ay -= 2.5;
  head.ax -= 2.5;
  head.delta = -0.30;  // interior settles at 0.55
  head.cls = n_tissues >= 1 ? 1 : 0;
  scene.push_back(head);

  // Inner structures: alternate darker (fluid-like) and brighter blobs.
  static constexpr double kInnerDelta[4] = {-0.25, 0.18, -0.15, 0.12};
  for (int i = 0; i < cfg.n_ellipses; ++i) {
    detail::Ellipse e;
    double c, s;
    rng.unit_circle(c, s);
    const double r = std::sqrt(rng.uniform());  // uniform over the head disk
    e.cy = head.cy + c * r * head.ay * 0.55;
    e.cx = head.cx + s * r * head.ax * 0.55;
    e.ay = H * rng.uniform(0.06, 0.16);
    e.ax = W * rng.uniform(0.06, 0.16);
    rng.unit_circle(e.rot_c, e.rot_s);
    e.delta = kInnerDelta[i % 4];
    e.cls = n_tissues >= 2 ? 2 + (i % (n_tissues - 1)) : (n_tissues == 1 ? 1 : 0);
    scene.push_back(e);
  }

  // Lesions last, so their labels are never occluded.
  for (int i = 0; i < cfg.lesion_count; ++i) {
    detail::Ellipse e;
    double c, s;
    rng.unit_circle(c, s);
    const double r = std::sqrt(rng.uniform());
    e.cy = head.cy + c * r * head.ay * 0.55;
    e.cx = head.cx + s * r * head.ax * 0.55;
    const double base = std::min(H, W) * rng.uniform(0.035, 0.09);
    const double ratio = rng.uniform(0.7, 1.3);
    e.ay = base;
    e.ax = base * ratio;
    rng.unit_circle(e.rot_c, e.rot_s);
    e.delta = 0.45;
    e.cls = phantom_lesion_class(cfg);
    scene.push_back(e);
  }

  Phantom out;
  out.seed = seed;
  out.image.resize(cfg.height, cfg.width);
  out.labels.resize(cfg.height, cfg.width);
  for (Index y = 0; y < cfg.height; ++y) {
    for (Index x = 0; x < cfg.width; ++x) {
      double acc = 0.0;
      int label = 0;
      for (const auto& e : scene) {
        const double cov = detail::ellipse_coverage(e, double(y), double(x));
        acc += e.delta * cov;
        if (cov >= 0.5) label = e.cls;
      }
      out.image(y, x) = float(std::clamp(acc, 0.0, 1.0));
      out.labels(y, x) = std::uint8_t(label);
    }
  }

  out.class_names.emplace_back("background");
  for (int t = 1; t <= n_tissues; ++t) out.class_names.push_back("tissue-" + std::to_string(t));
  if (cfg.lesion_count > 0) out.class_names.emplace_back("lesion");
  return out;
}

}  // namespace mtmr

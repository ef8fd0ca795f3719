#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mtmr/core.hpp"
#include "mtmr/mask.hpp"

namespace mtmr {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

// Row-major 8-bit RGB raster for the simple renderings below.
struct Canvas {
  Index h = 0, w = 0;
  std::vector<std::uint8_t> px;  // 3 bytes per pixel

  Canvas() = default;
  Canvas(Index height, Index width, Rgb fill) : h(height), w(width), px(std::size_t(height) * std::size_t(width) * 3) {
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) set(y, x, fill);
  }

  void set(Index y, Index x, Rgb c) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    const std::size_t i = (std::size_t(y) * std::size_t(w) + std::size_t(x)) * 3;
    px[i] = c.r;
    px[i + 1] = c.g;
    px[i + 2] = c.b;
  }
};

namespace detail {

inline std::uint8_t shade(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return std::uint8_t(std::lround(v * 255.0));
}

}  // namespace detail

// 8-bit binary PGM; values mapped linearly from [lo, hi].
template <typename S>
inline void write_pgm(const Image<S>& img, const std::filesystem::path& path, double lo,
                      double hi) {
  require(img.size() > 0, "write_pgm: empty image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<std::uint8_t> row(std::size_t(img.cols()));
  for (Index y = 0; y < img.rows(); ++y) {
    for (Index x = 0; x < img.cols(); ++x)
      row[std::size_t(x)] = detail::shade((double(img(y, x)) - lo) / span);
    os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  }
  if (!os) throw IoError("short write: " + path.string());
}

// Auto-ranged variant; a constant image renders mid-gray.
template <typename S>
inline void write_pgm(const Image<S>& img, const std::filesystem::path& path) {
  require(img.size() > 0, "write_pgm: empty image");
  const double lo = double(img.minCoeff());
  const double hi = double(img.maxCoeff());
  if (hi > lo)
    write_pgm(img, path, lo, hi);
  else
    write_pgm(img + S(0.5) - S(lo), path, 0.0, 1.0);
}

inline void write_ppm(const Canvas& c, const std::filesystem::path& path) {
  require(c.h > 0 && c.w > 0, "write_ppm: empty canvas");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "P6\n" << c.w << ' ' << c.h << "\n255\n";
  os.write(reinterpret_cast<const char*>(c.px.data()), std::streamsize(c.px.size()));
  if (!os) throw IoError("short write: " + path.string());
}

// Sampling pattern as an image: kept phase-encode columns are white.
inline Canvas render_mask(const SamplingMask& m, Index height) {
  require(height > 0, "render_mask: height must be positive");
  Canvas c(height, m.width(), Rgb{0, 0, 0});
  for (Index x = 0; x < m.width(); ++x) {
    if (!m.lines[std::size_t(x)]) continue;
    for (Index y = 0; y < height; ++y) c.set(y, x, Rgb{255, 255, 255});
  }
  return c;
}

template <typename S>
inline Image<S> error_map(const Image<S>& pred, const Image<S>& ref) {
  require(pred.rows() == ref.rows() && pred.cols() == ref.cols(),
          "error_map: shape mismatch");
  return (pred - ref).abs();
}

namespace detail {

// Object pixels whose 4-neighborhood (image border included) leaves the class.
inline bool contour_at(const LabelMap& l, Index y, Index x) {
  const auto c = l(y, x);
  if (c == 0) return false;
  const Index h = l.rows(), w = l.cols();
  if (y == 0 || l(y - 1, x) != c) return true;
  if (y == h - 1 || l(y + 1, x) != c) return true;
  if (x == 0 || l(y, x - 1) != c) return true;
  if (x == w - 1 || l(y, x + 1) != c) return true;
  return false;
}

}  // namespace detail

// Grayscale base with truth contours in green, predicted contours in red;
// where they coincide the outline turns yellow.
template <typename S>
inline Canvas render_overlay(const Image<S>& base, const LabelMap& pred, const LabelMap& truth) {
  require(base.rows() == pred.rows() && base.cols() == pred.cols() &&
              base.rows() == truth.rows() && base.cols() == truth.cols(),
          "render_overlay: shape mismatch");
  const double lo = double(base.minCoeff());
  const double hi = double(base.maxCoeff());
  const double span = hi > lo ? hi - lo : 1.0;
  Canvas c(base.rows(), base.cols(), Rgb{0, 0, 0});
  for (Index y = 0; y < base.rows(); ++y) {
    for (Index x = 0; x < base.cols(); ++x) {
      const std::uint8_t g = detail::shade((double(base(y, x)) - lo) / span);
      const bool tc = detail::contour_at(truth, y, x);
      const bool pc = detail::contour_at(pred, y, x);
      Rgb out{g, g, g};
      if (tc && pc)
        out = Rgb{230, 230, 40};
      else if (tc)
        out = Rgb{40, 220, 40};
      else if (pc)
        out = Rgb{230, 50, 50};
      c.set(y, x, out);
    }
  }
  return c;
}

struct Series {
  std::string name;
  std::vector<double> values;
};

namespace detail {

inline Rgb series_color(std::size_t i) {
  static const Rgb palette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},
                                {214, 39, 40},  {148, 103, 189}, {140, 86, 75}};
  return palette[i % (sizeof palette / sizeof palette[0])];
}

}  // namespace detail

// Minimal line chart: light grid, one polyline per series in a fixed palette.
// There is no text rendering; series order matches the palette order.
inline Canvas plot_curves(const std::vector<Series>& series, Index height = 480,
                          Index width = 720) {
  require(height >= 64 && width >= 64, "plot_curves: canvas too small");
  bool any = false;
  double vmin = 0.0, vmax = 0.0;
  std::size_t n_max = 0;
  for (const auto& s : series) {
    n_max = std::max(n_max, s.values.size());
    for (double v : s.values) {
      if (!std::isfinite(v)) continue;
      if (!any) {
        vmin = vmax = v;
        any = true;
      } else {
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
      }
    }
  }
  require(any && n_max > 0, "plot_curves: nothing to plot");
  if (vmax - vmin < 1e-12) {
    vmax += 1.0;
    vmin -= 1.0;
  }
  const double pad = 0.05 * (vmax - vmin);
  vmin -= pad;
  vmax += pad;

  const Index m = 12;  // margin
  const Index ph = height - 2 * m, pw = width - 2 * m;
  Canvas c(height, width, Rgb{255, 255, 255});
  const Rgb grid{225, 225, 225}, axis{60, 60, 60};
  for (int k = 1; k < 4; ++k) {
    const Index gy = m + ph * k / 4;
    const Index gx = m + pw * k / 4;
    for (Index x = m; x < m + pw; ++x) c.set(gy, x, grid);
    for (Index y = m; y < m + ph; ++y) c.set(y, gx, grid);
  }
  for (Index x = m; x < m + pw; ++x) c.set(m + ph - 1, x, axis);
  for (Index y = m; y < m + ph; ++y) c.set(y, m, axis);

  const auto to_y = [&](double v) {
    const double t = (v - vmin) / (vmax - vmin);
    return m + Index(std::lround((1.0 - t) * double(ph - 1)));
  };
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& vals = series[si].values;
    if (vals.empty()) continue;
    const Rgb col = detail::series_color(si);
    Index prev_y = 0;
    bool have_prev = false;
    for (Index x = 0; x < pw; ++x) {
      const double t = pw > 1 ? double(x) / double(pw - 1) : 0.0;
      const double fi = t * double(vals.size() - 1);
      const std::size_t i0 = std::size_t(fi);
      const std::size_t i1 = std::min(i0 + 1, vals.size() - 1);
      const double frac = fi - double(i0);
      const double v = vals[i0] * (1.0 - frac) + vals[i1] * frac;
      if (!std::isfinite(v)) {
        have_prev = false;
        continue;
      }
      const Index y = std::clamp(to_y(v), m, m + ph - 1);
      if (have_prev) {
        const Index lo = std::min(prev_y, y), hi = std::max(prev_y, y);
        for (Index yy = lo; yy <= hi; ++yy) c.set(yy, m + x, col);
      } else {
        c.set(y, m + x, col);
      }
      prev_y = y;
      have_prev = true;
    }
  }
  return c;
}

}  // namespace mtmr

#pragma once

// Independent reference implementations used only by tests. These must stay
// naive and must not call into the library paths they check.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>

namespace oracle {

using Eigen::Index;

template <typename S>
using Cplx = Eigen::Array<std::complex<S>, Eigen::Dynamic, Eigen::Dynamic>;

// O(N^2) centered orthonormal DFT: DC at (floor(H/2), floor(W/2)).
inline Cplx<double> dft2_centered(const Cplx<double>& x, bool inverse) {
  const Index h = x.rows(), w = x.cols();
  const Index ch = h / 2, cw = w / 2;
  const double sign = inverse ? 1.0 : -1.0;
  const double scale = 1.0 / std::sqrt(double(h) * double(w));
  Cplx<double> out(h, w);
  for (Index p = 0; p < h; ++p) {
    for (Index q = 0; q < w; ++q) {
      std::complex<double> acc(0.0, 0.0);
      for (Index m = 0; m < h; ++m) {
        for (Index n = 0; n < w; ++n) {
          const double phase = 2.0 * M_PI *
              (double((p - ch) * (m - ch)) / double(h) + double((q - cw) * (n - cw)) / double(w));
          acc += x(m, n) * std::complex<double>(std::cos(phase), sign * std::sin(phase));
        }
      }
      out(p, q) = acc * scale;
    }
  }
  return out;
}

// Central finite difference of a scalar function along one coordinate of a
// parameter vector reached through the setter/getter pair.
template <typename F>
double central_diff(F&& eval, double& slot, double eps = 1e-5) {
  const double saved = slot;
  slot = saved + eps;
  const double hi = eval();
  slot = saved - eps;
  const double lo = eval();
  slot = saved;
  return (hi - lo) / (2.0 * eps);
}

// max_i |a_i - b_i| / max(1, |a_i|, |b_i|)
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace oracle

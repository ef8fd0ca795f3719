#pragma once

#include <unsupported/Eigen/FFT>
#include <vector>

#include "mtmr/core.hpp"

namespace mtmr {

// Centered, orthonormal 2D DFT pair. Convention, fixed repo-wide:
//   K(p,q) = 1/sqrt(HW) * sum_{m,n} x(m,n) exp(-2*pi*i*((p-cH)(m-cH)/H + (q-cW)(n-cW)/W))
// with cN = floor(N/2), i.e. DC sits at (floor(H/2), floor(W/2)) and
// forward/inverse are exact adjoints of each other (Parseval holds).

namespace detail {

template <typename S>
Eigen::FFT<S>& fft_engine() {
  thread_local Eigen::FFT<S> engine(typename Eigen::FFT<S>::impl_type(),
                                    Eigen::FFT<S>::Unscaled);
  return engine;
}

// out(i) = in((i + shift) mod n); fftshift uses shift = ceil(n/2),
// ifftshift uses shift = floor(n/2). They coincide for even n.
template <typename S>
void shift_rows(CplxImage<S>& a, Index shift) {
  const Index h = a.rows();
  CplxImage<S> tmp(h, a.cols());
  for (Index i = 0; i < h; ++i) tmp.row(i) = a.row((i + shift) % h);
  a.swap(tmp);
}

template <typename S>
void shift_cols(CplxImage<S>& a, Index shift) {
  const Index w = a.cols();
  CplxImage<S> tmp(a.rows(), w);
  for (Index j = 0; j < w; ++j) tmp.col(j) = a.col((j + shift) % w);
  a.swap(tmp);
}

template <typename S>
void fft2_unscaled(CplxImage<S>& a, bool inverse) {
  auto& engine = fft_engine<S>();
  const Index h = a.rows(), w = a.cols();
  std::vector<std::complex<S>> in(std::max(h, w)), out(std::max(h, w));
  for (Index j = 0; j < w; ++j) {
    for (Index i = 0; i < h; ++i) in[i] = a(i, j);
    if (inverse)
      engine.inv(out.data(), in.data(), static_cast<int>(h));
    else
      engine.fwd(out.data(), in.data(), static_cast<int>(h));
    for (Index i = 0; i < h; ++i) a(i, j) = out[i];
  }
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) in[j] = a(i, j);
    if (inverse)
      engine.inv(out.data(), in.data(), static_cast<int>(w));
    else
      engine.fwd(out.data(), in.data(), static_cast<int>(w));
    for (Index j = 0; j < w; ++j) a(i, j) = out[j];
  }
}

template <typename S>
CplxImage<S> centered_fft2(const CplxImage<S>& x, bool inverse) {
  const Index h = x.rows(), w = x.cols();
  CplxImage<S> a = x;
  shift_rows(a, h / 2);        // ifftshift
  shift_cols(a, w / 2);
  fft2_unscaled(a, inverse);
  shift_rows(a, (h + 1) / 2);  // fftshift
  shift_cols(a, (w + 1) / 2);
  a *= std::complex<S>(S(1) / std::sqrt(S(h) * S(w)), S(0));
  return a;
}

}  // namespace detail

template <typename S>
ComplexImage<S> forward_fft(const ComplexImage<S>& img) {
  require(img.domain == Domain::image, "forward_fft: input must be in the image domain");
  return {detail::centered_fft2(img.data, false), Domain::kspace};
}

template <typename S>
ComplexImage<S> inverse_fft(const ComplexImage<S>& k) {
  require(k.domain == Domain::kspace, "inverse_fft: input must be in the k-space domain");
  return {detail::centered_fft2(k.data, true), Domain::image};
}

}  // namespace mtmr

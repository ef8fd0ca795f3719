#pragma once

#include <optional>

#include "mtmr/core.hpp"
#include "mtmr/fft.hpp"
#include "mtmr/mask.hpp"

namespace mtmr {

// Retrospectively under-sampled k-space: zero on every dropped line.
template <typename S>
struct MeasuredKSpace {
  ComplexImage<S> kspace;   // domain == kspace
  SamplingMask mask;
};

template <typename S>
MeasuredKSpace<S> apply_mask(const ComplexImage<S>& k, const SamplingMask& mask) {
  require(k.domain == Domain::kspace, "apply_mask: input must be in the k-space domain");
  require(k.cols() == mask.width(), "apply_mask: mask length must equal k-space width");
  MeasuredKSpace<S> out{k, mask};
  for (Index j = 0; j < k.cols(); ++j)
    if (!mask.lines[static_cast<std::size_t>(j)])
      out.kspace.data.col(j).setZero();
  return out;
}

template <typename S>
MeasuredKSpace<S> measure(const Image<S>& img, const SamplingMask& mask) {
  return apply_mask(forward_fft(to_complex(img)), mask);
}

// Inverse transform of the masked grid; the aliased baseline reconstruction.
template <typename S>
ComplexImage<S> zero_fill(const MeasuredKSpace<S>& m) {
  return inverse_fft(m.kspace);
}

// Data-consistency: re-impose the measured lines on a prediction. With no
// lambda the measured lines replace the predicted ones outright (noiseless
// case); with lambda they are blended as (K + lambda*k_meas) / (1 + lambda).
// Unsampled lines pass through unchanged.
template <typename S>
ComplexImage<S> data_consistency(const ComplexImage<S>& pred, const MeasuredKSpace<S>& m,
                                 std::optional<double> lambda = std::nullopt) {
  require(pred.domain == Domain::image, "data_consistency: prediction must be an image");
  require(pred.rows() == m.kspace.rows() && pred.cols() == m.kspace.cols(),
          "data_consistency: shape mismatch");
  if (lambda && *lambda < 0.0)
    throw std::invalid_argument("data_consistency: lambda must be non-negative");

  ComplexImage<S> k = forward_fft(pred);
  for (Index j = 0; j < k.cols(); ++j) {
    if (!m.mask.lines[static_cast<std::size_t>(j)]) continue;
    if (lambda) {
      const S l = static_cast<S>(*lambda);
      k.data.col(j) = (k.data.col(j) + l * m.kspace.data.col(j)) / (S(1) + l);
    } else {
      k.data.col(j) = m.kspace.data.col(j);
    }
  }
  return inverse_fft(k);
}

// Jacobian-vector product of data_consistency in its prediction argument.
// The operator is affine, so this is the same masked filter applied to the
// perturbation with the measured term dropped. It is also self-adjoint, so
// the backward pass reuses it.
template <typename S>
ComplexImage<S> data_consistency_jvp(const ComplexImage<S>& v, const MeasuredKSpace<S>& m,
                                     std::optional<double> lambda = std::nullopt) {
  require(v.domain == Domain::image, "data_consistency_jvp: input must be an image");
  ComplexImage<S> k = forward_fft(v);
  for (Index j = 0; j < k.cols(); ++j) {
    if (!m.mask.lines[static_cast<std::size_t>(j)]) continue;
    if (lambda) {
      const S l = static_cast<S>(*lambda);
      k.data.col(j) /= (S(1) + l);
    } else {
      k.data.col(j).setZero();
    }
  }
  return inverse_fft(k);
}

}  // namespace mtmr

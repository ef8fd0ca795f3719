#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mtmr {

template <typename S>
using Image = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
using CplxImage = Eigen::Array<std::complex<S>, Eigen::Dynamic, Eigen::Dynamic>;

using LabelMap = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

using Index = Eigen::Index;

// Which Fourier domain a complex grid lives in. Transforms check the tag so a
// k-space grid cannot silently be transformed as if it were an image.
enum class Domain { image, kspace };

template <typename S>
struct ComplexImage {
  CplxImage<S> data;
  Domain domain = Domain::image;

  Index rows() const { return data.rows(); }
  Index cols() const { return data.cols(); }
};

template <typename S>
ComplexImage<S> to_complex(const Image<S>& img, Domain domain = Domain::image) {
  ComplexImage<S> out;
  out.data = img.template cast<std::complex<S>>();
  out.domain = domain;
  return out;
}

template <typename S>
Image<S> magnitude(const ComplexImage<S>& img) {
  return img.data.abs();
}

// Thrown when a forward pass or loss produces non-finite values; the caller
// reports it instead of clipping.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File problems: unreadable/unwritable paths, truncated or malformed payloads.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename Derived>
bool all_finite(const Eigen::ArrayBase<Derived>& a) {
  return a.isFinite().all();
}

template <typename S>
bool all_finite(const CplxImage<S>& a) {
  return a.real().isFinite().all() && a.imag().isFinite().all();
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// FNV-1a, used for content hashes in tests and run summaries.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

}  // namespace mtmr

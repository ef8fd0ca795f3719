#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mtmr/core.hpp"
#include "mtmr/rng.hpp"

namespace mtmr {

template <typename S>
using PlaneMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// Multi-channel feature map stored as one (H*W) x C matrix; each column is a
// column-major-flattened channel plane. Keeping channels in matrix columns
// lets convolutions run as plain matrix products.
template <typename S>
struct FeatureMap {
  Index h = 0, w = 0;
  PlaneMat<S> m;

  FeatureMap() = default;
  FeatureMap(int n_chan, Index rows, Index cols) { resize(n_chan, rows, cols); }

  void resize(int n_chan, Index rows, Index cols) {
    h = rows;
    w = cols;
    m.setZero(rows * cols, n_chan);
  }
  void set_zero() { m.setZero(); }
  int channels() const { return int(m.cols()); }
  Index rows() const { return h; }
  Index cols() const { return w; }

  Eigen::Map<Image<S>> chan(int c) { return {m.col(c).data(), h, w}; }
  Eigen::Map<const Image<S>> chan(int c) const { return {m.col(c).data(), h, w}; }
};

// ---------------------------------------------------------------------------
// 2D convolution, zero padded to preserve shape, evaluated as im2col + GEMM.
// Weights are flat, indexed ((o * in_ch + i) * k + ky) * k + kx, which viewed
// column-major is a (in_ch*k*k) x out_ch matrix.
// ---------------------------------------------------------------------------

template <typename S>
struct ConvLayer {
  int in_ch = 0, out_ch = 0, k = 1;
  std::vector<S> w;
  std::vector<S> b;

  void resize(int in, int out, int kernel) {
    require(kernel >= 1 && kernel % 2 == 1, "ConvLayer: kernel must be odd");
    in_ch = in;
    out_ch = out;
    k = kernel;
    w.assign(std::size_t(in) * out * kernel * kernel, S(0));
    b.assign(std::size_t(out), S(0));
  }
  std::size_t weight_count() const { return w.size() + b.size(); }
  S& wat(int o, int i, int ky, int kx) {
    return w[std::size_t(((o * in_ch + i) * k + ky) * k + kx)];
  }
  const S& wat(int o, int i, int ky, int kx) const {
    return w[std::size_t(((o * in_ch + i) * k + ky) * k + kx)];
  }

  Eigen::Map<const PlaneMat<S>> wmat() const {
    return {w.data(), Index(in_ch) * k * k, Index(out_ch)};
  }
  Eigen::Map<PlaneMat<S>> wmat() {
    return {w.data(), Index(in_ch) * k * k, Index(out_ch)};
  }
};

// He-style fan-in init, deterministic in the rng stream.
template <typename S>
void conv_init(ConvLayer<S>& layer, Rng& rng) {
  const double stddev = std::sqrt(2.0 / (double(layer.in_ch) * layer.k * layer.k));
  for (auto& v : layer.w) v = S(rng.normal() * stddev);
  for (auto& v : layer.b) v = S(0);
}

namespace detail {

struct ShiftExtent {
  Index y0, x0, bh, bw;  // valid output region for a kernel offset
};

inline ShiftExtent shift_extent(Index H, Index W, Index dy, Index dx) {
  const Index y0 = std::max<Index>(0, -dy), y1 = std::min<Index>(H, H - dy);
  const Index x0 = std::max<Index>(0, -dx), x1 = std::min<Index>(W, W - dx);
  return {y0, x0, std::max<Index>(0, y1 - y0), std::max<Index>(0, x1 - x0)};
}

// colt(pixel, (i*k+ky)*k+kx) = in channel i at that pixel shifted by the
// kernel offset, zero outside the frame.
template <typename S>
void im2col(const FeatureMap<S>& in, int k, PlaneMat<S>& colt) {
  const Index H = in.h, W = in.w;
  const int p = k / 2;
  colt.resize(H * W, Index(in.channels()) * k * k);
  for (int i = 0; i < in.channels(); ++i) {
    const auto src = in.chan(i);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Index r = Index(i * k + ky) * k + kx;
        Eigen::Map<Image<S>> plane(colt.col(r).data(), H, W);
        const auto e = shift_extent(H, W, ky - p, kx - p);
        plane.setZero();
        if (e.bh > 0 && e.bw > 0)
          plane.block(e.y0, e.x0, e.bh, e.bw) = src.block(e.y0 + (ky - p), e.x0 + (kx - p), e.bh, e.bw);
      }
  }
}

// scatter-add transpose of im2col
template <typename S>
void col2im_add(const PlaneMat<S>& dcolt, int k, FeatureMap<S>& din) {
  const Index H = din.h, W = din.w;
  const int p = k / 2;
  for (int i = 0; i < din.channels(); ++i) {
    auto dst = din.chan(i);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Index r = Index(i * k + ky) * k + kx;
        Eigen::Map<const Image<S>> plane(dcolt.col(r).data(), H, W);
        const auto e = shift_extent(H, W, ky - p, kx - p);
        if (e.bh > 0 && e.bw > 0)
          dst.block(e.y0 + (ky - p), e.x0 + (kx - p), e.bh, e.bw) += plane.block(e.y0, e.x0, e.bh, e.bw);
      }
  }
}

}  // namespace detail

template <typename S>
void conv_forward(const ConvLayer<S>& layer, const FeatureMap<S>& in, FeatureMap<S>& out) {
  require(in.channels() == layer.in_ch, "conv_forward: channel mismatch");
  const Index H = in.h, W = in.w;
  out.h = H;
  out.w = W;
  const Eigen::Map<const Eigen::RowVectorX<S>> bias(layer.b.data(), layer.out_ch);
  if (layer.k == 1) {
    out.m.noalias() = in.m * layer.wmat();
  } else {
    PlaneMat<S> colt;
    detail::im2col(in, layer.k, colt);
    out.m.noalias() = colt * layer.wmat();
  }
  out.m.rowwise() += bias;
}

// din is overwritten; weight/bias gradients accumulate so callers can sum over
// a batch.
template <typename S>
void conv_backward(const ConvLayer<S>& layer, const FeatureMap<S>& in, const FeatureMap<S>& dout,
                   FeatureMap<S>& din, ConvLayer<S>& grad) {
  require(dout.channels() == layer.out_ch, "conv_backward: channel mismatch");
  require(in.channels() == layer.in_ch, "conv_backward: channel mismatch");
  require(grad.w.size() == layer.w.size() && grad.b.size() == layer.b.size(),
          "conv_backward: gradient buffer shape mismatch");
  const Index H = in.h, W = in.w;
  Eigen::Map<Eigen::RowVectorX<S>> bgrad(grad.b.data(), layer.out_ch);
  bgrad += dout.m.colwise().sum();
  if (layer.k == 1) {
    grad.wmat().noalias() += in.m.transpose() * dout.m;
    din.h = H;
    din.w = W;
    din.m.noalias() = dout.m * layer.wmat().transpose();
    return;
  }
  PlaneMat<S> colt;
  detail::im2col(in, layer.k, colt);
  grad.wmat().noalias() += colt.transpose() * dout.m;
  PlaneMat<S> dcolt;
  dcolt.noalias() = dout.m * layer.wmat().transpose();
  din.resize(layer.in_ch, H, W);
  detail::col2im_add(dcolt, layer.k, din);
}

// ---------------------------------------------------------------------------
// Pointwise and resampling pieces
// ---------------------------------------------------------------------------

template <typename S>
void relu_forward(FeatureMap<S>& a) {
  a.m = a.m.cwiseMax(S(0));
}

// pre is the activation input (before clamping); dout is masked in place.
template <typename S>
void relu_backward(const FeatureMap<S>& pre, FeatureMap<S>& dout) {
  dout.m.array() *= (pre.m.array() > S(0)).template cast<S>();
}

// 2x2 max pool, stride 2. argmax keeps the winning quadrant (0..3, row-major
// within the window); ties go to the first maximal entry.
template <typename S>
void maxpool_forward(const FeatureMap<S>& in, FeatureMap<S>& out, FeatureMap<std::uint8_t>& argmax) {
  const Index H = in.rows(), W = in.cols();
  require(H % 2 == 0 && W % 2 == 0, "maxpool_forward: odd input shape");
  out.resize(in.channels(), H / 2, W / 2);
  argmax.resize(in.channels(), H / 2, W / 2);
  for (int c = 0; c < in.channels(); ++c) {
    const auto src = in.chan(c);
    auto dst = out.chan(c);
    auto arg = argmax.chan(c);
    for (Index x = 0; x < W / 2; ++x)
      for (Index y = 0; y < H / 2; ++y) {
        S best = src(2 * y, 2 * x);
        int a = 0;
        const S v01 = src(2 * y, 2 * x + 1);
        if (v01 > best) { best = v01; a = 1; }
        const S v10 = src(2 * y + 1, 2 * x);
        if (v10 > best) { best = v10; a = 2; }
        const S v11 = src(2 * y + 1, 2 * x + 1);
        if (v11 > best) { best = v11; a = 3; }
        dst(y, x) = best;
        arg(y, x) = std::uint8_t(a);
      }
  }
}

template <typename S>
void maxpool_backward(const FeatureMap<S>& dout, const FeatureMap<std::uint8_t>& argmax,
                      FeatureMap<S>& din) {
  const Index h = dout.rows(), w = dout.cols();
  din.resize(dout.channels(), 2 * h, 2 * w);
  for (int c = 0; c < dout.channels(); ++c) {
    const auto g = dout.chan(c);
    const auto arg = argmax.chan(c);
    auto dst = din.chan(c);
    for (Index x = 0; x < w; ++x)
      for (Index y = 0; y < h; ++y) {
        const int a = arg(y, x);
        dst(2 * y + a / 2, 2 * x + a % 2) = g(y, x);
      }
  }
}

template <typename S>
void upsample2_forward(const FeatureMap<S>& in, FeatureMap<S>& out) {
  const Index h = in.rows(), w = in.cols();
  out.h = 2 * h;
  out.w = 2 * w;
  out.m.resize(4 * h * w, in.channels());
  for (int c = 0; c < in.channels(); ++c) {
    const auto src = in.chan(c);
    auto dst = out.chan(c);
    for (Index x = 0; x < w; ++x)
      for (Index y = 0; y < h; ++y) {
        const S v = src(y, x);
        dst(2 * y, 2 * x) = v;
        dst(2 * y, 2 * x + 1) = v;
        dst(2 * y + 1, 2 * x) = v;
        dst(2 * y + 1, 2 * x + 1) = v;
      }
  }
}

template <typename S>
void upsample2_backward(const FeatureMap<S>& dout, FeatureMap<S>& din) {
  const Index H = dout.rows(), W = dout.cols();
  din.h = H / 2;
  din.w = W / 2;
  din.m.resize(H * W / 4, dout.channels());
  for (int c = 0; c < dout.channels(); ++c) {
    const auto g = dout.chan(c);
    auto dst = din.chan(c);
    for (Index x = 0; x < W / 2; ++x)
      for (Index y = 0; y < H / 2; ++y)
        dst(y, x) = g(2 * y, 2 * x) + g(2 * y, 2 * x + 1) + g(2 * y + 1, 2 * x) +
                    g(2 * y + 1, 2 * x + 1);
  }
}

template <typename S>
FeatureMap<S> concat_channels(const FeatureMap<S>& a, const FeatureMap<S>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "concat_channels: shape mismatch");
  FeatureMap<S> out;
  out.h = a.h;
  out.w = a.w;
  out.m.resize(a.m.rows(), a.channels() + b.channels());
  out.m.leftCols(a.channels()) = a.m;
  out.m.rightCols(b.channels()) = b.m;
  return out;
}

template <typename S>
void split_channels(const FeatureMap<S>& joint, int n_first, FeatureMap<S>& da, FeatureMap<S>& db) {
  require(n_first >= 0 && n_first <= joint.channels(), "split_channels: bad split point");
  da.h = db.h = joint.h;
  da.w = db.w = joint.w;
  da.m = joint.m.leftCols(n_first);
  db.m = joint.m.rightCols(joint.channels() - n_first);
}

// ---------------------------------------------------------------------------
// Per-pixel softmax over channels
// ---------------------------------------------------------------------------

template <typename S>
void softmax_forward(const FeatureMap<S>& logits, FeatureMap<S>& probs) {
  const int C = logits.channels();
  require(C >= 1, "softmax_forward: empty input");
  probs.h = logits.h;
  probs.w = logits.w;
  probs.m.resize(logits.m.rows(), C);
  Eigen::Array<S, Eigen::Dynamic, 1> peak = logits.m.col(0).array();
  for (int c = 1; c < C; ++c) peak = peak.max(logits.m.col(c).array());
  Eigen::Array<S, Eigen::Dynamic, 1> z = Eigen::Array<S, Eigen::Dynamic, 1>::Zero(logits.m.rows());
  for (int c = 0; c < C; ++c) {
    probs.m.col(c).array() = (logits.m.col(c).array() - peak).exp();
    z += probs.m.col(c).array();
  }
  for (int c = 0; c < C; ++c) probs.m.col(c).array() /= z;
}

// dlogits_c = p_c * (dprobs_c - sum_j p_j dprobs_j)
template <typename S>
void softmax_backward(const FeatureMap<S>& probs, const FeatureMap<S>& dprobs,
                      FeatureMap<S>& dlogits) {
  const int C = probs.channels();
  dlogits.h = probs.h;
  dlogits.w = probs.w;
  dlogits.m.resize(probs.m.rows(), C);
  Eigen::Array<S, Eigen::Dynamic, 1> dot =
      (probs.m.col(0).array() * dprobs.m.col(0).array());
  for (int c = 1; c < C; ++c) dot += probs.m.col(c).array() * dprobs.m.col(c).array();
  for (int c = 0; c < C; ++c)
    dlogits.m.col(c).array() = probs.m.col(c).array() * (dprobs.m.col(c).array() - dot);
}

}  // namespace mtmr

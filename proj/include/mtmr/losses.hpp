#pragma once

#include <cmath>
#include <string>

#include "mtmr/core.hpp"
#include "mtmr/nn.hpp"

namespace mtmr {

// Mean squared error between predicted and reference magnitude images.
// dpred is accumulated as scale * dL/dpred.
template <typename S>
double recon_loss(const Image<S>& pred, const Image<S>& ref) {
  require(pred.rows() == ref.rows() && pred.cols() == ref.cols(),
          "recon_loss: shape mismatch");
  require(pred.size() > 0, "recon_loss: empty image");
  return (pred.template cast<double>() - ref.template cast<double>()).square().mean();
}

template <typename S>
void recon_loss_backward(const Image<S>& pred, const Image<S>& ref, double scale,
                         Image<S>& dpred) {
  const double c = 2.0 * scale / static_cast<double>(pred.size());
  dpred += ((pred.template cast<double>() - ref.template cast<double>()) * c)
               .template cast<S>();
}

// Chain rule through z -> |z|. d|z|/dRe = Re/|z|, d|z|/dIm = Im/|z|; both
// taken as 0 where |z| = 0.
template <typename S>
void magnitude_backward(const CplxImage<S>& z, const Image<S>& dmag, CplxImage<S>& dz) {
  require(z.rows() == dmag.rows() && z.cols() == dmag.cols(),
          "magnitude_backward: shape mismatch");
  dz.resize(z.rows(), z.cols());
  for (Index x = 0; x < z.cols(); ++x) {
    for (Index y = 0; y < z.rows(); ++y) {
      const std::complex<S> v = z(y, x);
      const S mag = std::hypot(v.real(), v.imag());
      if (mag > S(0)) {
        const S g = dmag(y, x) / mag;
        dz(y, x) = {v.real() * g, v.imag() * g};
      } else {
        dz(y, x) = {S(0), S(0)};
      }
    }
  }
}

enum class SegLossKind { dice, cross_entropy };

inline std::string to_string(SegLossKind k) {
  return k == SegLossKind::dice ? "dice" : "cross-entropy";
}

inline SegLossKind seg_loss_kind_from_string(const std::string& s) {
  if (s == "dice") return SegLossKind::dice;
  if (s == "cross-entropy") return SegLossKind::cross_entropy;
  throw std::invalid_argument("unknown seg loss kind: " + s);
}

// Smoothed soft-Dice loss over the non-background classes:
//   d_c = 1 - 2*I_c / (a_c + b_c + smooth),  I_c = sum_x p_c(x)[y(x)=c],
//   a_c = sum_x p_c(x), b_c = |{x : y(x)=c}|, loss = mean_c d_c, c >= 1.
// The smooth term keeps the ratio defined when a class is absent from both
// prediction mass and labels (I=a=b=0): the formula then yields d_c = 1.
template <typename S>
double dice_loss(const FeatureMap<S>& probs, const LabelMap& labels,
                 double smooth = 0.1) {
  const Index c_total = probs.m.cols();
  require(c_total >= 2, "dice_loss: need at least 2 classes");
  require(probs.h == labels.rows() && probs.w == labels.cols(),
          "dice_loss: shape mismatch");
  double total = 0.0;
  for (Index c = 1; c < c_total; ++c) {
    double inter = 0.0, a = 0.0, b = 0.0;
    const S* p = probs.m.col(c).data();
    for (Index x = 0; x < probs.w; ++x) {
      for (Index y = 0; y < probs.h; ++y) {
        const double pv = p[x * probs.h + y];
        a += pv;
        if (labels(y, x) == c) {
          b += 1.0;
          inter += pv;
        }
      }
    }
    total += 1.0 - 2.0 * inter / (a + b + smooth);
  }
  return total / static_cast<double>(c_total - 1);
}

template <typename S>
void dice_loss_backward(const FeatureMap<S>& probs, const LabelMap& labels,
                        double scale, FeatureMap<S>& dprobs, double smooth = 0.1) {
  const Index c_total = probs.m.cols();
  require(dprobs.h == probs.h && dprobs.w == probs.w && dprobs.m.cols() == c_total,
          "dice_loss_backward: dprobs shape mismatch");
  const double cls_scale = scale / static_cast<double>(c_total - 1);
  for (Index c = 1; c < c_total; ++c) {
    double inter = 0.0, a = 0.0, b = 0.0;
    const S* p = probs.m.col(c).data();
    for (Index x = 0; x < probs.w; ++x) {
      for (Index y = 0; y < probs.h; ++y) {
        const double pv = p[x * probs.h + y];
        a += pv;
        if (labels(y, x) == c) {
          b += 1.0;
          inter += pv;
        }
      }
    }
    const double denom = a + b + smooth;
    // d d_c / d p_c(x) = -2([y=c]*denom - I) / denom^2
    const double inv2 = 2.0 / (denom * denom);
    S* dp = dprobs.m.col(c).data();
    for (Index x = 0; x < probs.w; ++x) {
      for (Index y = 0; y < probs.h; ++y) {
        const double hit = labels(y, x) == c ? 1.0 : 0.0;
        dp[x * probs.h + y] +=
            static_cast<S>(cls_scale * (-inv2) * (hit * denom - inter));
      }
    }
  }
}

// Mean per-pixel negative log-likelihood of the labelled class.
template <typename S>
double cross_entropy_loss(const FeatureMap<S>& probs, const LabelMap& labels,
                          double eps = 1e-12) {
  require(probs.h == labels.rows() && probs.w == labels.cols(),
          "cross_entropy_loss: shape mismatch");
  const Index c_total = probs.m.cols();
  double total = 0.0;
  for (Index x = 0; x < probs.w; ++x) {
    for (Index y = 0; y < probs.h; ++y) {
      const Index c = labels(y, x);
      require(c < c_total, "cross_entropy_loss: label out of range");
      const double pv = probs.m(x * probs.h + y, c);
      total -= std::log(pv > eps ? pv : eps);
    }
  }
  return total / static_cast<double>(probs.h * probs.w);
}

template <typename S>
void cross_entropy_backward(const FeatureMap<S>& probs, const LabelMap& labels,
                            double scale, FeatureMap<S>& dprobs, double eps = 1e-12) {
  require(dprobs.h == probs.h && dprobs.w == probs.w,
          "cross_entropy_backward: dprobs shape mismatch");
  const double inv_n = 1.0 / static_cast<double>(probs.h * probs.w);
  for (Index x = 0; x < probs.w; ++x) {
    for (Index y = 0; y < probs.h; ++y) {
      const Index c = labels(y, x);
      const double pv = probs.m(x * probs.h + y, c);
      if (pv > eps) {
        dprobs.m(x * probs.h + y, c) += static_cast<S>(-scale * inv_n / pv);
      }
    }
  }
}

template <typename S>
double seg_loss(SegLossKind kind, const FeatureMap<S>& probs, const LabelMap& labels) {
  return kind == SegLossKind::dice ? dice_loss(probs, labels)
                                   : cross_entropy_loss(probs, labels);
}

template <typename S>
void seg_loss_backward(SegLossKind kind, const FeatureMap<S>& probs,
                       const LabelMap& labels, double scale, FeatureMap<S>& dprobs) {
  if (kind == SegLossKind::dice) {
    dice_loss_backward(probs, labels, scale, dprobs);
  } else {
    cross_entropy_backward(probs, labels, scale, dprobs);
  }
}

}  // namespace mtmr

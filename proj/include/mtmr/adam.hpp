#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mtmr/core.hpp"
#include "mtmr/recon_net.hpp"
#include "mtmr/seg_net.hpp"

namespace mtmr {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool lr_decay = false;      // multiply lr by decay_factor every decay_epochs
  double decay_factor = 0.2;
  int decay_epochs = 10;

  void validate() const {
    require(lr > 0.0, "AdamConfig: lr must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0, "AdamConfig: beta1 out of range");
    require(beta2 >= 0.0 && beta2 < 1.0, "AdamConfig: beta2 out of range");
    require(eps > 0.0, "AdamConfig: eps must be positive");
    require(decay_factor > 0.0 && decay_factor <= 1.0, "AdamConfig: decay_factor out of range");
    require(decay_epochs >= 1, "AdamConfig: decay_epochs must be >= 1");
  }
};

inline double effective_lr(const AdamConfig& c, std::int64_t epoch) {
  if (!c.lr_decay) return c.lr;
  return c.lr * std::pow(c.decay_factor, double(epoch / c.decay_epochs));
}

// First and second moment buffers, flattened in the same order the parameter
// structures enumerate their layers (weights then bias per layer).
template <typename S>
struct AdamState {
  std::vector<S> m, v;
  std::int64_t t = 0;  // completed updates

  void reset(std::size_t n) {
    m.assign(n, S(0));
    v.assign(n, S(0));
    t = 0;
  }
};

namespace detail {

template <typename S>
void adam_span(const AdamConfig& c, double lr, double bc1, double bc2,
               S* p, const S* g, S* m, S* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double gi = double(g[i]);
    const double mi = c.beta1 * double(m[i]) + (1.0 - c.beta1) * gi;
    const double vi = c.beta2 * double(v[i]) + (1.0 - c.beta2) * gi * gi;
    m[i] = S(mi);
    v[i] = S(vi);
    p[i] = S(double(p[i]) - lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps));
  }
}

}  // namespace detail

// One bias-corrected Adam update across both networks. grads must have the
// same structure as the parameters; epoch only matters when lr decay is on.
template <typename S>
void adam_step(const AdamConfig& c, AdamState<S>& st,
               ReconParams<S>& recon, const ReconParams<S>& recon_grads,
               SegParams<S>& seg, const SegParams<S>& seg_grads,
               std::int64_t epoch) {
  c.validate();
  const std::size_t total = recon.parameter_count() + seg.parameter_count();
  if (st.m.empty()) st.reset(total);
  require(st.m.size() == total && st.v.size() == total,
          "adam_step: moment buffers do not match parameter count");

  st.t += 1;
  const double lr = effective_lr(c, epoch);
  const double bc1 = 1.0 - std::pow(c.beta1, double(st.t));
  const double bc2 = 1.0 - std::pow(c.beta2, double(st.t));

  std::size_t off = 0;
  const auto update = [&](ConvLayer<S>& layer, const ConvLayer<S>& grad) {
    require(grad.w.size() == layer.w.size() && grad.b.size() == layer.b.size(),
            "adam_step: gradient layer shape mismatch");
    detail::adam_span(c, lr, bc1, bc2, layer.w.data(), grad.w.data(),
                      st.m.data() + off, st.v.data() + off, layer.w.size());
    off += layer.w.size();
    detail::adam_span(c, lr, bc1, bc2, layer.b.data(), grad.b.data(),
                      st.m.data() + off, st.v.data() + off, layer.b.size());
    off += layer.b.size();
  };

  for (std::size_t ci = 0; ci < recon.cascades.size(); ++ci)
    for (std::size_t li = 0; li < recon.cascades[ci].size(); ++li)
      update(recon.cascades[ci][li], recon_grads.cascades[ci][li]);
  {
    std::vector<ConvLayer<S>*> mine, theirs;
    seg.for_each_layer([&](ConvLayer<S>& l) { mine.push_back(&l); });
    const_cast<SegParams<S>&>(seg_grads).for_each_layer(
        [&](ConvLayer<S>& l) { theirs.push_back(&l); });
    require(mine.size() == theirs.size(), "adam_step: segmentation layer count mismatch");
    for (std::size_t i = 0; i < mine.size(); ++i) update(*mine[i], *theirs[i]);
  }
  require(off == total, "adam_step: parameter walk out of sync");
}

}  // namespace mtmr

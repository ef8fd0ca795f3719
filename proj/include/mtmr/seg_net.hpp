#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtmr/core.hpp"
#include "mtmr/nn.hpp"
#include "mtmr/recon_net.hpp"  // ShapeManifest
#include "mtmr/rng.hpp"

namespace mtmr {

// Encoder-decoder segmentation net with skip connections. Each encoder level
// is two convs + ReLU then a 2x2 max pool with channels doubling; the decoder
// mirrors it with nearest-neighbor upsampling, an up conv, the skip concat,
// and two convs; a final 1x1 projection feeds a per-pixel softmax.
struct SegConfig {
  int depth = 3;           // full scale: 4
  int base_channels = 16;  // full scale: 64
  int n_classes = 2;
  int kernel = 3;

  bool operator==(const SegConfig&) const = default;

  void validate() const {
    require(depth >= 1, "SegConfig: depth must be >= 1");
    require(base_channels >= 1, "SegConfig: base_channels must be >= 1");
    require(n_classes >= 2, "SegConfig: n_classes must be >= 2");
    require(kernel >= 1 && kernel % 2 == 1, "SegConfig: kernel must be odd");
  }
  int level_channels(int level) const { return base_channels << level; }
};

inline std::size_t seg_parameter_count(const SegConfig& c) {
  const std::size_t k2 = std::size_t(c.kernel) * c.kernel;
  const auto conv = [k2](std::size_t in, std::size_t out) { return in * out * k2 + out; };
  std::size_t n = 0;
  for (int l = 0; l < c.depth; ++l) {
    const std::size_t ch = std::size_t(c.level_channels(l));
    n += conv(l == 0 ? 1 : ch / 2, ch) + conv(ch, ch);
  }
  const std::size_t bot = std::size_t(c.level_channels(c.depth));
  n += conv(bot / 2, bot) + conv(bot, bot);
  for (int l = 0; l < c.depth; ++l) {
    const std::size_t ch = std::size_t(c.level_channels(l));
    n += conv(2 * ch, ch);                 // up conv after upsampling
    n += conv(2 * ch, ch) + conv(ch, ch);  // merge convs after the skip concat
  }
  n += std::size_t(c.base_channels) * std::size_t(c.n_classes) + std::size_t(c.n_classes);
  return n;
}

template <typename S>
struct SegParams {
  SegConfig config;
  std::vector<ConvLayer<S>> enc1, enc2;      // per level
  ConvLayer<S> bot1, bot2;
  std::vector<ConvLayer<S>> up, dec1, dec2;  // per level
  ConvLayer<S> head;                         // 1x1 projection to classes

  template <typename F>
  void for_each_layer(F&& f) {
    for (std::size_t l = 0; l < enc1.size(); ++l) {
      f(enc1[l]);
      f(enc2[l]);
    }
    f(bot1);
    f(bot2);
    for (std::size_t l = up.size(); l-- > 0;) {
      f(up[l]);
      f(dec1[l]);
      f(dec2[l]);
    }
    f(head);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    const_cast<SegParams*>(this)->for_each_layer(
        [&](const ConvLayer<S>& l) { n += l.weight_count(); });
    return n;
  }

  ShapeManifest shape_manifest() const {
    ShapeManifest out;
    const auto add = [&out](const std::string& name, const ConvLayer<S>& l) {
      out.push_back({name + "/w", {Index(l.out_ch), Index(l.in_ch), Index(l.k), Index(l.k)}});
      out.push_back({name + "/b", {Index(l.out_ch)}});
    };
    for (std::size_t l = 0; l < enc1.size(); ++l) {
      add("enc" + std::to_string(l) + "/conv0", enc1[l]);
      add("enc" + std::to_string(l) + "/conv1", enc2[l]);
    }
    add("bottleneck/conv0", bot1);
    add("bottleneck/conv1", bot2);
    for (std::size_t l = up.size(); l-- > 0;) {
      add("dec" + std::to_string(l) + "/up", up[l]);
      add("dec" + std::to_string(l) + "/conv0", dec1[l]);
      add("dec" + std::to_string(l) + "/conv1", dec2[l]);
    }
    add("head", head);
    return out;
  }
};

template <typename S>
SegParams<S> seg_zero_params(const SegConfig& config) {
  config.validate();
  SegParams<S> p;
  p.config = config;
  p.enc1.resize(std::size_t(config.depth));
  p.enc2.resize(std::size_t(config.depth));
  p.up.resize(std::size_t(config.depth));
  p.dec1.resize(std::size_t(config.depth));
  p.dec2.resize(std::size_t(config.depth));
  for (int l = 0; l < config.depth; ++l) {
    const int ch = config.level_channels(l);
    p.enc1[std::size_t(l)].resize(l == 0 ? 1 : ch / 2, ch, config.kernel);
    p.enc2[std::size_t(l)].resize(ch, ch, config.kernel);
    p.up[std::size_t(l)].resize(2 * ch, ch, config.kernel);
    p.dec1[std::size_t(l)].resize(2 * ch, ch, config.kernel);
    p.dec2[std::size_t(l)].resize(ch, ch, config.kernel);
  }
  const int bot = config.level_channels(config.depth);
  p.bot1.resize(bot / 2, bot, config.kernel);
  p.bot2.resize(bot, bot, config.kernel);
  p.head.resize(config.base_channels, config.n_classes, 1);
  return p;
}

template <typename S>
SegParams<S> seg_init(const SegConfig& config, std::uint64_t seed) {
  SegParams<S> p = seg_zero_params<S>(config);
  Rng rng(derive_seed(seed, 0x7365676eull));  // "segn"
  p.for_each_layer([&rng](ConvLayer<S>& l) { conv_init(l, rng); });
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <typename S>
struct SegTrace {
  FeatureMap<S> input;                            // 1-channel input image
  std::vector<FeatureMap<S>> enc_pre1, enc_pre2;  // pre-activations per level
  std::vector<FeatureMap<S>> skip;                // level output before pooling
  std::vector<FeatureMap<S>> pooled;              // level output after pooling
  std::vector<FeatureMap<std::uint8_t>> pool_arg;
  FeatureMap<S> bot_pre1, bot_pre2;
  std::vector<FeatureMap<S>> up_in;   // upsampled map entering the up conv
  std::vector<FeatureMap<S>> up_pre;  // up conv pre-activation
  std::vector<FeatureMap<S>> merged;  // concat(skip, up) fed to dec1
  std::vector<FeatureMap<S>> dec_pre1, dec_pre2;
  FeatureMap<S> probs;
};

template <typename S>
FeatureMap<S> seg_forward(const SegParams<S>& params, const Image<S>& img,
                          SegTrace<S>* trace = nullptr) {
  const SegConfig& cfg = params.config;
  cfg.validate();
  const Index H = img.rows(), W = img.cols();
  require(H % (Index(1) << cfg.depth) == 0 && W % (Index(1) << cfg.depth) == 0,
          "seg_forward: shape not divisible by 2^depth");

  SegTrace<S> local;
  SegTrace<S>& t = trace ? *trace : local;
  const auto d = std::size_t(cfg.depth);
  t.enc_pre1.assign(d, {});
  t.enc_pre2.assign(d, {});
  t.skip.assign(d, {});
  t.pooled.assign(d, {});
  t.pool_arg.assign(d, {});
  t.up_in.assign(d, {});
  t.up_pre.assign(d, {});
  t.merged.assign(d, {});
  t.dec_pre1.assign(d, {});
  t.dec_pre2.assign(d, {});

  t.input.h = H;
  t.input.w = W;
  t.input.m.resize(H * W, 1);
  Eigen::Map<Image<S>>(t.input.m.col(0).data(), H, W) = img;

  FeatureMap<S> a = t.input;
  for (std::size_t l = 0; l < d; ++l) {
    FeatureMap<S> z;
    conv_forward(params.enc1[l], a, z);
    t.enc_pre1[l] = z;
    relu_forward(z);
    FeatureMap<S> z2;
    conv_forward(params.enc2[l], z, z2);
    t.enc_pre2[l] = z2;
    relu_forward(z2);
    t.skip[l] = z2;
    maxpool_forward(z2, a, t.pool_arg[l]);
    t.pooled[l] = a;
  }

  {
    FeatureMap<S> z;
    conv_forward(params.bot1, a, z);
    t.bot_pre1 = z;
    relu_forward(z);
    FeatureMap<S> z2;
    conv_forward(params.bot2, z, z2);
    t.bot_pre2 = z2;
    relu_forward(z2);
    a = std::move(z2);
  }

  for (std::size_t l = d; l-- > 0;) {
    FeatureMap<S> upsampled;
    upsample2_forward(a, upsampled);
    t.up_in[l] = upsampled;
    FeatureMap<S> z;
    conv_forward(params.up[l], upsampled, z);
    t.up_pre[l] = z;
    relu_forward(z);
    FeatureMap<S> cat = concat_channels(t.skip[l], z);
    t.merged[l] = cat;
    FeatureMap<S> d1;
    conv_forward(params.dec1[l], cat, d1);
    t.dec_pre1[l] = d1;
    relu_forward(d1);
    FeatureMap<S> d2;
    conv_forward(params.dec2[l], d1, d2);
    t.dec_pre2[l] = d2;
    relu_forward(d2);
    a = std::move(d2);
  }

  FeatureMap<S> logits;
  conv_forward(params.head, a, logits);
  if (!all_finite(logits.m.array()))
    throw DivergenceError("seg_forward: non-finite activations");
  softmax_forward(logits, t.probs);
  return t.probs;
}

// dprobs is the loss gradient with respect to the class probabilities.
// Weight gradients accumulate into grads; returns the gradient with respect
// to the input image so joint training can push it into reconstruction.
template <typename S>
Image<S> seg_backward(const SegParams<S>& params, const SegTrace<S>& trace,
                      const FeatureMap<S>& dprobs, SegParams<S>& grads) {
  const SegConfig& cfg = params.config;
  const auto d = std::size_t(cfg.depth);
  FeatureMap<S> dlogits;
  softmax_backward(trace.probs, dprobs, dlogits);

  // head; its input is the level-0 decoder activation
  FeatureMap<S> head_in = trace.dec_pre2[0];
  relu_forward(head_in);
  FeatureMap<S> da;
  conv_backward(params.head, head_in, dlogits, da, grads.head);

  // decoder, reverse of forward order (level 0 ran last)
  std::vector<FeatureMap<S>> dskip(d);
  for (std::size_t l = 0; l < d; ++l) {
    relu_backward(trace.dec_pre2[l], da);
    FeatureMap<S> d1_act = trace.dec_pre1[l];
    relu_forward(d1_act);
    FeatureMap<S> dd1;
    conv_backward(params.dec2[l], d1_act, da, dd1, grads.dec2[l]);
    relu_backward(trace.dec_pre1[l], dd1);
    FeatureMap<S> dcat;
    conv_backward(params.dec1[l], trace.merged[l], dd1, dcat, grads.dec1[l]);
    FeatureMap<S> dup;
    split_channels(dcat, trace.skip[l].channels(), dskip[l], dup);
    relu_backward(trace.up_pre[l], dup);
    FeatureMap<S> dupsampled;
    conv_backward(params.up[l], trace.up_in[l], dup, dupsampled, grads.up[l]);
    upsample2_backward(dupsampled, da);
  }

  // bottleneck; da holds the gradient at its output
  {
    relu_backward(trace.bot_pre2, da);
    FeatureMap<S> b1_act = trace.bot_pre1;
    relu_forward(b1_act);
    FeatureMap<S> db1;
    conv_backward(params.bot2, b1_act, da, db1, grads.bot2);
    relu_backward(trace.bot_pre1, db1);
    conv_backward(params.bot1, trace.pooled[d - 1], db1, da, grads.bot1);
  }

  // encoder, deepest level first; da is the gradient at pooled[l]
  for (std::size_t l = d; l-- > 0;) {
    FeatureMap<S> dz2;
    maxpool_backward(da, trace.pool_arg[l], dz2);
    dz2.m += dskip[l].m;
    relu_backward(trace.enc_pre2[l], dz2);
    FeatureMap<S> z1_act = trace.enc_pre1[l];
    relu_forward(z1_act);
    FeatureMap<S> dz1;
    conv_backward(params.enc2[l], z1_act, dz2, dz1, grads.enc2[l]);
    relu_backward(trace.enc_pre1[l], dz1);
    const FeatureMap<S>& below = l == 0 ? trace.input : trace.pooled[l - 1];
    FeatureMap<S> dlower;
    conv_backward(params.enc1[l], below, dz1, dlower, grads.enc1[l]);
    da = std::move(dlower);
  }

  Image<S> dimg(trace.input.h, trace.input.w);
  dimg = da.chan(0);
  return dimg;
}

// Per-pixel argmax; ties resolve to the lower class index.
template <typename S>
LabelMap binarize(const FeatureMap<S>& probs) {
  const Index H = probs.rows(), W = probs.cols();
  const int C = probs.channels();
  LabelMap out(H, W);
  for (Index x = 0; x < W; ++x)
    for (Index y = 0; y < H; ++y) {
      int best = 0;
      S bv = probs.chan(0)(y, x);
      for (int c = 1; c < C; ++c) {
        const S v = probs.chan(c)(y, x);
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      out(y, x) = std::uint8_t(best);
    }
  return out;
}

}  // namespace mtmr

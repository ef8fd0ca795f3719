#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mtmr/core.hpp"
#include "mtmr/kspace.hpp"
#include "mtmr/nn.hpp"
#include "mtmr/rng.hpp"

namespace mtmr {

// Cascaded reconstruction net: per cascade a small residual CNN on the
// 2-channel (real/imag) image followed by a data-consistency step.
struct ReconConfig {
  int n_cascades = 2;       // full scale: 5
  int convs_per_block = 3;  // full scale: 5
  int channels = 16;
  int kernel = 3;
  std::optional<double> dc_lambda;  // none = hard replacement
  bool residual = true;

  bool operator==(const ReconConfig&) const = default;

  void validate() const {
    require(n_cascades >= 1, "ReconConfig: n_cascades must be >= 1");
    require(convs_per_block >= 2, "ReconConfig: convs_per_block must be >= 2");
    require(channels >= 1, "ReconConfig: channels must be >= 1");
    require(kernel >= 1 && kernel % 2 == 1, "ReconConfig: kernel must be odd");
    if (dc_lambda) require(*dc_lambda >= 0.0, "ReconConfig: dc_lambda must be non-negative");
  }
};

using ShapeManifest = std::vector<std::pair<std::string, std::vector<Index>>>;

// Closed-form parameter count: per cascade the 2->ch entry conv, the ch->ch
// middle convs, and the ch->2 exit conv, each with biases.
inline std::size_t recon_parameter_count(const ReconConfig& c) {
  const std::size_t k2 = std::size_t(c.kernel) * c.kernel;
  const std::size_t ch = std::size_t(c.channels);
  const std::size_t entry = 2 * ch * k2 + ch;
  const std::size_t middle = (ch * ch * k2 + ch) * std::size_t(c.convs_per_block - 2);
  const std::size_t exit_conv = ch * 2 * k2 + 2;
  return std::size_t(c.n_cascades) * (entry + middle + exit_conv);
}

template <typename S>
struct ReconParams {
  ReconConfig config;
  std::vector<std::vector<ConvLayer<S>>> cascades;  // [cascade][layer]

  template <typename F>
  void for_each_layer(F&& f) {
    for (auto& casc : cascades)
      for (auto& l : casc) f(l);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& casc : cascades)
      for (const auto& l : casc) n += l.weight_count();
    return n;
  }

  ShapeManifest shape_manifest() const {
    ShapeManifest out;
    for (std::size_t c = 0; c < cascades.size(); ++c)
      for (std::size_t l = 0; l < cascades[c].size(); ++l) {
        const auto& layer = cascades[c][l];
        const std::string base =
            "cascade" + std::to_string(c) + "/conv" + std::to_string(l);
        out.push_back({base + "/w",
                       {Index(layer.out_ch), Index(layer.in_ch), Index(layer.k), Index(layer.k)}});
        out.push_back({base + "/b", {Index(layer.out_ch)}});
      }
    return out;
  }
};

template <typename S>
ReconParams<S> recon_zero_params(const ReconConfig& config) {
  config.validate();
  ReconParams<S> p;
  p.config = config;
  p.cascades.resize(std::size_t(config.n_cascades));
  for (auto& casc : p.cascades) {
    casc.resize(std::size_t(config.convs_per_block));
    for (int j = 0; j < config.convs_per_block; ++j) {
      const int in = j == 0 ? 2 : config.channels;
      const int out = j == config.convs_per_block - 1 ? 2 : config.channels;
      casc[std::size_t(j)].resize(in, out, config.kernel);
    }
  }
  return p;
}

template <typename S>
ReconParams<S> recon_init(const ReconConfig& config, std::uint64_t seed) {
  ReconParams<S> p = recon_zero_params<S>(config);
  Rng rng(derive_seed(seed, 0x7265636full));  // "reco"
  for (auto& casc : p.cascades)
    for (auto& layer : casc) conv_init(layer, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <typename S>
FeatureMap<S> fm_from_complex(const ComplexImage<S>& z) {
  FeatureMap<S> fm;
  fm.h = z.rows();
  fm.w = z.cols();
  fm.m.resize(fm.h * fm.w, 2);
  Eigen::Map<Image<S>>(fm.m.col(0).data(), fm.h, fm.w) = z.data.real();
  Eigen::Map<Image<S>>(fm.m.col(1).data(), fm.h, fm.w) = z.data.imag();
  return fm;
}

template <typename S>
ComplexImage<S> complex_from_fm(const FeatureMap<S>& fm) {
  require(fm.channels() == 2, "complex_from_fm: need exactly 2 channels");
  ComplexImage<S> z;
  z.domain = Domain::image;
  z.data.resize(fm.rows(), fm.cols());
  z.data.real() = fm.chan(0);
  z.data.imag() = fm.chan(1);
  return z;
}

template <typename S>
struct ReconTrace {
  struct Cascade {
    FeatureMap<S> in_fm;             // cascade input as 2 channels
    std::vector<FeatureMap<S>> pre;  // pre-activation output of every conv
    ComplexImage<S> pre_dc;          // input + CNN residual, before consistency
  };
  ComplexImage<S> x0;
  std::vector<Cascade> cascades;
  ComplexImage<S> out;
};

// One cascade's CNN stack on a 2-channel map: ReLU between convs, linear exit.
template <typename S>
FeatureMap<S> recon_block_forward(const std::vector<ConvLayer<S>>& layers, const FeatureMap<S>& in,
                                  std::vector<FeatureMap<S>>* pre = nullptr) {
  FeatureMap<S> a = in;
  if (pre) pre->clear();
  for (std::size_t j = 0; j < layers.size(); ++j) {
    FeatureMap<S> z;
    conv_forward(layers[j], a, z);
    if (pre) pre->push_back(z);
    if (j + 1 < layers.size()) relu_forward(z);
    a = std::move(z);
  }
  return a;
}

template <typename S>
ComplexImage<S> recon_forward(const ReconParams<S>& params, const MeasuredKSpace<S>& m,
                              ReconTrace<S>* trace = nullptr) {
  params.config.validate();
  ComplexImage<S> x = zero_fill(m);
  if (trace) {
    trace->x0 = x;
    trace->cascades.clear();
    trace->cascades.resize(params.cascades.size());
  }
  for (std::size_t c = 0; c < params.cascades.size(); ++c) {
    FeatureMap<S> in_fm = fm_from_complex(x);
    auto* ct = trace ? &trace->cascades[c] : nullptr;
    const FeatureMap<S> res =
        recon_block_forward(params.cascades[c], in_fm, ct ? &ct->pre : nullptr);
    ComplexImage<S> update = complex_from_fm(res);
    if (params.config.residual) update.data += x.data;
    if (!all_finite(update.data))
      throw DivergenceError("recon_forward: non-finite activations in cascade " + std::to_string(c));
    if (ct) {
      ct->in_fm = std::move(in_fm);
      ct->pre_dc = update;
    }
    x = data_consistency(update, m, params.config.dc_lambda);
  }
  if (trace) trace->out = x;
  return x;
}

// Backward through the cascade chain. dout is the loss gradient with respect
// to the final complex image (d/d re, d/d im packed as a complex value).
// Weight gradients accumulate into grads; the gradient with respect to the
// measured k-space is not produced (measurements are data, not parameters).
template <typename S>
void recon_backward(const ReconParams<S>& params, const MeasuredKSpace<S>& m,
                    const ReconTrace<S>& trace, const ComplexImage<S>& dout,
                    ReconParams<S>& grads) {
  require(trace.cascades.size() == params.cascades.size(), "recon_backward: trace mismatch");
  require(grads.cascades.size() == params.cascades.size(), "recon_backward: grads mismatch");
  ComplexImage<S> dx = dout;
  for (std::size_t c = params.cascades.size(); c-- > 0;) {
    const auto& layers = params.cascades[c];
    const auto& ct = trace.cascades[c];
    // through data consistency (self-adjoint real-linear map)
    ComplexImage<S> dpre = data_consistency_jvp(dx, m, params.config.dc_lambda);

    // through the CNN stack
    FeatureMap<S> dfm = fm_from_complex(dpre);
    for (std::size_t j = layers.size(); j-- > 0;) {
      // conv input: previous activation, recomputed from the stored
      // pre-activation (entry layer reads the cascade input directly)
      FeatureMap<S> din;
      if (j == 0) {
        conv_backward(layers[j], ct.in_fm, dfm, din, grads.cascades[c][j]);
      } else {
        FeatureMap<S> a = ct.pre[j - 1];
        relu_forward(a);
        conv_backward(layers[j], a, dfm, din, grads.cascades[c][j]);
        relu_backward(ct.pre[j - 1], din);
      }
      dfm = std::move(din);
    }
    ComplexImage<S> dthrough = complex_from_fm(dfm);
    if (params.config.residual) dthrough.data += dpre.data;
    dx = std::move(dthrough);
  }
}

}  // namespace mtmr

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "mtmr/core.hpp"
#include "mtmr/dataset.hpp"
#include "mtmr/trainer.hpp"

namespace mtmr {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline ConfusionCounts confusion(const LabelMap& pred, const LabelMap& truth, int class_id) {
  require(pred.rows() == truth.rows() && pred.cols() == truth.cols(),
          "confusion: shape mismatch");
  require(class_id >= 0, "confusion: class_id must be non-negative");
  ConfusionCounts c;
  for (Index x = 0; x < pred.cols(); ++x) {
    for (Index y = 0; y < pred.rows(); ++y) {
      const bool p = pred(y, x) == class_id;
      const bool t = truth(y, x) == class_id;
      if (p && t) ++c.tp;
      else if (p) ++c.fp;
      else if (t) ++c.fn;
      else ++c.tn;
    }
  }
  return c;
}

inline ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) {
  a.tp += b.tp;
  a.fp += b.fp;
  a.fn += b.fn;
  a.tn += b.tn;
  return a;
}

// Empty-side conventions: both masks empty scores 1 (a correct all-negative
// slice is not penalized); exactly one side empty scores 0.
inline double dice(const ConfusionCounts& c) {
  const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * double(c.tp) / double(denom);
}

inline double precision(const ConfusionCounts& c) {
  if (c.tp + c.fp == 0) return c.fn == 0 ? 1.0 : 0.0;
  return double(c.tp) / double(c.tp + c.fp);
}

inline double recall(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0) return c.fp == 0 ? 1.0 : 0.0;
  return double(c.tp) / double(c.tp + c.fn);
}

inline constexpr double kPsnrCap = 100.0;

// 10 log10(L^2 / MSE) with peak L = max(ref), capped at 100 dB; the cap also
// absorbs the zero-MSE case so identical images are well defined.
template <typename S>
double psnr(const Image<S>& pred, const Image<S>& ref) {
  require(pred.rows() == ref.rows() && pred.cols() == ref.cols(), "psnr: shape mismatch");
  require(pred.size() > 0, "psnr: empty image");
  const double mse =
      (pred.template cast<double>() - ref.template cast<double>()).square().mean();
  if (mse == 0.0) return kPsnrCap;
  const double peak = double(ref.maxCoeff());
  return std::min(10.0 * std::log10(peak * peak / mse), kPsnrCap);
}

namespace detail {

inline const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> g(11);
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
      const double d = double(i - 5);
      g[std::size_t(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      sum += g[std::size_t(i)];
    }
    for (auto& v : g) v /= sum;
    std::vector<double> w2(121);
    for (int i = 0; i < 11; ++i)
      for (int j = 0; j < 11; ++j) w2[std::size_t(i * 11 + j)] = g[std::size_t(i)] * g[std::size_t(j)];
    return w2;
  }();
  return w;
}

}  // namespace detail

// Mean local SSIM over all fully interior 11x11 windows, Gaussian weighted
// (sigma 1.5), C1 = (0.01 L)^2, C2 = (0.03 L)^2 with L = max(ref).
template <typename S>
double ssim(const Image<S>& pred, const Image<S>& ref) {
  require(pred.rows() == ref.rows() && pred.cols() == ref.cols(), "ssim: shape mismatch");
  require(pred.rows() >= 11 && pred.cols() >= 11, "ssim: min side is 11");
  if ((pred == ref).all()) return 1.0;

  const auto& w = detail::ssim_window();
  const double peak = double(ref.maxCoeff());
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);

  double total = 0.0;
  std::int64_t windows = 0;
  for (Index wy = 0; wy + 11 <= pred.rows(); ++wy) {
    for (Index wx = 0; wx + 11 <= pred.cols(); ++wx) {
      double mx = 0.0, my = 0.0, xx = 0.0, yy = 0.0, xy = 0.0;
      for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
          const double wij = w[std::size_t(i * 11 + j)];
          const double a = double(pred(wy + i, wx + j));
          const double b = double(ref(wy + i, wx + j));
          mx += wij * a;
          my += wij * b;
          xx += wij * a * a;
          yy += wij * b * b;
          xy += wij * a * b;
        }
      }
      const double vx = xx - mx * mx;
      const double vy = yy - my * my;
      const double cov = xy - mx * my;
      total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  }
  return total / double(windows);
}

struct ClassMetrics {
  double dice = 0.0, precision = 0.0, recall = 0.0;
};

struct VolumeMetrics {
  std::string volume;
  double psnr = 0.0;
  double psnr_zero_fill = 0.0;
  double ssim = 0.0;
  std::vector<ClassMetrics> per_class;  // index 0 holds class 1
};

struct SizeBin {
  std::int64_t size_lo = 0, size_hi = 0;
  std::int64_t count = 0;
  double mean_score = 0.0;
};

struct MetricsReport {
  std::vector<VolumeMetrics> volumes;
  std::vector<ClassMetrics> mean, stddev;  // per foreground class
  double psnr_mean = 0.0, psnr_std = 0.0;
  double psnr_zero_fill_mean = 0.0, psnr_zero_fill_std = 0.0;
  double ssim_mean = 0.0, ssim_std = 0.0;
  int object_class = 0;
  std::vector<SizeBin> size_bins;  // six sextile bins of object pixel count
};

namespace detail {

// 4-connected components of one class; returns each component's pixel list.
inline std::vector<std::vector<Index>> label_components(const LabelMap& labels, int cls) {
  const Index h = labels.rows(), wdt = labels.cols();
  std::vector<std::uint8_t> seen(std::size_t(h * wdt), 0);
  std::vector<std::vector<Index>> comps;
  std::vector<Index> stack;
  for (Index x = 0; x < wdt; ++x) {
    for (Index y = 0; y < h; ++y) {
      const Index at = x * h + y;
      if (seen[std::size_t(at)] || labels(y, x) != cls) continue;
      comps.emplace_back();
      stack.assign(1, at);
      seen[std::size_t(at)] = 1;
      while (!stack.empty()) {
        const Index cur = stack.back();
        stack.pop_back();
        comps.back().push_back(cur);
        const Index cy = cur % h, cx = cur / h;
        const Index ny[4] = {cy - 1, cy + 1, cy, cy};
        const Index nx[4] = {cx, cx, cx - 1, cx + 1};
        for (int k = 0; k < 4; ++k) {
          if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= wdt) continue;
          const Index nat = nx[k] * h + ny[k];
          if (!seen[std::size_t(nat)] && labels(ny[k], nx[k]) == cls) {
            seen[std::size_t(nat)] = 1;
            stack.push_back(nat);
          }
        }
      }
    }
  }
  return comps;
}

struct ObjectScore {
  std::int64_t size = 0;
  double score = 0.0;  // Dice between the object and the prediction inside it
};

inline void object_scores(const LabelMap& pred, const LabelMap& truth, int cls,
                          std::vector<ObjectScore>& out) {
  for (const auto& comp : label_components(truth, cls)) {
    const Index h = truth.rows();
    std::int64_t hit = 0;
    for (Index at : comp) {
      if (pred(at % h, at / h) == cls) ++hit;
    }
    const double denom = double(comp.size()) + double(hit);
    out.push_back({std::int64_t(comp.size()),
                   denom == 0.0 ? 0.0 : 2.0 * double(hit) / denom});
  }
}

inline std::vector<SizeBin> sextile_bins(std::vector<ObjectScore> objects) {
  std::vector<SizeBin> bins(6);
  if (objects.empty()) return bins;
  std::vector<std::int64_t> sizes;
  sizes.reserve(objects.size());
  for (const auto& o : objects) sizes.push_back(o.size);
  std::sort(sizes.begin(), sizes.end());
  // bin k covers sizes up to the (k+1)/6 quantile; the last bin is open
  std::vector<std::int64_t> upper(6);
  for (int k = 0; k < 6; ++k) {
    const std::size_t idx =
        std::min(sizes.size() - 1, (std::size_t(k) + 1) * sizes.size() / 6);
    upper[std::size_t(k)] =
        k == 5 ? sizes.back() : sizes[idx == 0 ? 0 : idx - 1];
  }
  for (int k = 0; k < 6; ++k) {
    bins[std::size_t(k)].size_lo = k == 0 ? sizes.front() : upper[std::size_t(k - 1)] + 1;
    bins[std::size_t(k)].size_hi = upper[std::size_t(k)];
  }
  for (const auto& o : objects) {
    int k = 0;
    while (k < 5 && o.size > bins[std::size_t(k)].size_hi) ++k;
    bins[std::size_t(k)].count += 1;
    bins[std::size_t(k)].mean_score += o.score;
  }
  for (auto& b : bins) {
    if (b.count > 0) b.mean_score /= double(b.count);
  }
  return bins;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

inline double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size()));
}

}  // namespace detail

// Per-slice inference stacked per volume: pooled-MSE PSNR, slice-mean SSIM,
// and per-class scores from volume-summed confusion counts, aggregated as
// mean and population standard deviation over volumes. object_class picks the
// label whose truth components feed the size-stratified bins (default: the
// highest class index).
template <typename S>
MetricsReport evaluate(const TrainState<S>& st, const DatasetManifest& manifest,
                       const std::map<std::string, SamplingMask>& masks,
                       int object_class = -1) {
  require(manifest.size() > 0, "evaluate: empty split");
  const int n_classes = st.seg.config.n_classes;
  if (object_class < 0) object_class = n_classes - 1;
  require(object_class >= 1 && object_class < n_classes,
          "evaluate: object_class must be a foreground class");

  struct VolumeAccum {
    std::vector<ConfusionCounts> counts;
    double sq_err_sum = 0.0, zf_sq_err_sum = 0.0;
    double peak = 0.0;
    double ssim_sum = 0.0;
    std::int64_t pixels = 0, slices = 0;
  };
  std::vector<std::string> volume_order;
  std::map<std::string, VolumeAccum> accum;
  std::vector<detail::ObjectScore> objects;

  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const Sample sample = load_sample(manifest, i);
    const auto mit = masks.find(sample.volume);
    require(mit != masks.end(), "evaluate: no mask for volume " + sample.volume);
    const Image<S> ref = sample.image.template cast<S>();
    const MeasuredKSpace<S> measured = measure(ref, mit->second);
    const auto [mag, probs] = infer(st, measured);
    const LabelMap pred = binarize(probs);
    const Image<S> zf = magnitude(zero_fill(measured));

    auto ins = accum.find(sample.volume);
    if (ins == accum.end()) {
      volume_order.push_back(sample.volume);
      ins = accum.emplace(sample.volume, VolumeAccum{}).first;
      ins->second.counts.resize(std::size_t(n_classes - 1));
    }
    VolumeAccum& va = ins->second;
    va.sq_err_sum +=
        (mag.template cast<double>() - ref.template cast<double>()).square().sum();
    va.zf_sq_err_sum +=
        (zf.template cast<double>() - ref.template cast<double>()).square().sum();
    va.peak = std::max(va.peak, double(ref.maxCoeff()));
    va.ssim_sum += ssim(mag, ref);
    va.pixels += ref.size();
    va.slices += 1;
    for (int c = 1; c < n_classes; ++c) {
      va.counts[std::size_t(c - 1)] =
          va.counts[std::size_t(c - 1)] + confusion(pred, sample.labels, c);
    }
    detail::object_scores(pred, sample.labels, object_class, objects);
  }

  MetricsReport rep;
  rep.object_class = object_class;
  std::vector<double> psnrs, zf_psnrs, ssims;
  std::vector<std::vector<double>> dices(std::size_t(n_classes - 1)),
      precisions(std::size_t(n_classes - 1)), recalls(std::size_t(n_classes - 1));
  const auto capped_psnr = [](double peak, double mse) {
    if (mse == 0.0) return kPsnrCap;
    return std::min(10.0 * std::log10(peak * peak / mse), kPsnrCap);
  };
  for (const auto& vol : volume_order) {
    const VolumeAccum& va = accum.at(vol);
    VolumeMetrics vm;
    vm.volume = vol;
    vm.psnr = capped_psnr(va.peak, va.sq_err_sum / double(va.pixels));
    vm.psnr_zero_fill = capped_psnr(va.peak, va.zf_sq_err_sum / double(va.pixels));
    vm.ssim = va.ssim_sum / double(va.slices);
    for (int c = 1; c < n_classes; ++c) {
      const ConfusionCounts& cc = va.counts[std::size_t(c - 1)];
      ClassMetrics cm{dice(cc), precision(cc), recall(cc)};
      vm.per_class.push_back(cm);
      dices[std::size_t(c - 1)].push_back(cm.dice);
      precisions[std::size_t(c - 1)].push_back(cm.precision);
      recalls[std::size_t(c - 1)].push_back(cm.recall);
    }
    psnrs.push_back(vm.psnr);
    zf_psnrs.push_back(vm.psnr_zero_fill);
    ssims.push_back(vm.ssim);
    rep.volumes.push_back(std::move(vm));
  }
  rep.psnr_mean = detail::mean_of(psnrs);
  rep.psnr_std = detail::std_of(psnrs);
  rep.psnr_zero_fill_mean = detail::mean_of(zf_psnrs);
  rep.psnr_zero_fill_std = detail::std_of(zf_psnrs);
  rep.ssim_mean = detail::mean_of(ssims);
  rep.ssim_std = detail::std_of(ssims);
  for (int c = 1; c < n_classes; ++c) {
    rep.mean.push_back({detail::mean_of(dices[std::size_t(c - 1)]),
                        detail::mean_of(precisions[std::size_t(c - 1)]),
                        detail::mean_of(recalls[std::size_t(c - 1)])});
    rep.stddev.push_back({detail::std_of(dices[std::size_t(c - 1)]),
                          detail::std_of(precisions[std::size_t(c - 1)]),
                          detail::std_of(recalls[std::size_t(c - 1)])});
  }
  rep.size_bins = detail::sextile_bins(std::move(objects));
  return rep;
}

inline nlohmann::json report_to_json(const MetricsReport& rep) {
  nlohmann::json j;
  j["object_class"] = rep.object_class;
  j["aggregate"] = {
      {"psnr", {{"mean", rep.psnr_mean}, {"std", rep.psnr_std}}},
      {"psnr_zero_fill",
       {{"mean", rep.psnr_zero_fill_mean}, {"std", rep.psnr_zero_fill_std}}},
      {"ssim", {{"mean", rep.ssim_mean}, {"std", rep.ssim_std}}},
  };
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < rep.mean.size(); ++c) {
    classes.push_back({{"class", int(c) + 1},
                       {"dice", {{"mean", rep.mean[c].dice}, {"std", rep.stddev[c].dice}}},
                       {"precision",
                        {{"mean", rep.mean[c].precision}, {"std", rep.stddev[c].precision}}},
                       {"recall",
                        {{"mean", rep.mean[c].recall}, {"std", rep.stddev[c].recall}}}});
  }
  j["aggregate"]["classes"] = classes;
  nlohmann::json vols = nlohmann::json::array();
  for (const auto& v : rep.volumes) {
    nlohmann::json jv = {{"volume", v.volume},
                         {"psnr", v.psnr},
                         {"psnr_zero_fill", v.psnr_zero_fill},
                         {"ssim", v.ssim}};
    nlohmann::json per_class = nlohmann::json::array();
    for (std::size_t c = 0; c < v.per_class.size(); ++c) {
      per_class.push_back({{"class", int(c) + 1},
                           {"dice", v.per_class[c].dice},
                           {"precision", v.per_class[c].precision},
                           {"recall", v.per_class[c].recall}});
    }
    jv["classes"] = per_class;
    vols.push_back(std::move(jv));
  }
  j["volumes"] = vols;
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : rep.size_bins) {
    bins.push_back({{"size_lo", b.size_lo},
                    {"size_hi", b.size_hi},
                    {"count", b.count},
                    {"mean_score", b.mean_score}});
  }
  j["size_bins"] = bins;
  return j;
}

inline void write_report_json(const MetricsReport& rep, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open report for writing: " + path);
  os << report_to_json(rep).dump(2) << "\n";
  if (!os) throw IoError("short write on report: " + path);
}

// One row per volume; per-class blocks are dice_N, precision_N, recall_N.
inline void write_report_csv(const MetricsReport& rep, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open report for writing: " + path);
  os << "volume,psnr,psnr_zero_fill,ssim";
  for (std::size_t c = 0; c < rep.mean.size(); ++c) {
    os << ",dice_" << c + 1 << ",precision_" << c + 1 << ",recall_" << c + 1;
  }
  os << "\n";
  char num[64];
  const auto put = [&](double v) {
    std::snprintf(num, sizeof(num), ",%.17g", v);
    os << num;
  };
  for (const auto& v : rep.volumes) {
    os << v.volume;
    put(v.psnr);
    put(v.psnr_zero_fill);
    put(v.ssim);
    for (const auto& cm : v.per_class) {
      put(cm.dice);
      put(cm.precision);
      put(cm.recall);
    }
    os << "\n";
  }
  if (!os) throw IoError("short write on report: " + path);
}

}  // namespace mtmr

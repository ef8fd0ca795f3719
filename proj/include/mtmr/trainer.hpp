#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "mtmr/adam.hpp"
#include "mtmr/checkpoint.hpp"
#include "mtmr/core.hpp"
#include "mtmr/dataset.hpp"
#include "mtmr/itfs.hpp"
#include "mtmr/kspace.hpp"
#include "mtmr/losses.hpp"
#include "mtmr/mask.hpp"
#include "mtmr/recon_net.hpp"
#include "mtmr/rng.hpp"
#include "mtmr/schedule.hpp"
#include "mtmr/seg_net.hpp"

namespace mtmr {

struct TrainingConfig {
  ReconConfig recon;
  SegConfig seg;
  WeightSchedule schedule;
  ItfsPolicy itfs;
  AdamConfig adam;
  SegLossKind seg_loss_kind = SegLossKind::dice;
  int epochs = 30;
  int batch_size = 4;
  double center_fraction = 0.08;
  double acceleration = 4.0;
  std::uint64_t seed = 0;
  std::uint64_t mask_seed = 0;
  int checkpoint_every = 10;  // epochs between periodic checkpoints; 0 = final only
  std::string run_dir;        // empty: keep everything in memory

  void validate() const {
    recon.validate();
    seg.validate();
    schedule.validate();
    itfs.validate();
    adam.validate();
    require(epochs >= 0, "TrainingConfig: epochs must be non-negative");
    require(batch_size >= 1, "TrainingConfig: batch_size must be positive");
    require(checkpoint_every >= 0, "TrainingConfig: checkpoint_every must be non-negative");
    require(center_fraction > 0.0 && center_fraction < 1.0,
            "TrainingConfig: center_fraction out of range");
    require(acceleration >= 1.0, "TrainingConfig: acceleration must be >= 1");
  }
};

struct StepRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double alpha = 0.0;
  double beta = 0.0;
  bool teacher = false;
  double l_recon = 0.0;
  double l_seg = 0.0;
  double l_total = 0.0;
};

template <typename S>
struct TrainState {
  ReconParams<S> recon;
  SegParams<S> seg;
  AdamConfig adam_config;
  AdamState<S> adam;
  WeightSchedule schedule;
  ItfsPolicy itfs;
  std::int64_t epoch = 0;
  std::int64_t global_step = 0;
  Rng itfs_rng{0};
  std::vector<StepRecord> history;  // this process only; not checkpointed
};

template <typename S>
TrainState<S> init_train_state(const TrainingConfig& cfg) {
  cfg.validate();
  TrainState<S> st;
  st.recon = recon_init<S>(cfg.recon, cfg.seed);
  st.seg = seg_init<S>(cfg.seg, cfg.seed);
  st.adam_config = cfg.adam;
  st.adam.reset(st.recon.parameter_count() + st.seg.parameter_count());
  st.schedule = cfg.schedule;
  st.itfs = cfg.itfs;
  st.itfs_rng = Rng(cfg.itfs.seed);
  return st;
}

template <typename S>
void save_checkpoint(const TrainState<S>& st, const std::string& path) {
  std::vector<std::string> payloads;
  payloads.push_back(encode_recon_section(st.recon));
  payloads.push_back(encode_seg_section(st.seg));
  payloads.push_back(encode_optimizer_section(st.adam_config, st.adam));
  payloads.push_back(encode_schedule_section(st.schedule));
  payloads.push_back(encode_itfs_section(st.itfs));
  payloads.push_back(encode_counters_section(st.epoch, st.global_step));
  payloads.push_back(encode_rng_section(st.itfs_rng));
  write_checkpoint_file(path, payloads);
}

template <typename S>
TrainState<S> load_checkpoint(const std::string& path) {
  const auto payloads = read_checkpoint_file(path);
  TrainState<S> st;
  st.recon = decode_recon_section<S>(payloads[0]);
  st.seg = decode_seg_section<S>(payloads[1]);
  decode_optimizer_section<S>(payloads[2], st.adam_config, st.adam);
  st.schedule = decode_schedule_section(payloads[3]);
  st.itfs = decode_itfs_section(payloads[4]);
  decode_counters_section(payloads[5], st.epoch, st.global_step);
  st.itfs_rng = decode_rng_section(payloads[6]);
  return st;
}

// One training example with its fixed under-sampling measurement attached.
template <typename S>
struct TrainItem {
  Image<S> image;  // fully sampled normalized magnitude, the recon target
  LabelMap labels;
  MeasuredKSpace<S> measured;
};

template <typename S>
TrainItem<S> make_train_item(const Sample& sample, const SamplingMask& mask) {
  TrainItem<S> item;
  item.image = sample.image.template cast<S>();
  item.labels = sample.labels;
  item.measured = measure(item.image, mask);
  return item;
}

// Forward both nets on one batch, backpropagate the weighted two-task loss,
// and apply a single optimizer update. Teacher steps feed the reference image
// to the segmentation net, so no segmentation gradient reaches recon params.
template <typename S>
StepRecord train_step(TrainState<S>& st, const TrainingConfig& cfg,
                      const std::vector<TrainItem<S>>& batch) {
  require(!batch.empty(), "train_step: batch must not be empty");
  const Index h = batch.front().image.rows(), w = batch.front().image.cols();
  for (const auto& item : batch) {
    require(item.image.rows() == h && item.image.cols() == w &&
                item.labels.rows() == h && item.labels.cols() == w,
            "train_step: all batch samples must share one shape");
  }

  const auto [alpha, beta] = alpha_beta(st.schedule, double(st.epoch));
  const bool teacher =
      itfs_is_teacher(st.itfs, std::uint64_t(st.global_step), st.itfs_rng);

  auto recon_grads = recon_zero_params<S>(st.recon.config);
  auto seg_grads = seg_zero_params<S>(st.seg.config);
  const double inv_b = 1.0 / double(batch.size());
  double l_recon = 0.0, l_seg = 0.0;

  for (const auto& item : batch) {
    ReconTrace<S> rt;
    const ComplexImage<S> out = recon_forward(st.recon, item.measured, &rt);
    const Image<S> mag = magnitude(out);
    l_recon += recon_loss(mag, item.image) * inv_b;

    const Image<S>& seg_in = teacher ? item.image : mag;
    SegTrace<S> tr;
    const FeatureMap<S> probs = seg_forward(st.seg, seg_in, &tr);
    l_seg += seg_loss(cfg.seg_loss_kind, probs, item.labels) * inv_b;

    FeatureMap<S> dprobs;
    dprobs.resize(st.seg.config.n_classes, h, w);
    seg_loss_backward(cfg.seg_loss_kind, probs, item.labels, beta * inv_b, dprobs);
    const Image<S> dseg_in = seg_backward(st.seg, tr, dprobs, seg_grads);

    Image<S> dmag = Image<S>::Zero(h, w);
    recon_loss_backward(mag, item.image, alpha * inv_b, dmag);
    if (!teacher) dmag += dseg_in;
    ComplexImage<S> dout;
    dout.domain = Domain::image;
    magnitude_backward(out.data, dmag, dout.data);
    recon_backward(st.recon, item.measured, rt, dout, recon_grads);
  }

  const double l_total = alpha * l_recon + beta * l_seg;
  if (!std::isfinite(l_recon) || !std::isfinite(l_seg) || !std::isfinite(l_total)) {
    throw DivergenceError("train_step: non-finite loss at step " +
                          std::to_string(st.global_step) + " epoch " +
                          std::to_string(st.epoch) + " (L_recon=" +
                          std::to_string(l_recon) + ", L_seg=" + std::to_string(l_seg) + ")");
  }

  adam_step(st.adam_config, st.adam, st.recon, recon_grads, st.seg, seg_grads, st.epoch);

  StepRecord rec;
  rec.step = st.global_step;
  rec.epoch = st.epoch;
  rec.alpha = alpha;
  rec.beta = beta;
  rec.teacher = teacher;
  rec.l_recon = l_recon;
  rec.l_seg = l_seg;
  rec.l_total = l_total;
  st.history.push_back(rec);
  st.global_step += 1;
  return rec;
}

inline void write_loss_csv(const std::vector<StepRecord>& history, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open loss csv for writing: " + path);
  os << "step,epoch,alpha,beta,teacher,L_recon,L_seg,L_total\n";
  char line[256];
  for (const auto& r : history) {
    std::snprintf(line, sizeof(line), "%lld,%lld,%.17g,%.17g,%d,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(r.step), static_cast<long long>(r.epoch),
                  r.alpha, r.beta, r.teacher ? 1 : 0, r.l_recon, r.l_seg, r.l_total);
    os << line;
  }
  if (!os) throw IoError("short write on loss csv: " + path);
}

namespace detail {

inline constexpr std::uint64_t kShuffleTag = 0x73687566666c65ull;
inline constexpr std::uint64_t kMaskTag = 0x6d61736b73ull;

}  // namespace detail

// The per-volume mask seed: every slice of a volume sees the same mask, and
// the assignment does not depend on sample order.
inline SamplingMask volume_mask(Index width, const TrainingConfig& cfg,
                                const std::string& volume) {
  return make_mask(width, cfg.center_fraction, cfg.acceleration,
                   derive_seed(derive_seed(cfg.mask_seed, detail::kMaskTag), fnv1a(volume)));
}

template <typename S>
std::vector<TrainItem<S>> load_train_items(const TrainingConfig& cfg,
                                           const DatasetManifest& manifest) {
  std::vector<TrainItem<S>> items;
  items.reserve(manifest.size());
  std::map<std::string, SamplingMask> masks;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const Sample s = load_sample(manifest, i);
    auto it = masks.find(s.volume);
    if (it == masks.end()) {
      it = masks.emplace(s.volume, volume_mask(s.image.cols(), cfg, s.volume)).first;
    }
    items.push_back(make_train_item<S>(s, it->second));
  }
  return items;
}

// Runs the full seeded loop: shuffled batches, periodic checkpoints, a final
// checkpoint, and the loss CSV. resume_from restarts mid-run from a periodic
// checkpoint and continues the identical trajectory.
template <typename S>
TrainState<S> train(const TrainingConfig& cfg, const DatasetManifest& manifest,
                    const std::string& resume_from = "") {
  cfg.validate();
  TrainState<S> st =
      resume_from.empty() ? init_train_state<S>(cfg) : load_checkpoint<S>(resume_from);
  if (!resume_from.empty()) {
    require(st.recon.parameter_count() == recon_parameter_count(cfg.recon) &&
                st.seg.parameter_count() == seg_parameter_count(cfg.seg),
            "train: resume checkpoint does not match the configured architecture");
  }

  const auto items = load_train_items<S>(cfg, manifest);
  require(!items.empty() || cfg.epochs == 0, "train: empty dataset");

  const bool writes = !cfg.run_dir.empty();
  if (writes) std::filesystem::create_directories(cfg.run_dir);

  std::vector<std::size_t> order(items.size());
  for (std::int64_t e = st.epoch; e < cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t(0));
    Rng shuffle_rng(derive_seed(derive_seed(cfg.seed, detail::kShuffleTag), std::uint64_t(e)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[std::size_t(shuffle_rng.below(i))]);
    }
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + std::size_t(cfg.batch_size));
      std::vector<TrainItem<S>> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(items[order[i]]);
      train_step(st, cfg, batch);
    }
    st.epoch = e + 1;
    if (writes && cfg.checkpoint_every > 0 && (e + 1) % cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "ckpt-%04lld.ckpt", static_cast<long long>(e + 1));
      save_checkpoint(st, (std::filesystem::path(cfg.run_dir) / name).string());
    }
  }

  if (writes) {
    save_checkpoint(st, (std::filesystem::path(cfg.run_dir) / "final.ckpt").string());
    write_loss_csv(st.history, (std::filesystem::path(cfg.run_dir) / "loss.csv").string());
  }
  return st;
}

// Inference is always free-running: the reconstruction output feeds the
// segmentation net regardless of the stored teacher-forcing policy.
template <typename S>
std::pair<Image<S>, FeatureMap<S>> infer(const TrainState<S>& st,
                                         const MeasuredKSpace<S>& m) {
  const Image<S> mag = magnitude(recon_forward(st.recon, m));
  FeatureMap<S> probs = seg_forward(st.seg, mag);
  return {mag, std::move(probs)};
}

}  // namespace mtmr

// Command-line front end: dataset synthesis, mask generation, training,
// evaluation, ablation grids, and loss-curve plots.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
// All artifacts are byte-deterministic for a given config and seeds;
// wall-clock timestamps go only to run.log.

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "mtmr/config.hpp"
#include "mtmr/core.hpp"
#include "mtmr/dataset.hpp"
#include "mtmr/mask.hpp"
#include "mtmr/metrics.hpp"
#include "mtmr/render.hpp"
#include "mtmr/trainer.hpp"

namespace fs = std::filesystem;
using namespace mtmr;

namespace {

// Relative output paths land under $MTMR_RUN_ROOT (default: ./runs).
fs::path run_root() {
  const char* env = std::getenv("MTMR_RUN_ROOT");
  return (env && *env) ? fs::path(env) : fs::path("runs");
}

fs::path resolve_out(const fs::path& p) {
  return p.is_absolute() ? p : run_root() / p;
}

void require_input(const fs::path& p, const char* what) {
  if (!fs::exists(p))
    throw std::invalid_argument(std::string(what) + " not found: " + p.string());
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

void append_log(const fs::path& run_dir, const std::string& msg) {
  std::ofstream os(run_dir / "run.log", std::ios::app);
  if (!os) return;  // the log is best-effort; artifacts matter, it does not
  char stamp[32];
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
  os << stamp << ' ' << msg << '\n';
}

ExperimentConfig load_config_checked(const std::string& path) {
  require_input(path, "config");
  return load_experiment_config(path);
}

// Builds both splits next to each other and returns their manifests.
std::pair<DatasetManifest, DatasetManifest> build_cohort(const ExperimentConfig& c,
                                                         const fs::path& root) {
  make_dirs(root);
  auto train = build_dataset(dataset_build_config(c, "train"), c.train_items,
                             dataset_seed(c, "train"), root);
  auto test = build_dataset(dataset_build_config(c, "test"), c.test_items,
                            dataset_seed(c, "test"), root);
  return {std::move(train), std::move(test)};
}

std::map<std::string, SamplingMask> cohort_masks(const DatasetManifest& manifest,
                                                 const TrainingConfig& tc) {
  std::map<std::string, SamplingMask> masks;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& it = manifest.items[i];
    if (masks.count(it.volume)) continue;
    const Sample s = load_sample(manifest, i);
    masks.emplace(it.volume, volume_mask(s.image.cols(), tc, it.volume));
  }
  return masks;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::string out = "data";
  int train_items = -1;
  int test_items = -1;
  std::int64_t seed = -1;
};

int cmd_simulate(const SimulateArgs& a) {
  ExperimentConfig c;
  if (!a.config.empty()) c = load_config_checked(a.config);
  if (a.train_items >= 0) c.train_items = a.train_items;
  if (a.test_items >= 0) c.test_items = a.test_items;
  if (a.seed >= 0) c.data_seed = std::uint64_t(a.seed);
  c.validate();

  const fs::path root = resolve_out(a.out);
  const auto [train, test] = build_cohort(c, root);
  std::cout << "train manifest: " << (train.split_dir / "manifest.json").string() << '\n'
            << "test manifest: " << (test.split_dir / "manifest.json").string() << '\n'
            << "train slices: " << train.size() << ", test slices: " << test.size() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// mask
// ---------------------------------------------------------------------------

struct MaskArgs {
  int width = 0;
  double center_fraction = 0.08;
  double acceleration = 4.0;
  std::uint64_t seed = 0;
  std::string out = "masks/mask";
};

int cmd_mask(const MaskArgs& a) {
  const SamplingMask m = make_mask(a.width, a.center_fraction, a.acceleration, a.seed);
  const fs::path base = resolve_out(a.out);
  make_dirs(base.parent_path());

  const fs::path txt = base.string() + ".txt";
  std::ofstream os(txt, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + txt.string());
  os << mask_to_text(m) << '\n';
  if (!os) throw IoError("short write: " + txt.string());

  const fs::path ppm = base.string() + ".ppm";
  write_ppm(render_mask(m, a.width), ppm);

  std::cout << "kept " << m.kept_count() << " of " << a.width << " lines\n"
            << "mask text: " << txt.string() << '\n'
            << "mask image: " << ppm.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string resume;
};

// Resolves the train manifest: explicit data dir, then the manifest named in
// the config, then a cohort synthesized under the run dir (reused if present).
DatasetManifest train_manifest_for(const ExperimentConfig& c, const std::string& data,
                                   const fs::path& run_dir) {
  if (!data.empty()) {
    const fs::path p = fs::path(data) / "train" / "manifest.json";
    require_input(p, "train manifest");
    return load_manifest(p);
  }
  if (!c.manifest.empty()) {
    require_input(c.manifest, "train manifest");
    return load_manifest(c.manifest);
  }
  const fs::path root = run_dir / "data";
  const fs::path existing = root / "train" / "manifest.json";
  if (fs::exists(existing)) return load_manifest(existing);
  return build_cohort(c, root).first;
}

std::vector<Series> loss_series(const std::vector<StepRecord>& history) {
  Series r{"L_recon", {}}, s{"L_seg", {}}, t{"L_total", {}};
  for (const auto& rec : history) {
    r.values.push_back(rec.l_recon);
    s.values.push_back(rec.l_seg);
    t.values.push_back(rec.l_total);
  }
  return {std::move(r), std::move(s), std::move(t)};
}

int run_training(ExperimentConfig c, const std::string& data, const std::string& resume,
                 const fs::path& run_dir) {
  c.validate();
  make_dirs(run_dir);
  append_log(run_dir, "train started");
  save_experiment_config(c, run_dir / "config.ini");

  const DatasetManifest manifest = train_manifest_for(c, data, run_dir);
  TrainingConfig tc = training_config(c);
  tc.run_dir = run_dir.string();

  auto st = train<float>(tc, manifest, resume);
  if (!st.history.empty()) write_ppm(plot_curves(loss_series(st.history)), run_dir / "loss.ppm");
  append_log(run_dir, "train finished");

  std::cout << "trained " << st.global_step << " steps over " << st.epoch << " epochs\n";
  if (!st.history.empty()) {
    const auto& last = st.history.back();
    char line[160];
    std::snprintf(line, sizeof line, "final losses: recon %.6g, seg %.6g, total %.6g\n",
                  last.l_recon, last.l_seg, last.l_total);
    std::cout << line;
  }
  std::cout << "run dir: " << run_dir.string() << '\n';
  return 0;
}

int cmd_train(const TrainArgs& a) {
  ExperimentConfig c = load_config_checked(a.config);
  if (!a.resume.empty()) require_input(a.resume, "checkpoint");
  return run_training(c, a.data, a.resume, resolve_out(c.run_dir));
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string data;
  std::string config;
  std::string out;
  double center_fraction = -1.0;
  double acceleration = -1.0;
  std::int64_t mask_seed = -1;
  int images = 4;
};

int cmd_eval(const EvalArgs& a) {
  require_input(a.checkpoint, "checkpoint");

  fs::path manifest_path;
  if (!a.manifest.empty())
    manifest_path = a.manifest;
  else if (!a.data.empty())
    manifest_path = fs::path(a.data) / "test" / "manifest.json";
  else
    throw std::invalid_argument("eval: pass --manifest or --data");
  require_input(manifest_path, "manifest");

  TrainingConfig tc;
  if (!a.config.empty()) tc = training_config(load_config_checked(a.config));
  if (a.center_fraction > 0.0) tc.center_fraction = a.center_fraction;
  if (a.acceleration > 0.0) tc.acceleration = a.acceleration;
  if (a.mask_seed >= 0) tc.mask_seed = std::uint64_t(a.mask_seed);

  const auto st = load_checkpoint<float>(a.checkpoint);
  const DatasetManifest manifest = load_manifest(manifest_path);
  const auto masks = cohort_masks(manifest, tc);
  const MetricsReport rep = evaluate(st, manifest, masks);

  const fs::path out =
      a.out.empty() ? fs::path(a.checkpoint).parent_path() / "eval" : resolve_out(a.out);
  make_dirs(out);
  write_report_json(rep, (out / "report.json").string());
  write_report_csv(rep, (out / "report.csv").string());

  const int n_images = std::min<int>(a.images, int(manifest.size()));
  for (int i = 0; i < n_images; ++i) {
    const Sample s = load_sample(manifest, std::size_t(i));
    const auto m = measure(s.image, masks.at(s.volume));
    const auto [mag, probs] = infer(st, m);
    char stem[64];
    std::snprintf(stem, sizeof stem, "%s-%03d", s.volume.c_str(), s.slice);
    write_pgm(error_map(mag, s.image), out / (std::string(stem) + ".err.pgm"),
              0.0, 1.0);
    write_ppm(render_overlay(s.image, binarize(probs), s.labels),
              out / (std::string(stem) + ".seg.ppm"));
  }

  char line[256];
  std::snprintf(line, sizeof line,
                "psnr %.3f +/- %.3f dB (zero-fill %.3f), ssim %.4f +/- %.4f\n", rep.psnr_mean,
                rep.psnr_std, rep.psnr_zero_fill_mean, rep.ssim_mean, rep.ssim_std);
  std::cout << line;
  for (std::size_t c = 0; c < rep.mean.size(); ++c) {
    std::snprintf(line, sizeof line, "class %zu dice %.4f +/- %.4f\n", c + 1, rep.mean[c].dice,
                  rep.stddev[c].dice);
    std::cout << line;
  }
  std::cout << "report: " << (out / "report.json").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateArgs {
  std::string config;
  std::string matrix = "table1";
  std::string out = "ablate";
  int parallel = 1;
};

struct Variant {
  std::string name;
  ExperimentConfig config;
};

std::vector<Variant> ablation_variants(const ExperimentConfig& base, const std::string& matrix) {
  auto with = [&](const char* name, bool itfs_on, ScheduleKind kind, double fixed_alpha) {
    Variant v{name, base};
    v.config.itfs.enabled = itfs_on;
    v.config.schedule.kind = kind;
    v.config.schedule.fixed_alpha = fixed_alpha;
    v.config.run_dir = name;
    return v;
  };
  if (matrix == "table1") {
    return {with("both", true, ScheduleKind::exponential, base.schedule.fixed_alpha),
            with("drlc-only", false, ScheduleKind::exponential, base.schedule.fixed_alpha),
            with("itfs-only", true, ScheduleKind::fixed, 0.5),
            with("neither", false, ScheduleKind::fixed, 0.5)};
  }
  return {with("fixed-0.5", true, ScheduleKind::fixed, 0.5),
          with("fixed-0.2", true, ScheduleKind::fixed, 0.2),
          with("linear", true, ScheduleKind::linear, base.schedule.fixed_alpha),
          with("exponential", true, ScheduleKind::exponential, base.schedule.fixed_alpha)};
}

struct VariantResult {
  std::string name;
  bool itfs = false;
  std::string schedule;
  MetricsReport report;
};

int cmd_ablate(const AblateArgs& a) {
  const ExperimentConfig base = load_config_checked(a.config);
  base.validate();
  if (a.parallel < 1) throw std::invalid_argument("ablate: --parallel must be >= 1");

  const fs::path out = resolve_out(a.out);
  make_dirs(out);
  append_log(out, "ablate " + a.matrix + " started");

  // One shared cohort: every variant sees identical data in identical order.
  const auto [train_manifest, test_manifest] = build_cohort(base, out / "data");

  const auto variants = ablation_variants(base, a.matrix);
  std::vector<VariantResult> results(variants.size());
  std::vector<std::string> errors(variants.size());

  const auto run_one = [&](std::size_t i) {
    const Variant& v = variants[i];
    const fs::path run_dir = out / v.name;
    ExperimentConfig c = v.config;
    c.validate();
    make_dirs(run_dir);
    save_experiment_config(c, run_dir / "config.ini");
    TrainingConfig tc = training_config(c);
    tc.run_dir = run_dir.string();
    auto st = train<float>(tc, train_manifest);
    if (!st.history.empty())
      write_ppm(plot_curves(loss_series(st.history)), run_dir / "loss.ppm");
    const auto masks = cohort_masks(test_manifest, tc);
    VariantResult r;
    r.name = v.name;
    r.itfs = c.itfs.enabled;
    r.schedule = to_string(c.schedule.kind);
    if (c.schedule.kind == ScheduleKind::fixed)
      r.schedule += "(" + detail::fmt_double(c.schedule.fixed_alpha) + ")";
    r.report = evaluate(st, test_manifest, masks);
    write_report_json(r.report, (run_dir / "report.json").string());
    write_report_csv(r.report, (run_dir / "report.csv").string());
    results[i] = std::move(r);
  };

  const int workers = std::min<int>(a.parallel, int(variants.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < variants.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= variants.size()) return;
          try {
            run_one(i);
          } catch (const std::exception& e) {
            errors[i] = e.what();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    for (std::size_t i = 0; i < errors.size(); ++i)
      if (!errors[i].empty())
        throw std::runtime_error("ablate: variant " + variants[i].name + " failed: " + errors[i]);
  }

  const fs::path summary = out / "summary.csv";
  std::ofstream os(summary, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + summary.string());
  os << "variant,itfs,schedule,psnr_mean,psnr_std,psnr_zero_fill_mean,ssim_mean,ssim_std,"
        "dice_mean,dice_std\n";
  char line[512];
  for (const auto& r : results) {
    const int oc = r.report.object_class;
    const auto& dice_mean = r.report.mean[std::size_t(oc - 1)];
    const auto& dice_std = r.report.stddev[std::size_t(oc - 1)];
    std::snprintf(line, sizeof line, "%s,%d,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  r.name.c_str(), r.itfs ? 1 : 0, r.schedule.c_str(), r.report.psnr_mean,
                  r.report.psnr_std, r.report.psnr_zero_fill_mean, r.report.ssim_mean,
                  r.report.ssim_std, dice_mean.dice, dice_std.dice);
    os << line;
  }
  if (!os) throw IoError("short write: " + summary.string());
  append_log(out, "ablate finished");

  std::cout << "ablation summary: " << summary.string() << '\n';
  for (const auto& r : results) {
    const auto& d = r.report.mean[std::size_t(r.report.object_class - 1)];
    std::snprintf(line, sizeof line, "  %-12s psnr %.3f dB, dice %.4f\n", r.name.c_str(),
                  r.report.psnr_mean, d.dice);
    std::cout << line;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

struct PlotArgs {
  std::vector<std::string> csv;
  std::string out = "plots/loss.ppm";
};

std::vector<StepRecord> read_loss_csv(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(is, line))
    throw IoError("empty loss csv: " + path.string());
  if (detail::trim(line) != "step,epoch,alpha,beta,teacher,L_recon,L_seg,L_total")
    throw std::invalid_argument("not a loss csv (unexpected header): " + path.string());
  std::vector<StepRecord> out;
  while (std::getline(is, line)) {
    if (detail::trim(line).empty()) continue;
    StepRecord r;
    long long step = 0, epoch = 0;
    int teacher = 0;
    if (std::sscanf(line.c_str(), "%lld,%lld,%lf,%lf,%d,%lf,%lf,%lf", &step, &epoch, &r.alpha,
                    &r.beta, &teacher, &r.l_recon, &r.l_seg, &r.l_total) != 8)
      throw std::invalid_argument("malformed loss csv row in " + path.string() + ": " + line);
    r.step = step;
    r.epoch = epoch;
    r.teacher = teacher != 0;
    out.push_back(r);
  }
  return out;
}

int cmd_plot(const PlotArgs& a) {
  std::vector<Series> series;
  if (a.csv.size() == 1) {
    require_input(a.csv[0], "loss csv");
    series = loss_series(read_loss_csv(a.csv[0]));
  } else {
    // Several runs: compare their segmentation losses on one chart.
    for (const auto& p : a.csv) {
      require_input(p, "loss csv");
      Series s;
      const fs::path fp(p);
      s.name = fp.parent_path().filename().string();
      if (s.name.empty()) s.name = fp.stem().string();
      for (const auto& r : read_loss_csv(p)) s.values.push_back(r.l_seg);
      series.push_back(std::move(s));
    }
  }
  const fs::path out = resolve_out(a.out);
  make_dirs(out.parent_path());
  write_ppm(plot_curves(series), out);
  std::cout << "plot: " << out.string() << '\n';
  for (std::size_t i = 0; i < series.size(); ++i)
    std::cout << "  series " << i << ": " << series[i].name << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint MR reconstruction + segmentation from under-sampled k-space"};
  app.require_subcommand(1);
  int rc = 0;

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "synthesize a phantom train/test cohort");
  simulate->add_option("--config", sim.config, "experiment config file");
  simulate->add_option("--out", sim.out, "output root (train/ and test/ go under it)");
  simulate->add_option("--train-items", sim.train_items, "override train slice count");
  simulate->add_option("--test-items", sim.test_items, "override test slice count");
  simulate->add_option("--seed", sim.seed, "override data seed");
  simulate->callback([&] { rc = cmd_simulate(sim); });

  MaskArgs mask;
  auto* maskc = app.add_subcommand("mask", "generate a Cartesian undersampling mask");
  maskc->add_option("--width", mask.width, "number of phase-encode lines")->required();
  maskc->add_option("--center-fraction", mask.center_fraction, "fraction of kept center lines");
  maskc->add_option("--acceleration", mask.acceleration, "target acceleration factor");
  maskc->add_option("--seed", mask.seed, "mask seed");
  maskc->add_option("--out", mask.out, "output base path (writes .txt and .ppm)");
  maskc->callback([&] { rc = cmd_mask(mask); });

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "train the joint model");
  train->add_option("--config", tr.config, "experiment config file")->required();
  train->add_option("--data", tr.data, "dataset root with train/manifest.json");
  train->add_option("--resume", tr.resume, "checkpoint to resume from");
  train->callback([&] { rc = cmd_train(tr); });

  EvalArgs ev;
  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on a test split");
  evalc->add_option("--checkpoint", ev.checkpoint, "trained checkpoint")->required();
  evalc->add_option("--manifest", ev.manifest, "test manifest path");
  evalc->add_option("--data", ev.data, "dataset root with test/manifest.json");
  evalc->add_option("--config", ev.config, "experiment config (mask parameters)");
  evalc->add_option("--center-fraction", ev.center_fraction, "override mask center fraction");
  evalc->add_option("--acceleration", ev.acceleration, "override mask acceleration");
  evalc->add_option("--mask-seed", ev.mask_seed, "override mask seed");
  evalc->add_option("--out", ev.out, "report directory (default: alongside checkpoint)");
  evalc->add_option("--images", ev.images, "rendered sample count");
  evalc->callback([&] { rc = cmd_eval(ev); });

  AblateArgs ab;
  auto* ablate = app.add_subcommand("ablate", "run an ablation grid from one base config");
  ablate->add_option("--config", ab.config, "base experiment config")->required();
  ablate->add_option("--matrix", ab.matrix, "which grid to run")
      ->check(CLI::IsMember({"table1", "table2"}));
  ablate->add_option("--out", ab.out, "output root for the grid");
  ablate->add_option("--parallel", ab.parallel, "worker threads (runs stay deterministic)");
  ablate->callback([&] { rc = cmd_ablate(ab); });

  PlotArgs pl;
  auto* plot = app.add_subcommand("plot", "render loss curves from loss.csv files");
  plot->add_option("csv", pl.csv, "loss.csv files (several: L_seg comparison)")->required();
  plot->add_option("--out", pl.out, "output image (.ppm)");
  plot->callback([&] { rc = cmd_plot(pl); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "error: training diverged: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return rc;
}

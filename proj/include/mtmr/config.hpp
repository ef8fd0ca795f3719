#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtmr/core.hpp"
#include "mtmr/dataset.hpp"
#include "mtmr/itfs.hpp"
#include "mtmr/losses.hpp"
#include "mtmr/phantom.hpp"
#include "mtmr/recon_net.hpp"
#include "mtmr/rng.hpp"
#include "mtmr/schedule.hpp"
#include "mtmr/seg_net.hpp"
#include "mtmr/trainer.hpp"

namespace mtmr {

// Whole-experiment description, read from and written to a flat INI-style
// text file.  Sections and keys are fixed by the schema below; anything not
// in the schema is a hard error so typos cannot silently fall back to
// defaults.  Serialization is canonical (fixed order, shortest round-trip
// number formatting), so parse(serialize(c)) == c and serialize is a
// fixpoint under re-parsing.
struct ExperimentConfig {
  // [data]
  std::string manifest;  // existing train manifest; empty = synthesize phantoms
  PhantomConfig phantom;
  int slices_per_volume = 5;
  int train_items = 200;
  int test_items = 50;
  Normalization normalization = Normalization::min_max;
  std::uint64_t data_seed = 0;

  // [mask]
  double center_fraction = 0.08;
  double acceleration = 4.0;
  std::uint64_t mask_seed = 0;

  // [recon]
  ReconConfig recon;

  // [seg]  (n_classes always mirrors data.classes, so it has no key)
  SegConfig seg;

  // [training]
  int epochs = 30;
  int batch_size = 4;
  double learning_rate = 1e-4;
  bool lr_decay = false;
  std::uint64_t train_seed = 0;
  SegLossKind seg_loss = SegLossKind::dice;
  WeightSchedule schedule;
  ItfsPolicy itfs;

  // [output]
  std::string run_dir = "default";
  int checkpoint_every = 10;

  void validate() const;

  bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string fmt_int(long long v) { return std::to_string(v); }
inline std::string fmt_u64(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt_bool(bool v) { return v ? "true" : "false"; }

[[noreturn]] inline void bad_value(const std::string& key, const std::string& value,
                                   const char* expected) {
  throw std::invalid_argument("config: bad value '" + value + "' for " + key + " (expected " +
                              expected + ")");
}

inline int parse_int(const std::string& key, const std::string& value) {
  int out = 0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size())
    bad_value(key, value, "integer");
  return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size())
    bad_value(key, value, "unsigned integer");
  return out;
}

inline double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size() || !std::isfinite(out))
    bad_value(key, value, "finite number");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  bad_value(key, value, "true or false");
}

struct ConfigField {
  const char* section;
  const char* key;
  std::string (*get)(const ExperimentConfig&);
  void (*set)(ExperimentConfig&, const std::string&);
};

// Canonical schema: serialization order is exactly this table's order.
inline const std::vector<ConfigField>& config_schema() {
  using C = ExperimentConfig;
  static const std::vector<ConfigField> schema = {
      {"data", "manifest", [](const C& c) { return c.manifest; },
       [](C& c, const std::string& v) { c.manifest = v; }},
      {"data", "height", [](const C& c) { return fmt_int(c.phantom.height); },
       [](C& c, const std::string& v) { c.phantom.height = parse_int("data.height", v); }},
      {"data", "width", [](const C& c) { return fmt_int(c.phantom.width); },
       [](C& c, const std::string& v) { c.phantom.width = parse_int("data.width", v); }},
      {"data", "ellipses", [](const C& c) { return fmt_int(c.phantom.n_ellipses); },
       [](C& c, const std::string& v) { c.phantom.n_ellipses = parse_int("data.ellipses", v); }},
      {"data", "lesions", [](const C& c) { return fmt_int(c.phantom.lesion_count); },
       [](C& c, const std::string& v) { c.phantom.lesion_count = parse_int("data.lesions", v); }},
      {"data", "classes", [](const C& c) { return fmt_int(c.phantom.n_classes); },
       [](C& c, const std::string& v) { c.phantom.n_classes = parse_int("data.classes", v); }},
      {"data", "slices_per_volume", [](const C& c) { return fmt_int(c.slices_per_volume); },
       [](C& c, const std::string& v) {
         c.slices_per_volume = parse_int("data.slices_per_volume", v);
       }},
      {"data", "train_items", [](const C& c) { return fmt_int(c.train_items); },
       [](C& c, const std::string& v) { c.train_items = parse_int("data.train_items", v); }},
      {"data", "test_items", [](const C& c) { return fmt_int(c.test_items); },
       [](C& c, const std::string& v) { c.test_items = parse_int("data.test_items", v); }},
      {"data", "normalization", [](const C& c) { return to_string(c.normalization); },
       [](C& c, const std::string& v) { c.normalization = normalization_from_string(v); }},
      {"data", "seed", [](const C& c) { return fmt_u64(c.data_seed); },
       [](C& c, const std::string& v) { c.data_seed = parse_u64("data.seed", v); }},

      {"mask", "center_fraction", [](const C& c) { return fmt_double(c.center_fraction); },
       [](C& c, const std::string& v) {
         c.center_fraction = parse_double("mask.center_fraction", v);
       }},
      {"mask", "acceleration", [](const C& c) { return fmt_double(c.acceleration); },
       [](C& c, const std::string& v) { c.acceleration = parse_double("mask.acceleration", v); }},
      {"mask", "seed", [](const C& c) { return fmt_u64(c.mask_seed); },
       [](C& c, const std::string& v) { c.mask_seed = parse_u64("mask.seed", v); }},

      {"recon", "cascades", [](const C& c) { return fmt_int(c.recon.n_cascades); },
       [](C& c, const std::string& v) { c.recon.n_cascades = parse_int("recon.cascades", v); }},
      {"recon", "convs_per_block", [](const C& c) { return fmt_int(c.recon.convs_per_block); },
       [](C& c, const std::string& v) {
         c.recon.convs_per_block = parse_int("recon.convs_per_block", v);
       }},
      {"recon", "channels", [](const C& c) { return fmt_int(c.recon.channels); },
       [](C& c, const std::string& v) { c.recon.channels = parse_int("recon.channels", v); }},
      {"recon", "kernel", [](const C& c) { return fmt_int(c.recon.kernel); },
       [](C& c, const std::string& v) { c.recon.kernel = parse_int("recon.kernel", v); }},
      {"recon", "dc_lambda",
       [](const C& c) { return c.recon.dc_lambda ? fmt_double(*c.recon.dc_lambda)
                                                 : std::string("none"); },
       [](C& c, const std::string& v) {
         if (v == "none")
           c.recon.dc_lambda.reset();
         else
           c.recon.dc_lambda = parse_double("recon.dc_lambda", v);
       }},
      {"recon", "residual", [](const C& c) { return fmt_bool(c.recon.residual); },
       [](C& c, const std::string& v) { c.recon.residual = parse_bool("recon.residual", v); }},

      {"seg", "depth", [](const C& c) { return fmt_int(c.seg.depth); },
       [](C& c, const std::string& v) { c.seg.depth = parse_int("seg.depth", v); }},
      {"seg", "base_channels", [](const C& c) { return fmt_int(c.seg.base_channels); },
       [](C& c, const std::string& v) { c.seg.base_channels = parse_int("seg.base_channels", v); }},
      {"seg", "kernel", [](const C& c) { return fmt_int(c.seg.kernel); },
       [](C& c, const std::string& v) { c.seg.kernel = parse_int("seg.kernel", v); }},

      {"training", "epochs", [](const C& c) { return fmt_int(c.epochs); },
       [](C& c, const std::string& v) { c.epochs = parse_int("training.epochs", v); }},
      {"training", "batch_size", [](const C& c) { return fmt_int(c.batch_size); },
       [](C& c, const std::string& v) { c.batch_size = parse_int("training.batch_size", v); }},
      {"training", "learning_rate", [](const C& c) { return fmt_double(c.learning_rate); },
       [](C& c, const std::string& v) {
         c.learning_rate = parse_double("training.learning_rate", v);
       }},
      {"training", "lr_decay", [](const C& c) { return fmt_bool(c.lr_decay); },
       [](C& c, const std::string& v) { c.lr_decay = parse_bool("training.lr_decay", v); }},
      {"training", "seed", [](const C& c) { return fmt_u64(c.train_seed); },
       [](C& c, const std::string& v) { c.train_seed = parse_u64("training.seed", v); }},
      {"training", "seg_loss", [](const C& c) { return to_string(c.seg_loss); },
       [](C& c, const std::string& v) { c.seg_loss = seg_loss_kind_from_string(v); }},
      {"training", "schedule", [](const C& c) { return to_string(c.schedule.kind); },
       [](C& c, const std::string& v) { c.schedule.kind = schedule_kind_from_string(v); }},
      {"training", "fixed_alpha", [](const C& c) { return fmt_double(c.schedule.fixed_alpha); },
       [](C& c, const std::string& v) {
         c.schedule.fixed_alpha = parse_double("training.fixed_alpha", v);
       }},
      {"training", "t_scale", [](const C& c) { return fmt_double(c.schedule.t_scale); },
       [](C& c, const std::string& v) { c.schedule.t_scale = parse_double("training.t_scale", v); }},
      {"training", "floor", [](const C& c) { return fmt_double(c.schedule.floor); },
       [](C& c, const std::string& v) { c.schedule.floor = parse_double("training.floor", v); }},
      {"training", "offset", [](const C& c) { return fmt_double(c.schedule.offset); },
       [](C& c, const std::string& v) { c.schedule.offset = parse_double("training.offset", v); }},
      {"training", "linear_end", [](const C& c) { return fmt_double(c.schedule.linear_end); },
       [](C& c, const std::string& v) {
         c.schedule.linear_end = parse_double("training.linear_end", v);
       }},
      {"training", "itfs", [](const C& c) { return fmt_bool(c.itfs.enabled); },
       [](C& c, const std::string& v) { c.itfs.enabled = parse_bool("training.itfs", v); }},
      {"training", "itfs_ratio", [](const C& c) { return fmt_double(c.itfs.teacher_ratio); },
       [](C& c, const std::string& v) {
         c.itfs.teacher_ratio = parse_double("training.itfs_ratio", v);
       }},
      {"training", "itfs_schedule", [](const C& c) { return to_string(c.itfs.schedule); },
       [](C& c, const std::string& v) { c.itfs.schedule = itfs_schedule_from_string(v); }},
      {"training", "itfs_seed", [](const C& c) { return fmt_u64(c.itfs.seed); },
       [](C& c, const std::string& v) { c.itfs.seed = parse_u64("training.itfs_seed", v); }},

      {"output", "run_dir", [](const C& c) { return c.run_dir; },
       [](C& c, const std::string& v) { c.run_dir = v; }},
      {"output", "checkpoint_every", [](const C& c) { return fmt_int(c.checkpoint_every); },
       [](C& c, const std::string& v) {
         c.checkpoint_every = parse_int("output.checkpoint_every", v);
       }},
  };
  return schema;
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline std::string serialize_experiment_config(const ExperimentConfig& c) {
  std::ostringstream os;
  const char* current = "";
  bool first = true;
  for (const auto& f : detail::config_schema()) {
    if (std::string_view(current) != f.section) {
      if (!first) os << '\n';
      os << '[' << f.section << "]\n";
      current = f.section;
      first = false;
    }
    os << f.key << " = " << f.get(c) << '\n';
  }
  return os.str();
}

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  const auto& schema = detail::config_schema();
  ExperimentConfig c;
  std::vector<bool> seen(schema.size(), false);
  std::string section;
  std::istringstream is(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    const std::string line = detail::trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const std::string where = "config line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument(where + ": malformed section header '" + line + "'");
      section = detail::trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& f : schema) known = known || section == f.section;
      if (!known) throw std::invalid_argument(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(where + ": expected 'key = value', got '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (section.empty())
      throw std::invalid_argument(where + ": key '" + key + "' before any section header");
    bool matched = false;
    for (std::size_t i = 0; i < schema.size(); ++i) {
      if (section != schema[i].section || key != schema[i].key) continue;
      if (seen[i])
        throw std::invalid_argument(where + ": duplicate key " + section + "." + key);
      try {
        schema[i].set(c, value);
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(where + ": " + e.what());
      }
      seen[i] = true;
      matched = true;
      break;
    }
    if (!matched)
      throw std::invalid_argument(where + ": unknown key '" + key + "' in section [" + section +
                                  "]");
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open config: " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_experiment_config(buf.str());
}

inline void save_experiment_config(const ExperimentConfig& c, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open config for writing: " + path.string());
  os << serialize_experiment_config(c);
  if (!os) throw IoError("short write on config: " + path.string());
}

// The training loop's view of the experiment.  run_dir is carried over
// verbatim; the caller decides how to anchor relative paths.
inline TrainingConfig training_config(const ExperimentConfig& c) {
  TrainingConfig t;
  t.recon = c.recon;
  t.seg = c.seg;
  t.seg.n_classes = c.phantom.n_classes;
  t.schedule = c.schedule;
  t.itfs = c.itfs;
  t.adam.lr = c.learning_rate;
  t.adam.lr_decay = c.lr_decay;
  t.seg_loss_kind = c.seg_loss;
  t.epochs = c.epochs;
  t.batch_size = c.batch_size;
  t.center_fraction = c.center_fraction;
  t.acceleration = c.acceleration;
  t.seed = c.train_seed;
  t.mask_seed = c.mask_seed;
  t.checkpoint_every = c.checkpoint_every;
  t.run_dir = c.run_dir;
  return t;
}

inline DatasetBuildConfig dataset_build_config(const ExperimentConfig& c,
                                               const std::string& split) {
  DatasetBuildConfig b;
  b.phantom = c.phantom;
  b.split = split;
  b.slices_per_volume = c.slices_per_volume;
  b.normalization = c.normalization;
  return b;
}

// Each split synthesizes from its own stream so train and test never share
// phantom geometry.
inline std::uint64_t dataset_seed(const ExperimentConfig& c, const std::string& split) {
  return derive_seed(c.data_seed, fnv1a(split));
}

inline void ExperimentConfig::validate() const {
  training_config(*this).validate();
  require(phantom.height >= 16 && phantom.width >= 16,
          "ExperimentConfig: phantom grid must be at least 16x16");
  require(phantom.n_ellipses >= 0, "ExperimentConfig: ellipses must be non-negative");
  require(phantom.lesion_count >= 0, "ExperimentConfig: lesions must be non-negative");
  require(slices_per_volume >= 1, "ExperimentConfig: slices_per_volume must be >= 1");
  require(train_items >= 1, "ExperimentConfig: train_items must be >= 1");
  require(test_items >= 1, "ExperimentConfig: test_items must be >= 1");
}

}  // namespace mtmr

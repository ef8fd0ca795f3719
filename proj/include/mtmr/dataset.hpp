#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mtmr/core.hpp"
#include "mtmr/phantom.hpp"
#include "mtmr/rng.hpp"

namespace mtmr {

// ---------------------------------------------------------------------------
// Raster file format: "MTMR1" magic, one dtype byte (1 = float32, 2 = uint8),
// u32 height and width (little endian), then row-major payload.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kRasterMagic[5] = {'M', 'T', 'M', 'R', '1'};
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeU8 = 2;

inline void put_u32_le(std::ostream& os, std::uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline std::uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

inline void write_raster_header(std::ostream& os, std::uint8_t dtype, Index rows, Index cols) {
  os.write(kRasterMagic, 5);
  os.put(char(dtype));
  put_u32_le(os, std::uint32_t(rows));
  put_u32_le(os, std::uint32_t(cols));
}

inline void read_raster_header(std::istream& is, const std::string& path, std::uint8_t expect_dtype,
                               Index& rows, Index& cols) {
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kRasterMagic, 5) != 0)
    throw IoError("corrupt raster file (bad magic): " + path);
  const int dtype = is.get();
  if (dtype != expect_dtype) throw IoError("raster dtype mismatch: " + path);
  rows = Index(get_u32_le(is));
  cols = Index(get_u32_le(is));
  if (!is || rows <= 0 || cols <= 0) throw IoError("corrupt raster header: " + path);
}

}  // namespace detail

inline void save_image(const Image<float>& img, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  detail::write_raster_header(os, detail::kDtypeF32, img.rows(), img.cols());
  for (Index y = 0; y < img.rows(); ++y)
    for (Index x = 0; x < img.cols(); ++x) {
      float v = img(y, x);
      os.write(reinterpret_cast<const char*>(&v), 4);
    }
  if (!os) throw IoError("write failed: " + path.string());
}

inline Image<float> load_image(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  Index rows, cols;
  detail::read_raster_header(is, path.string(), detail::kDtypeF32, rows, cols);
  Image<float> img(rows, cols);
  for (Index y = 0; y < rows; ++y)
    for (Index x = 0; x < cols; ++x) {
      float v;
      is.read(reinterpret_cast<char*>(&v), 4);
      img(y, x) = v;
    }
  if (!is) throw IoError("truncated raster file: " + path.string());
  is.peek();
  if (!is.eof()) throw IoError("trailing bytes in raster file: " + path.string());
  return img;
}

inline void save_labels(const LabelMap& lbl, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  detail::write_raster_header(os, detail::kDtypeU8, lbl.rows(), lbl.cols());
  for (Index y = 0; y < lbl.rows(); ++y)
    for (Index x = 0; x < lbl.cols(); ++x) os.put(char(lbl(y, x)));
  if (!os) throw IoError("write failed: " + path.string());
}

inline LabelMap load_labels(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  Index rows, cols;
  detail::read_raster_header(is, path.string(), detail::kDtypeU8, rows, cols);
  LabelMap lbl(rows, cols);
  for (Index y = 0; y < rows; ++y)
    for (Index x = 0; x < cols; ++x) {
      const int v = is.get();
      if (v < 0) throw IoError("truncated raster file: " + path.string());
      lbl(y, x) = std::uint8_t(v);
    }
  is.peek();
  if (!is.eof()) throw IoError("trailing bytes in raster file: " + path.string());
  return lbl;
}

// ---------------------------------------------------------------------------
// Dataset on disk: <root>/<split>/<volume>/<slice files> plus a manifest.json
// per split listing every item in order.
// ---------------------------------------------------------------------------

enum class Normalization { min_max, z_score };

inline std::string to_string(Normalization n) {
  return n == Normalization::min_max ? "min-max" : "z-score";
}

inline Normalization normalization_from_string(const std::string& s) {
  if (s == "min-max") return Normalization::min_max;
  if (s == "z-score") return Normalization::z_score;
  throw std::invalid_argument("unknown normalization: " + s);
}

struct ManifestItem {
  std::string image;    // path relative to the split directory
  std::string label;
  std::string volume;   // volume id, groups slices
  int slice = 0;
};

struct DatasetManifest {
  std::filesystem::path split_dir;  // directory holding manifest.json
  std::string split;
  Normalization normalization = Normalization::min_max;
  int n_classes = 0;
  std::vector<std::string> class_names;
  std::vector<ManifestItem> items;

  std::size_t size() const { return items.size(); }
};

inline void save_manifest(const DatasetManifest& m) {
  nlohmann::json j;
  j["split"] = m.split;
  j["normalization"] = to_string(m.normalization);
  j["n_classes"] = m.n_classes;
  j["class_names"] = m.class_names;
  auto items = nlohmann::json::array();
  for (const auto& it : m.items) {
    items.push_back({{"image", it.image}, {"label", it.label}, {"volume", it.volume}, {"slice", it.slice}});
  }
  j["items"] = std::move(items);
  const auto path = m.split_dir / "manifest.json";
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

inline DatasetManifest load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open: " + manifest_path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("corrupt manifest " + manifest_path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.split_dir = manifest_path.parent_path();
  try {
    m.split = j.at("split").get<std::string>();
    m.normalization = normalization_from_string(j.at("normalization").get<std::string>());
    m.n_classes = j.at("n_classes").get<int>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& it : j.at("items")) {
      ManifestItem mi;
      mi.image = it.at("image").get<std::string>();
      mi.label = it.at("label").get<std::string>();
      mi.volume = it.at("volume").get<std::string>();
      mi.slice = it.at("slice").get<int>();
      m.items.push_back(std::move(mi));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt manifest " + manifest_path.string() + ": " + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Normalization and sample loading
// ---------------------------------------------------------------------------

// Min-max to [0, 1]; a constant image maps to all zeros.
inline Image<float> normalize_min_max(const Image<float>& img) {
  const float lo = img.minCoeff(), hi = img.maxCoeff();
  if (hi <= lo) return Image<float>::Zero(img.rows(), img.cols());
  return (img - lo) / (hi - lo);
}

// Zero mean, unit variance; a constant image maps to all zeros.
inline Image<float> normalize_z_score(const Image<float>& img) {
  const double n = double(img.size());
  double mean = 0.0;
  for (Index y = 0; y < img.rows(); ++y)
    for (Index x = 0; x < img.cols(); ++x) mean += img(y, x);
  mean /= n;
  double var = 0.0;
  for (Index y = 0; y < img.rows(); ++y)
    for (Index x = 0; x < img.cols(); ++x) {
      const double d = img(y, x) - mean;
      var += d * d;
    }
  var /= n;
  if (var <= 0.0) return Image<float>::Zero(img.rows(), img.cols());
  const double inv = 1.0 / std::sqrt(var);
  Image<float> out(img.rows(), img.cols());
  for (Index y = 0; y < img.rows(); ++y)
    for (Index x = 0; x < img.cols(); ++x) out(y, x) = float((img(y, x) - mean) * inv);
  return out;
}

inline Image<float> normalize(const Image<float>& img, Normalization n) {
  return n == Normalization::min_max ? normalize_min_max(img) : normalize_z_score(img);
}

struct Sample {
  Image<float> image;   // normalized fully-sampled image
  LabelMap labels;
  std::string volume;
  int slice = 0;
};

inline Sample load_sample(const DatasetManifest& m, std::size_t idx) {
  if (idx >= m.items.size()) throw std::out_of_range("load_sample: index out of range");
  const auto& it = m.items[idx];
  Sample s;
  s.image = normalize(load_image(m.split_dir / it.image), m.normalization);
  s.labels = load_labels(m.split_dir / it.label);
  if (s.image.rows() != s.labels.rows() || s.image.cols() != s.labels.cols())
    throw IoError("image/label shape mismatch for item " + it.image);
  s.volume = it.volume;
  s.slice = it.slice;
  return s;
}

// Full scan: every item loads cleanly, shapes agree, labels are in range.
inline void validate_dataset(const DatasetManifest& m) {
  for (std::size_t i = 0; i < m.items.size(); ++i) {
    const Sample s = load_sample(m, i);
    if ((s.labels >= std::uint8_t(m.n_classes)).any())
      throw IoError("label out of range in item " + m.items[i].label);
  }
}

// ---------------------------------------------------------------------------
// Synthetic-cohort builder
// ---------------------------------------------------------------------------

struct DatasetBuildConfig {
  PhantomConfig phantom;
  std::string split = "train";  // one of train, val, test
  int slices_per_volume = 5;
  Normalization normalization = Normalization::min_max;
};

inline DatasetManifest build_dataset(const DatasetBuildConfig& cfg, int n_items, std::uint64_t seed,
                                     const std::filesystem::path& root) {
  require(n_items >= 1, "build_dataset: need at least one slice");
  require(cfg.slices_per_volume >= 1, "build_dataset: slices_per_volume must be >= 1");
  require(cfg.split == "train" || cfg.split == "val" || cfg.split == "test",
          "build_dataset: split must be train, val, or test");

  DatasetManifest m;
  m.split = cfg.split;
  m.split_dir = root / cfg.split;
  m.normalization = cfg.normalization;
  m.n_classes = cfg.phantom.n_classes;

  std::error_code ec;
  std::filesystem::create_directories(m.split_dir, ec);
  if (ec) throw IoError("cannot create " + m.split_dir.string() + ": " + ec.message());

  char buf[32];
  for (int i = 0; i < n_items; ++i) {
    const int vol = i / cfg.slices_per_volume;
    const int slice = i % cfg.slices_per_volume;
    std::snprintf(buf, sizeof buf, "v%03d", vol);
    const std::string volume = buf;
    std::snprintf(buf, sizeof buf, "%03d", slice);
    const std::string stem = buf;

    const Phantom ph = generate_phantom(cfg.phantom, derive_seed(seed, std::uint64_t(i)));
    if (m.class_names.empty()) m.class_names = ph.class_names;

    std::filesystem::create_directories(m.split_dir / volume, ec);
    if (ec) throw IoError("cannot create " + (m.split_dir / volume).string() + ": " + ec.message());

    ManifestItem it;
    it.image = volume + "/" + stem + ".img.npyish";
    it.label = volume + "/" + stem + ".lbl.npyish";
    it.volume = volume;
    it.slice = slice;
    save_image(ph.image, m.split_dir / it.image);
    save_labels(ph.labels, m.split_dir / it.label);
    m.items.push_back(std::move(it));
  }
  save_manifest(m);
  return m;
}

}  // namespace mtmr

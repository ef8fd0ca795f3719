#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mtmr/adam.hpp"
#include "mtmr/core.hpp"
#include "mtmr/itfs.hpp"
#include "mtmr/recon_net.hpp"
#include "mtmr/rng.hpp"
#include "mtmr/schedule.hpp"
#include "mtmr/seg_net.hpp"

namespace mtmr {

inline constexpr char kCheckpointMagic[8] = {'M', 'T', 'M', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

// Little-endian byte buffer codecs for the checkpoint payloads. The project
// only targets little-endian hosts; raw writes keep the files bit-stable.
struct ByteWriter {
  std::string buf;

  void raw(const void* p, std::size_t n) {
    buf.append(static_cast<const char*>(p), n);
  }
  template <typename T>
  void pod(T v) {
    raw(&v, sizeof(T));
  }
  template <typename T>
  void span(const T* p, std::size_t n) {
    raw(p, n * sizeof(T));
  }
};

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;

  void raw(void* p, std::size_t n) {
    if (pos + n > buf.size()) throw IoError("checkpoint: section payload truncated");
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  template <typename T>
  T pod() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  template <typename T>
  void span(T* p, std::size_t n) {
    raw(p, n * sizeof(T));
  }
  void done() const {
    if (pos != buf.size()) throw IoError("checkpoint: trailing bytes in section");
  }
};

template <typename S>
constexpr std::uint8_t scalar_tag() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>,
                "checkpoint scalars must be float or double");
  return std::is_same_v<S, float> ? 1 : 2;
}

template <typename S>
void check_scalar_tag(ByteReader& r) {
  if (r.pod<std::uint8_t>() != scalar_tag<S>())
    throw IoError("checkpoint: scalar type does not match this reader");
}

}  // namespace detail

template <typename S>
std::string encode_recon_section(const ReconParams<S>& p) {
  detail::ByteWriter w;
  w.pod(detail::scalar_tag<S>());
  const ReconConfig& c = p.config;
  w.pod(std::int32_t(c.n_cascades));
  w.pod(std::int32_t(c.convs_per_block));
  w.pod(std::int32_t(c.channels));
  w.pod(std::int32_t(c.kernel));
  w.pod(std::uint8_t(c.dc_lambda.has_value() ? 1 : 0));
  w.pod(double(c.dc_lambda.value_or(0.0)));
  w.pod(std::uint8_t(c.residual ? 1 : 0));
  const_cast<ReconParams<S>&>(p).for_each_layer([&w](ConvLayer<S>& l) {
    w.span(l.w.data(), l.w.size());
    w.span(l.b.data(), l.b.size());
  });
  return std::move(w.buf);
}

template <typename S>
ReconParams<S> decode_recon_section(const std::string& payload) {
  detail::ByteReader r{payload};
  detail::check_scalar_tag<S>(r);
  ReconConfig c;
  c.n_cascades = r.pod<std::int32_t>();
  c.convs_per_block = r.pod<std::int32_t>();
  c.channels = r.pod<std::int32_t>();
  c.kernel = r.pod<std::int32_t>();
  const bool has_lambda = r.pod<std::uint8_t>() != 0;
  const double lambda = r.pod<double>();
  if (has_lambda) c.dc_lambda = lambda;
  c.residual = r.pod<std::uint8_t>() != 0;
  auto p = recon_zero_params<S>(c);
  p.for_each_layer([&r](ConvLayer<S>& l) {
    r.span(l.w.data(), l.w.size());
    r.span(l.b.data(), l.b.size());
  });
  r.done();
  return p;
}

template <typename S>
std::string encode_seg_section(const SegParams<S>& p) {
  detail::ByteWriter w;
  w.pod(detail::scalar_tag<S>());
  const SegConfig& c = p.config;
  w.pod(std::int32_t(c.depth));
  w.pod(std::int32_t(c.base_channels));
  w.pod(std::int32_t(c.n_classes));
  w.pod(std::int32_t(c.kernel));
  const_cast<SegParams<S>&>(p).for_each_layer([&w](ConvLayer<S>& l) {
    w.span(l.w.data(), l.w.size());
    w.span(l.b.data(), l.b.size());
  });
  return std::move(w.buf);
}

template <typename S>
SegParams<S> decode_seg_section(const std::string& payload) {
  detail::ByteReader r{payload};
  detail::check_scalar_tag<S>(r);
  SegConfig c;
  c.depth = r.pod<std::int32_t>();
  c.base_channels = r.pod<std::int32_t>();
  c.n_classes = r.pod<std::int32_t>();
  c.kernel = r.pod<std::int32_t>();
  auto p = seg_zero_params<S>(c);
  p.for_each_layer([&r](ConvLayer<S>& l) {
    r.span(l.w.data(), l.w.size());
    r.span(l.b.data(), l.b.size());
  });
  r.done();
  return p;
}

template <typename S>
std::string encode_optimizer_section(const AdamConfig& c, const AdamState<S>& st) {
  detail::ByteWriter w;
  w.pod(detail::scalar_tag<S>());
  w.pod(c.lr);
  w.pod(c.beta1);
  w.pod(c.beta2);
  w.pod(c.eps);
  w.pod(std::uint8_t(c.lr_decay ? 1 : 0));
  w.pod(c.decay_factor);
  w.pod(std::int32_t(c.decay_epochs));
  w.pod(std::int64_t(st.t));
  w.pod(std::uint64_t(st.m.size()));
  w.span(st.m.data(), st.m.size());
  w.span(st.v.data(), st.v.size());
  return std::move(w.buf);
}

template <typename S>
void decode_optimizer_section(const std::string& payload, AdamConfig& c, AdamState<S>& st) {
  detail::ByteReader r{payload};
  detail::check_scalar_tag<S>(r);
  c.lr = r.pod<double>();
  c.beta1 = r.pod<double>();
  c.beta2 = r.pod<double>();
  c.eps = r.pod<double>();
  c.lr_decay = r.pod<std::uint8_t>() != 0;
  c.decay_factor = r.pod<double>();
  c.decay_epochs = r.pod<std::int32_t>();
  st.t = r.pod<std::int64_t>();
  const std::uint64_t n = r.pod<std::uint64_t>();
  st.m.resize(n);
  st.v.resize(n);
  r.span(st.m.data(), n);
  r.span(st.v.data(), n);
  r.done();
}

inline std::string encode_schedule_section(const WeightSchedule& s) {
  detail::ByteWriter w;
  w.pod(std::uint8_t(s.kind));
  w.pod(s.fixed_alpha);
  w.pod(s.t_scale);
  w.pod(s.floor);
  w.pod(s.offset);
  w.pod(s.linear_end);
  return std::move(w.buf);
}

inline WeightSchedule decode_schedule_section(const std::string& payload) {
  detail::ByteReader r{payload};
  WeightSchedule s;
  const std::uint8_t kind = r.pod<std::uint8_t>();
  if (kind > 2) throw IoError("checkpoint: bad schedule kind");
  s.kind = ScheduleKind(kind);
  s.fixed_alpha = r.pod<double>();
  s.t_scale = r.pod<double>();
  s.floor = r.pod<double>();
  s.offset = r.pod<double>();
  s.linear_end = r.pod<double>();
  r.done();
  return s;
}

inline std::string encode_itfs_section(const ItfsPolicy& p) {
  detail::ByteWriter w;
  w.pod(std::uint8_t(p.enabled ? 1 : 0));
  w.pod(p.teacher_ratio);
  w.pod(std::uint8_t(p.schedule));
  w.pod(std::uint64_t(p.seed));
  return std::move(w.buf);
}

inline ItfsPolicy decode_itfs_section(const std::string& payload) {
  detail::ByteReader r{payload};
  ItfsPolicy p;
  p.enabled = r.pod<std::uint8_t>() != 0;
  p.teacher_ratio = r.pod<double>();
  const std::uint8_t kind = r.pod<std::uint8_t>();
  if (kind > 1) throw IoError("checkpoint: bad itfs schedule kind");
  p.schedule = ItfsScheduleKind(kind);
  p.seed = r.pod<std::uint64_t>();
  r.done();
  return p;
}

inline std::string encode_counters_section(std::int64_t epoch, std::int64_t global_step) {
  detail::ByteWriter w;
  w.pod(epoch);
  w.pod(global_step);
  return std::move(w.buf);
}

inline void decode_counters_section(const std::string& payload, std::int64_t& epoch,
                                    std::int64_t& global_step) {
  detail::ByteReader r{payload};
  epoch = r.pod<std::int64_t>();
  global_step = r.pod<std::int64_t>();
  r.done();
}

inline std::string encode_rng_section(const Rng& rng) {
  std::ostringstream os;
  rng.save(os);
  return os.str();
}

inline Rng decode_rng_section(const std::string& payload) {
  std::istringstream is(payload);
  Rng rng(0);
  rng.load(is);
  if (!is || std::size_t(is.tellg()) != payload.size())
    throw IoError("checkpoint: bad rng section");
  return rng;
}

// The on-disk container: magic, format version, then the named sections in a
// fixed order, each as name length, name bytes, payload length, payload.
inline const std::vector<std::string>& checkpoint_section_names() {
  static const std::vector<std::string> names = {
      "recon", "seg", "optimizer", "schedule", "itfs", "counters", "rng"};
  return names;
}

inline void write_checkpoint_file(const std::string& path,
                                  const std::vector<std::string>& payloads) {
  const auto& names = checkpoint_section_names();
  require(payloads.size() == names.size(), "write_checkpoint_file: need one payload per section");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t version = kCheckpointVersion;
  os.write(reinterpret_cast<const char*>(&version), sizeof(version));
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::uint32_t name_len = std::uint32_t(names[i].size());
    os.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
    os.write(names[i].data(), std::streamsize(names[i].size()));
    const std::uint64_t payload_len = payloads[i].size();
    os.write(reinterpret_cast<const char*>(&payload_len), sizeof(payload_len));
    os.write(payloads[i].data(), std::streamsize(payloads[i].size()));
  }
  if (!os) throw IoError("short write on checkpoint: " + path);
}

inline std::vector<std::string> read_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw IoError("not a checkpoint file: " + path);
  std::uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!is || version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version in " + path);
  const auto& names = checkpoint_section_names();
  std::vector<std::string> payloads;
  for (const auto& expected : names) {
    std::uint32_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (!is || name_len > 64) throw IoError("corrupt checkpoint section header: " + path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    std::uint64_t payload_len = 0;
    is.read(reinterpret_cast<char*>(&payload_len), sizeof(payload_len));
    if (!is || name != expected)
      throw IoError("checkpoint section order mismatch: expected " + expected + " in " + path);
    std::string payload(payload_len, '\0');
    is.read(payload.data(), std::streamsize(payload_len));
    if (!is) throw IoError("checkpoint section truncated: " + expected + " in " + path);
    payloads.push_back(std::move(payload));
  }
  is.peek();
  if (!is.eof()) throw IoError("trailing bytes after checkpoint sections: " + path);
  return payloads;
}

}  // namespace mtmr

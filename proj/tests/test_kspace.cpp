#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <mtmr/fft.hpp>
#include <mtmr/kspace.hpp>
#include <mtmr/mask.hpp>
#include <mtmr/rng.hpp>

#include "support/oracles.hpp"

using namespace mtmr;

namespace {

template <typename S>
ComplexImage<S> random_image(Index h, Index w, Rng& rng) {
  ComplexImage<S> img;
  img.data.resize(h, w);
  img.domain = Domain::image;
  for (Index j = 0; j < w; ++j)
    for (Index i = 0; i < h; ++i)
      img.data(i, j) = std::complex<S>(S(rng.normal()), S(rng.normal()));
  return img;
}

template <typename S>
double rel_err(const CplxImage<S>& a, const CplxImage<S>& b) {
  const double denom = std::sqrt(double(b.abs2().sum()));
  return std::sqrt(double((a - b).abs2().sum())) / std::max(denom, 1e-300);
}

}  // namespace

TEST_CASE("forward_fft: zero image maps to zero k-space") {
  ComplexImage<float> img{CplxImage<float>::Zero(16, 16), Domain::image};
  auto k = forward_fft(img);
  CHECK(k.domain == Domain::kspace);
  CHECK(k.data.abs().maxCoeff() == 0.0f);
}

TEST_CASE("forward_fft: centered unit impulse is flat with magnitude 1/sqrt(HW)") {
  const Index h = 16, w = 8;
  ComplexImage<double> img{CplxImage<double>::Zero(h, w), Domain::image};
  img.data(h / 2, w / 2) = 1.0;
  auto k = forward_fft(img);
  const double expect = 1.0 / std::sqrt(double(h * w));
  CHECK(((k.data.abs() - expect).abs().maxCoeff()) < 1e-12);
  CHECK(k.data.imag().abs().maxCoeff() < 1e-12);
}

TEST_CASE("forward_fft matches the naive centered DFT oracle at 8x8 (double)") {
  Rng rng(11);
  auto img = random_image<double>(8, 8, rng);
  auto k = forward_fft(img);
  auto ref = oracle::dft2_centered(img.data, false);
  CHECK(rel_err(k.data, ref) < 1e-9);

  ComplexImage<double> back = inverse_fft(k);
  auto ref_back = oracle::dft2_centered(ref, true);
  CHECK(rel_err(back.data, ref_back) < 1e-9);
}

TEST_CASE("fft convention matches the oracle on odd shapes too") {
  Rng rng(5);
  auto img = random_image<double>(5, 7, rng);
  auto k = forward_fft(img);
  auto ref = oracle::dft2_centered(img.data, false);
  CHECK(rel_err(k.data, ref) < 1e-9);
}

TEST_CASE("Parseval and roundtrip hold for random float images") {
  Rng rng(42);
  for (Index n : {8, 16, 31, 64, 256}) {
    auto img = random_image<float>(n, n, rng);
    auto k = forward_fft(img);
    const double nx = std::sqrt(double(img.data.abs2().sum()));
    const double nk = std::sqrt(double(k.data.abs2().sum()));
    CHECK(std::abs(nx - nk) / nx < 1e-4);
    auto back = inverse_fft(k);
    CHECK(rel_err(back.data, img.data) < 1e-5);
  }
}

TEST_CASE("conjugate-symmetric k-space inverts to a real image") {
  Rng rng(3);
  CplxImage<double> real_img(16, 16);
  for (Index j = 0; j < 16; ++j)
    for (Index i = 0; i < 16; ++i) real_img(i, j) = rng.uniform();
  // Build symmetric k-space through the oracle, then invert with the library.
  auto k = oracle::dft2_centered(real_img, false);
  ComplexImage<double> lib_k{k, Domain::kspace};
  auto back = inverse_fft(lib_k);
  CHECK(back.data.imag().abs().maxCoeff() < 1e-5);
}

TEST_CASE("wrong domain tags are rejected") {
  ComplexImage<float> img{CplxImage<float>::Zero(8, 8), Domain::kspace};
  CHECK_THROWS_AS((void)forward_fft(img), std::invalid_argument);
  img.domain = Domain::image;
  CHECK_THROWS_AS((void)inverse_fft(img), std::invalid_argument);
}

TEST_CASE("make_mask: full-scale geometry W=256 cf=0.08 acc=4") {
  CHECK(center_line_count(256, 0.08) == 20);
  CHECK(tail_keep_probability(256, 0.08, 4.0) == doctest::Approx(44.0 / 236.0).epsilon(1e-12));
  auto mask = make_mask(256, 0.08, 4.0, 0);
  const auto [first, count] = center_block(256, 0.08);
  CHECK(count == 20);
  for (Index i = first; i < first + count; ++i) CHECK(mask.lines[size_t(i)]);
}

TEST_CASE("make_mask: acceleration 1 keeps every line") {
  auto mask = make_mask(64, 0.1, 1.0, 9);
  CHECK(mask.kept_count() == 64);
}

TEST_CASE("make_mask: deterministic in its seed, sensitive to it") {
  auto a = make_mask(128, 0.08, 4.0, 7);
  auto b = make_mask(128, 0.08, 4.0, 7);
  auto c = make_mask(128, 0.08, 4.0, 8);
  CHECK(a.lines == b.lines);
  CHECK(a.lines != c.lines);
}

TEST_CASE("make_mask: infeasible center block is rejected") {
  // floor(0.5*64)=32 center lines but budget 64/4=16.
  CHECK_THROWS_AS((void)make_mask(64, 0.5, 4.0, 0), std::invalid_argument);
}

TEST_CASE("make_mask: Monte-Carlo mean kept count hits the budget") {
  double total = 0.0;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) total += double(make_mask(256, 0.08, 4.0, t).kept_count());
  const double mean = total / trials;
  CHECK(std::abs(mean - 64.0) < 1.5);
}

TEST_CASE("mask text format roundtrips") {
  auto mask = make_mask(64, 0.08, 4.0, 123);
  auto parsed = mask_from_text(mask_to_text(mask));
  CHECK(parsed.lines == mask.lines);
  CHECK(parsed.seed == mask.seed);
  CHECK(parsed.center_fraction == mask.center_fraction);
  CHECK(parsed.acceleration == mask.acceleration);
}

TEST_CASE("apply_mask: full mask copies, dropped lines are exactly zero") {
  Rng rng(1);
  auto img = random_image<float>(16, 16, rng);
  auto k = forward_fft(img);

  auto full = make_mask(16, 0.2, 1.0, 0);
  auto m_full = apply_mask(k, full);
  CHECK((m_full.kspace.data == k.data).all());

  auto part = make_mask(16, 0.2, 2.0, 4);
  auto m = apply_mask(k, part);
  for (Index j = 0; j < 16; ++j) {
    if (m.mask.lines[size_t(j)]) {
      CHECK((m.kspace.data.col(j) == k.data.col(j)).all());
    } else {
      CHECK(m.kspace.data.col(j).abs().sum() == 0.0f);
    }
  }
}

TEST_CASE("zero_fill: full mask recovers the image") {
  Rng rng(2);
  auto img = random_image<float>(32, 32, rng);
  auto m = apply_mask(forward_fft(img), make_mask(32, 0.1, 1.0, 0));
  auto zf = zero_fill(m);
  CHECK(rel_err(zf.data, img.data) < 1e-5);
}

TEST_CASE("data_consistency: hard replacement restores measured lines") {
  Rng rng(8);
  auto gt = random_image<float>(32, 32, rng);
  auto m = apply_mask(forward_fft(gt), make_mask(32, 0.1, 4.0, 3));
  auto pred = random_image<float>(32, 32, rng);

  auto out = data_consistency(pred, m);
  auto k_out = forward_fft(out);
  double max_err = 0.0;
  for (Index j = 0; j < 32; ++j)
    if (m.mask.lines[size_t(j)])
      max_err = std::max(max_err,
                         double((k_out.data.col(j) - m.kspace.data.col(j)).abs().maxCoeff()));
  CHECK(max_err < 1e-5);
}

TEST_CASE("data_consistency: consistent prediction is a fixed point") {
  Rng rng(4);
  auto img = random_image<float>(16, 16, rng);
  auto m = apply_mask(forward_fft(img), make_mask(16, 0.2, 1.0, 0));
  auto zf = zero_fill(m);
  auto out = data_consistency(zf, m);
  CHECK(rel_err(out.data, zf.data) < 1e-5);
}

TEST_CASE("data_consistency: lambda=1 lands on the midpoint of K and k_meas") {
  Rng rng(6);
  auto gt = random_image<double>(4, 4, rng);
  auto m = apply_mask(forward_fft(gt), make_mask(4, 0.26, 2.0, 1));
  auto pred = random_image<double>(4, 4, rng);

  auto out = data_consistency(pred, m, 1.0);
  auto k_out = forward_fft(out);
  auto k_pred = forward_fft(pred);
  for (Index j = 0; j < 4; ++j) {
    for (Index i = 0; i < 4; ++i) {
      std::complex<double> expect = m.mask.lines[size_t(j)]
          ? (k_pred.data(i, j) + m.kspace.data(i, j)) * 0.5
          : k_pred.data(i, j);
      CHECK(std::abs(k_out.data(i, j) - expect) < 1e-10);
    }
  }
}

TEST_CASE("data_consistency: idempotent for hard replacement") {
  Rng rng(9);
  auto gt = random_image<float>(24, 24, rng);
  auto m = apply_mask(forward_fft(gt), make_mask(24, 0.1, 3.0, 2));
  auto pred = random_image<float>(24, 24, rng);
  auto once = data_consistency(pred, m);
  auto twice = data_consistency(once, m);
  CHECK(rel_err(twice.data, once.data) < 1e-5);
}

TEST_CASE("data_consistency: negative lambda is rejected") {
  Rng rng(10);
  auto img = random_image<float>(8, 8, rng);
  auto m = apply_mask(forward_fft(img), make_mask(8, 0.2, 2.0, 0));
  CHECK_THROWS_AS((void)data_consistency(img, m, -0.5), std::invalid_argument);
}

TEST_CASE("data_consistency: JVP matches central finite differences (double, 8x8)") {
  Rng rng(12);
  auto gt = random_image<double>(8, 8, rng);
  auto m = apply_mask(forward_fft(gt), make_mask(8, 0.2, 2.0, 5));
  auto pred = random_image<double>(8, 8, rng);
  auto dir = random_image<double>(8, 8, rng);

  for (std::optional<double> lambda : {std::optional<double>{}, std::optional<double>{0.7}}) {
    auto jvp = data_consistency_jvp(dir, m, lambda);
    const double h = 1e-6;
    ComplexImage<double> plus = pred, minus = pred;
    plus.data += h * dir.data;
    minus.data -= h * dir.data;
    auto fd = (data_consistency(plus, m, lambda).data - data_consistency(minus, m, lambda).data) /
              (2.0 * h);
    const double denom = std::sqrt(double(jvp.data.abs2().sum()));
    CHECK(std::sqrt(double((fd - jvp.data).abs2().sum())) / denom < 1e-3);
  }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "mtmr/adam.hpp"
#include "mtmr/itfs.hpp"
#include "mtmr/losses.hpp"
#include "mtmr/rng.hpp"
#include "mtmr/schedule.hpp"
#include "support/oracles.hpp"

using namespace mtmr;

TEST_CASE("exponential schedule hits its anchor values exactly") {
  WeightSchedule s;  // exponential, t_scale 1, floor 0.05, offset 0.2
  auto [a0, b0] = alpha_beta(s, 0.0);
  CHECK(a0 == 0.8);
  CHECK(b0 == 0.2);
  auto [a1, b1] = alpha_beta(s, 1.0);
  // exp(-1) - 0.2 to 60 digits is 0.16787944117144232159552377...; the
  // nearest double is the literal below.
  CHECK(std::abs(a1 - 0.16787944117144232) < 1e-12);
  CHECK(std::abs(b1 - 0.8321205588285577) < 1e-12);
  auto [a3, b3] = alpha_beta(s, 3.0);
  CHECK(a3 == 0.05);
  CHECK(b3 == 1.0 - 0.05);
}

TEST_CASE("schedule weights always sum to one and never increase") {
  for (ScheduleKind kind :
       {ScheduleKind::fixed, ScheduleKind::linear, ScheduleKind::exponential}) {
    WeightSchedule s;
    s.kind = kind;
    double prev = 2.0;
    for (int e = 0; e <= 10000; ++e) {
      auto [a, b] = alpha_beta(s, double(e));
      CHECK(std::abs(a + b - 1.0) < 1e-12);
      CHECK(a <= prev + 1e-15);
      CHECK(a >= s.floor - 1e-15);
      prev = a;
    }
  }
}

TEST_CASE("fixed schedule returns the configured weight pair") {
  WeightSchedule s;
  s.kind = ScheduleKind::fixed;
  s.fixed_alpha = 0.5;
  auto [a, b] = alpha_beta(s, 7.0);
  CHECK(a == 0.5);
  CHECK(b == 0.5);
  s.fixed_alpha = 0.2;
  auto [a2, b2] = alpha_beta(s, 0.0);
  CHECK(a2 == 0.2);
  CHECK(b2 == 0.8);
}

TEST_CASE("linear schedule decays to the floor at the configured end epoch") {
  WeightSchedule s;
  s.kind = ScheduleKind::linear;
  auto [a0, b0] = alpha_beta(s, 0.0);
  CHECK(a0 == 0.8);
  CHECK(b0 == 0.2);
  // slope is (1 - 0.2 - 0.05)/50 = 0.015 per epoch
  auto [a25, b25] = alpha_beta(s, 25.0);
  CHECK(a25 == doctest::Approx(0.425).epsilon(1e-12));
  CHECK(b25 == doctest::Approx(0.575).epsilon(1e-12));
  auto [a60, b60] = alpha_beta(s, 60.0);
  CHECK(a60 == 0.05);
  CHECK(b60 == 1.0 - 0.05);
}

TEST_CASE("t_scale rescales the epoch axis") {
  WeightSchedule half;
  half.t_scale = 0.5;
  WeightSchedule unit;
  CHECK(alpha_beta(half, 2.0).first == alpha_beta(unit, 1.0).first);
  CHECK(alpha_beta(half, 6.0).first == alpha_beta(unit, 3.0).first);
}

TEST_CASE("schedule rejects bad inputs") {
  WeightSchedule s;
  CHECK_THROWS_AS(alpha_beta(s, -1.0), std::invalid_argument);
  s.floor = 0.0;
  CHECK_THROWS_AS(alpha_beta(s, 0.0), std::invalid_argument);
  s = {};
  s.t_scale = 0.0;
  CHECK_THROWS_AS(alpha_beta(s, 0.0), std::invalid_argument);
  s = {};
  s.fixed_alpha = 1.5;
  CHECK_THROWS_AS(alpha_beta(s, 0.0), std::invalid_argument);
  s = {};
  s.linear_end = 0.0;
  CHECK_THROWS_AS(alpha_beta(s, 0.0), std::invalid_argument);
  s = {};
  s.offset = 0.97;  // collides with floor
  CHECK_THROWS_AS(alpha_beta(s, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(schedule_kind_from_string("cosine"), std::invalid_argument);
  CHECK(schedule_kind_from_string("exponential") == ScheduleKind::exponential);
  CHECK(to_string(ScheduleKind::linear) == "linear");
}

TEST_CASE("alternate-steps teacher forcing at ratio 0.5 is exactly even steps") {
  ItfsPolicy p;
  Rng rng(1);
  for (std::uint64_t k = 0; k < 1000; ++k) {
    CHECK(itfs_is_teacher(p, k, rng) == (k % 2 == 0));
  }
}

TEST_CASE("alternate-steps window counts track the ratio within one step") {
  for (double r : {0.25, 1.0 / 3.0, 0.5, 0.7, 0.9}) {
    for (std::uint64_t a : {0ull, 3ull, 17ull, 100ull}) {
      for (std::uint64_t n : {1ull, 2ull, 8ull, 40ull, 137ull}) {
        std::uint64_t count = 0;
        for (std::uint64_t k = a; k < a + n; ++k) {
          if (itfs_alternate_is_teacher(r, k)) ++count;
        }
        CHECK(double(count) == std::ceil(double(a + n) * r) - std::ceil(double(a) * r));
        CHECK(std::abs(double(count) - double(n) * r) < 1.0);
      }
    }
  }
}

TEST_CASE("teacher forcing respects enable flag and ratio extremes") {
  Rng rng(1);
  ItfsPolicy p;
  p.enabled = false;
  for (std::uint64_t k = 0; k < 20; ++k) CHECK_FALSE(itfs_is_teacher(p, k, rng));
  p.enabled = true;
  p.teacher_ratio = 0.0;
  for (std::uint64_t k = 0; k < 20; ++k) CHECK_FALSE(itfs_is_teacher(p, k, rng));
  p.teacher_ratio = 1.0;
  for (std::uint64_t k = 0; k < 20; ++k) CHECK(itfs_is_teacher(p, k, rng));
  p.teacher_ratio = 1.5;
  CHECK_THROWS_AS(itfs_is_teacher(p, 0, rng), std::invalid_argument);
}

TEST_CASE("bernoulli teacher forcing is seeded and matches its ratio") {
  ItfsPolicy p;
  p.schedule = ItfsScheduleKind::bernoulli;
  p.teacher_ratio = 0.3;
  Rng r1(p.seed), r2(p.seed);
  int teachers = 0;
  std::vector<bool> seq1, seq2;
  for (std::uint64_t k = 0; k < 10000; ++k) {
    const bool t = itfs_is_teacher(p, k, r1);
    seq1.push_back(t);
    teachers += t ? 1 : 0;
  }
  for (std::uint64_t k = 0; k < 10000; ++k) seq2.push_back(itfs_is_teacher(p, k, r2));
  CHECK(seq1 == seq2);
  // 3 sigma on a binomial(10000, 0.3) is about 137
  CHECK(std::abs(teachers - 3000) < 200);

  // stream position survives a save/load round trip
  std::stringstream ss;
  r1.save(ss);
  Rng r3(0);
  r3.load(ss);
  for (std::uint64_t k = 0; k < 100; ++k) {
    CHECK(itfs_is_teacher(p, k, r1) == itfs_is_teacher(p, k, r3));
  }
  CHECK_THROWS_AS(itfs_schedule_from_string("cyclic"), std::invalid_argument);
  CHECK(itfs_schedule_from_string("bernoulli") == ItfsScheduleKind::bernoulli);
}

TEST_CASE("reconstruction loss matches mean squared error by hand") {
  Image<double> pred(2, 2), ref(2, 2);
  pred << 1.0, 2.0, 3.0, 4.0;
  ref << 1.0, 2.5, 3.0, 2.0;
  // squared diffs: 0, 0.25, 0, 4 -> mean 1.0625
  CHECK(recon_loss(pred, ref) == doctest::Approx(1.0625).epsilon(1e-15));
  CHECK(recon_loss(ref, ref) == 0.0);
  CHECK_THROWS_AS(recon_loss(pred, Image<double>(3, 2)), std::invalid_argument);
}

TEST_CASE("reconstruction loss gradient agrees with central differences") {
  Rng rng(11);
  Image<double> pred(5, 4), ref(5, 4);
  for (Index x = 0; x < 4; ++x)
    for (Index y = 0; y < 5; ++y) {
      pred(y, x) = rng.normal();
      ref(y, x) = rng.normal();
    }
  Image<double> grad = Image<double>::Zero(5, 4);
  recon_loss_backward(pred, ref, 0.7, grad);
  for (Index x = 0; x < 4; ++x)
    for (Index y = 0; y < 5; ++y) {
      const double fd = oracle::central_diff(
          [&] { return 0.7 * recon_loss(pred, ref); }, pred(y, x));
      CHECK(oracle::rel_err(grad(y, x), fd) < 1e-7);
    }
}

TEST_CASE("magnitude gradient follows z over |z| and is zero at the origin") {
  Rng rng(5);
  CplxImage<double> z(3, 3);
  Image<double> dmag(3, 3);
  for (Index x = 0; x < 3; ++x)
    for (Index y = 0; y < 3; ++y) {
      z(y, x) = {rng.normal(), rng.normal()};
      dmag(y, x) = rng.normal();
    }
  z(1, 1) = {0.0, 0.0};
  CplxImage<double> dz;
  magnitude_backward(z, dmag, dz);
  CHECK(dz(1, 1) == std::complex<double>(0.0, 0.0));
  const auto loss = [&] {
    double s = 0.0;
    for (Index x = 0; x < 3; ++x)
      for (Index y = 0; y < 3; ++y) s += dmag(y, x) * std::abs(z(y, x));
    return s;
  };
  for (Index x = 0; x < 3; ++x)
    for (Index y = 0; y < 3; ++y) {
      if (y == 1 && x == 1) continue;
      double re = z(y, x).real(), im = z(y, x).imag();
      const double fd_re = oracle::central_diff(
          [&] { z(y, x) = {re, im}; double v = loss(); return v; }, re);
      z(y, x) = {re, im};
      const double fd_im = oracle::central_diff(
          [&] { z(y, x) = {re, im}; double v = loss(); return v; }, im);
      z(y, x) = {re, im};
      CHECK(oracle::rel_err(dz(y, x).real(), fd_re) < 1e-6);
      CHECK(oracle::rel_err(dz(y, x).imag(), fd_im) < 1e-6);
    }
}

namespace {

FeatureMap<double> one_hot_probs(const LabelMap& labels, Index n_classes) {
  FeatureMap<double> p;
  p.resize(int(n_classes), labels.rows(), labels.cols());
  for (Index x = 0; x < labels.cols(); ++x)
    for (Index y = 0; y < labels.rows(); ++y)
      p.m(x * labels.rows() + y, labels(y, x)) = 1.0;
  return p;
}

}  // namespace

TEST_CASE("dice loss anchor values") {
  LabelMap labels(2, 2);
  labels << 1, 1, 1, 1;
  auto perfect = one_hot_probs(labels, 2);
  // I = a = b = 4 -> 1 - 8/8.1 = 1/81
  CHECK(dice_loss(perfect, labels) == doctest::Approx(1.0 / 81.0).epsilon(1e-12));

  LabelMap half(2, 2);
  half << 1, 1, 0, 0;
  auto wrong = one_hot_probs(half, 2);
  LabelMap flipped(2, 2);
  flipped << 0, 0, 1, 1;
  // prediction mass 2 on class 1, labels have 2 class-1 pixels, zero overlap
  CHECK(dice_loss(wrong, flipped) == doctest::Approx(1.0).epsilon(1e-12));

  // class 2 absent from labels and prediction: its score is 1 by convention
  LabelMap two_cls(2, 2);
  two_cls << 0, 0, 1, 1;
  auto p3 = one_hot_probs(two_cls, 3);
  const double d1 = 1.0 - 2.0 * 2.0 / (2.0 + 2.0 + 0.1);
  CHECK(dice_loss(p3, two_cls) == doctest::Approx((d1 + 1.0) / 2.0).epsilon(1e-12));

  // predicted mass with empty labels also scores 1
  LabelMap empty(2, 2);
  empty << 0, 0, 0, 0;
  auto pmass = one_hot_probs(two_cls, 2);
  CHECK(dice_loss(pmass, empty) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(dice_loss(one_hot_probs(empty, 1), empty), std::invalid_argument);
}

TEST_CASE("dice loss gradient agrees with central differences") {
  Rng rng(23);
  const Index h = 6, w = 5, c = 3;
  LabelMap labels(h, w);
  FeatureMap<double> probs;
  probs.resize(int(c), h, w);
  for (Index x = 0; x < w; ++x)
    for (Index y = 0; y < h; ++y) {
      labels(y, x) = std::uint8_t(rng.below(c));
      for (Index ch = 0; ch < c; ++ch)
        probs.m(x * h + y, ch) = rng.uniform(0.05, 1.0);
    }
  FeatureMap<double> grad;
  grad.resize(int(c), h, w);
  dice_loss_backward(probs, labels, 1.3, grad);
  for (Index ch = 0; ch < c; ++ch)
    for (Index i = 0; i < h * w; ++i) {
      const double fd = oracle::central_diff(
          [&] { return 1.3 * dice_loss(probs, labels); }, probs.m(i, ch));
      CHECK(oracle::rel_err(grad.m(i, ch), fd) < 1e-6);
    }
}

TEST_CASE("cross entropy matches hand values and its gradient checks out") {
  LabelMap labels(2, 2);
  labels << 0, 1, 1, 0;
  FeatureMap<double> uniform;
  uniform.resize(4, 2, 2);
  uniform.m.setConstant(0.25);
  CHECK(cross_entropy_loss(uniform, labels) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  auto perfect = one_hot_probs(labels, 2);
  CHECK(cross_entropy_loss(perfect, labels) == doctest::Approx(0.0).epsilon(1e-12));

  LabelMap bad(2, 2);
  bad << 0, 0, 0, 9;
  CHECK_THROWS_AS(cross_entropy_loss(uniform, bad), std::invalid_argument);

  Rng rng(31);
  FeatureMap<double> probs;
  probs.resize(4, 2, 2);
  for (Index i = 0; i < 4; ++i)
    for (Index ch = 0; ch < 4; ++ch) probs.m(i, ch) = rng.uniform(0.1, 1.0);
  FeatureMap<double> grad;
  grad.resize(4, 2, 2);
  cross_entropy_backward(probs, labels, 0.9, grad);
  for (Index ch = 0; ch < 4; ++ch)
    for (Index i = 0; i < 4; ++i) {
      const double fd = oracle::central_diff(
          [&] { return 0.9 * cross_entropy_loss(probs, labels); }, probs.m(i, ch));
      CHECK(std::abs(grad.m(i, ch) - fd) < 1e-6);
    }
}

TEST_CASE("seg loss dispatch selects the configured flavour") {
  LabelMap labels(2, 2);
  labels << 1, 1, 1, 1;
  auto p = one_hot_probs(labels, 2);
  CHECK(seg_loss(SegLossKind::dice, p, labels) == dice_loss(p, labels));
  CHECK(seg_loss(SegLossKind::cross_entropy, p, labels) == cross_entropy_loss(p, labels));
  CHECK(seg_loss_kind_from_string("dice") == SegLossKind::dice);
  CHECK(seg_loss_kind_from_string("cross-entropy") == SegLossKind::cross_entropy);
  CHECK_THROWS_AS(seg_loss_kind_from_string("hinge"), std::invalid_argument);
  CHECK(to_string(SegLossKind::dice) == "dice");

  FeatureMap<double> g1, g2;
  g1.resize(2, 2, 2);
  g2.resize(2, 2, 2);
  seg_loss_backward(SegLossKind::dice, p, labels, 1.0, g1);
  dice_loss_backward(p, labels, 1.0, g2);
  CHECK(g1.m == g2.m);
}

namespace {

struct TinyNets {
  ReconParams<double> recon;
  SegParams<double> seg;
};

TinyNets make_tiny_nets(std::uint64_t seed) {
  ReconConfig rc;
  rc.n_cascades = 1;
  rc.convs_per_block = 2;
  rc.channels = 3;
  rc.kernel = 1;
  SegConfig sc;
  sc.depth = 1;
  sc.base_channels = 2;
  sc.n_classes = 2;
  sc.kernel = 1;
  TinyNets t;
  t.recon = recon_init<double>(rc, seed);
  t.seg = seg_init<double>(sc, seed + 1);
  return t;
}

std::vector<double> flatten(TinyNets& t) {
  std::vector<double> out;
  t.recon.for_each_layer([&](ConvLayer<double>& l) {
    out.insert(out.end(), l.w.begin(), l.w.end());
    out.insert(out.end(), l.b.begin(), l.b.end());
  });
  t.seg.for_each_layer([&](ConvLayer<double>& l) {
    out.insert(out.end(), l.w.begin(), l.w.end());
    out.insert(out.end(), l.b.begin(), l.b.end());
  });
  return out;
}

}  // namespace

TEST_CASE("adam matches a flat reference implementation over several steps") {
  auto nets = make_tiny_nets(3);
  auto grads = make_tiny_nets(77);  // arbitrary nonzero gradients

  auto ref_p = flatten(nets);
  const std::size_t n = ref_p.size();
  CHECK(n == nets.recon.parameter_count() + nets.seg.parameter_count());
  std::vector<double> ref_m(n, 0.0), ref_v(n, 0.0);

  AdamConfig cfg;
  cfg.lr = 1e-2;
  AdamState<double> st;
  for (int step = 1; step <= 5; ++step) {
    adam_step(cfg, st, nets.recon, grads.recon, nets.seg, grads.seg, 0);
    auto ref_g = flatten(grads);
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(step));
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = ref_g[i];
      const double mi = cfg.beta1 * ref_m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * ref_v[i] + (1.0 - cfg.beta2) * gi * gi;
      ref_m[i] = mi;
      ref_v[i] = vi;
      ref_p[i] = ref_p[i] - cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
    }
    CHECK(flatten(nets) == ref_p);
  }
  CHECK(st.t == 5);
}

TEST_CASE("adam first step moves each parameter by about the learning rate") {
  auto nets = make_tiny_nets(9);
  auto before = flatten(nets);
  auto grads = nets;
  grads.recon.for_each_layer([](ConvLayer<double>& l) {
    std::fill(l.w.begin(), l.w.end(), 1.0);
    std::fill(l.b.begin(), l.b.end(), 1.0);
  });
  grads.seg.for_each_layer([](ConvLayer<double>& l) {
    std::fill(l.w.begin(), l.w.end(), 1.0);
    std::fill(l.b.begin(), l.b.end(), 1.0);
  });
  AdamConfig cfg;
  AdamState<double> st;
  adam_step(cfg, st, nets.recon, grads.recon, nets.seg, grads.seg, 0);
  auto after = flatten(nets);
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(before[i] - after[i] == doctest::Approx(cfg.lr).epsilon(1e-6));
  }
}

TEST_CASE("learning rate decay steps down every ten epochs when enabled") {
  AdamConfig cfg;
  cfg.lr = 1e-3;
  CHECK(effective_lr(cfg, 0) == 1e-3);
  CHECK(effective_lr(cfg, 35) == 1e-3);
  cfg.lr_decay = true;
  CHECK(effective_lr(cfg, 0) == 1e-3);
  CHECK(effective_lr(cfg, 9) == 1e-3);
  CHECK(effective_lr(cfg, 10) == doctest::Approx(2e-4).epsilon(1e-15));
  CHECK(effective_lr(cfg, 19) == doctest::Approx(2e-4).epsilon(1e-15));
  CHECK(effective_lr(cfg, 20) == doctest::Approx(4e-5).epsilon(1e-12));
}

TEST_CASE("adam validates its configuration and buffer sizes") {
  auto nets = make_tiny_nets(4);
  auto grads = nets;
  AdamConfig bad;
  bad.lr = 0.0;
  AdamState<double> st;
  CHECK_THROWS_AS(adam_step(bad, st, nets.recon, grads.recon, nets.seg, grads.seg, 0),
                  std::invalid_argument);
  AdamConfig cfg;
  AdamState<double> wrong;
  wrong.m.assign(3, 0.0);
  wrong.v.assign(3, 0.0);
  CHECK_THROWS_AS(adam_step(cfg, wrong, nets.recon, grads.recon, nets.seg, grads.seg, 0),
                  std::invalid_argument);
}

TEST_CASE("adam drives a quadratic objective downhill") {
  auto nets = make_tiny_nets(8);
  AdamConfig cfg;
  cfg.lr = 5e-2;
  AdamState<double> st;
  const auto objective = [&]() {
    double s = 0.0;
    for (double v : flatten(nets)) s += v * v;
    return s;
  };
  const double start = objective();
  for (int step = 0; step < 60; ++step) {
    auto grads = nets;  // gradient of sum p^2 is 2p
    grads.recon.for_each_layer([](ConvLayer<double>& l) {
      for (auto& v : l.w) v *= 2.0;
      for (auto& v : l.b) v *= 2.0;
    });
    grads.seg.for_each_layer([](ConvLayer<double>& l) {
      for (auto& v : l.w) v *= 2.0;
      for (auto& v : l.b) v *= 2.0;
    });
    adam_step(cfg, st, nets.recon, grads.recon, nets.seg, grads.seg, 0);
  }
  CHECK(objective() < 0.2 * start);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mtmr/nn.hpp"
#include "support/oracles.hpp"

using namespace mtmr;

namespace {

void fill_random(FeatureMap<double>& f, Rng& rng, double scale = 1.0) {
  for (Index i = 0; i < f.m.rows(); ++i)
    for (Index j = 0; j < f.m.cols(); ++j) f.m(i, j) = rng.uniform(-scale, scale);
}

// brute-force conv at one output position
double conv_ref_at(const ConvLayer<double>& layer, const FeatureMap<double>& in, int o, Index y,
                   Index x) {
  const int p = layer.k / 2;
  double acc = layer.b[std::size_t(o)];
  for (int i = 0; i < layer.in_ch; ++i)
    for (int ky = 0; ky < layer.k; ++ky)
      for (int kx = 0; kx < layer.k; ++kx) {
        const Index yy = y + ky - p, xx = x + kx - p;
        if (yy < 0 || yy >= in.rows() || xx < 0 || xx >= in.cols()) continue;
        acc += layer.wat(o, i, ky, kx) * in.chan(i)(yy, xx);
      }
  return acc;
}

}  // namespace

TEST_CASE("conv matches a brute-force reference") {
  Rng rng(5);
  for (const int k : {1, 3, 5}) {
    ConvLayer<double> layer;
    layer.resize(3, 4, k);
    conv_init(layer, rng);
    for (auto& v : layer.b) v = rng.uniform(-0.5, 0.5);
    FeatureMap<double> in(3, 9, 7), out;
    fill_random(in, rng);
    conv_forward(layer, in, out);
    REQUIRE(out.channels() == 4);
    REQUIRE(out.rows() == 9);
    REQUIRE(out.cols() == 7);
    for (int o = 0; o < 4; ++o)
      for (Index y = 0; y < 9; ++y)
        for (Index x = 0; x < 7; ++x)
          CHECK(out.chan(o)(y, x) == doctest::Approx(conv_ref_at(layer, in, o, y, x)).epsilon(1e-12));
  }
}

TEST_CASE("conv identity and shift kernels") {
  ConvLayer<double> layer;
  layer.resize(1, 1, 3);
  layer.wat(0, 0, 1, 1) = 1.0;  // center tap
  FeatureMap<double> in(1, 6, 6), out;
  Rng rng(2);
  fill_random(in, rng);
  conv_forward(layer, in, out);
  CHECK((out.chan(0) == in.chan(0)).all());

  layer.w.assign(layer.w.size(), 0.0);
  layer.wat(0, 0, 0, 1) = 1.0;  // reads the row above: out(y,x) = in(y-1,x)
  conv_forward(layer, in, out);
  for (Index y = 1; y < 6; ++y)
    for (Index x = 0; x < 6; ++x) CHECK(out.chan(0)(y, x) == in.chan(0)(y - 1, x));
  CHECK((out.chan(0).row(0) == 0.0).all());
}

TEST_CASE("im2col and col2im are adjoint") {
  Rng rng(9);
  FeatureMap<double> x(3, 8, 6);
  fill_random(x, rng);
  PlaneMat<double> cx;
  detail::im2col(x, 3, cx);

  PlaneMat<double> y(cx.rows(), cx.cols());
  for (Index i = 0; i < y.rows(); ++i)
    for (Index j = 0; j < y.cols(); ++j) y(i, j) = rng.uniform(-1.0, 1.0);
  FeatureMap<double> xt(3, 8, 6);
  xt.set_zero();
  detail::col2im_add(y, 3, xt);

  const double lhs = (cx.array() * y.array()).sum();
  const double rhs = (x.m.array() * xt.m.array()).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("conv gradients match finite differences") {
  Rng rng(11);
  for (const int k : {1, 3}) {
    ConvLayer<double> layer;
    layer.resize(2, 3, k);
    conv_init(layer, rng);
    FeatureMap<double> in(2, 6, 5), out, proj(3, 6, 5);
    fill_random(in, rng);
    fill_random(proj, rng);

    const auto loss = [&] {
      FeatureMap<double> o;
      conv_forward(layer, in, o);
      return (o.m.array() * proj.m.array()).sum();
    };

    conv_forward(layer, in, out);
    ConvLayer<double> grad;
    grad.resize(2, 3, k);
    FeatureMap<double> din;
    conv_backward(layer, in, proj, din, grad);

    for (std::size_t i = 0; i < layer.w.size(); ++i) {
      const double fd = oracle::central_diff(loss, layer.w[i]);
      CHECK(oracle::rel_err(grad.w[i], fd) < 1e-7);
    }
    for (std::size_t i = 0; i < layer.b.size(); ++i) {
      const double fd = oracle::central_diff(loss, layer.b[i]);
      CHECK(oracle::rel_err(grad.b[i], fd) < 1e-7);
    }
    for (Index i = 0; i < in.m.rows(); ++i)
      for (Index j = 0; j < in.m.cols(); ++j) {
        const double fd = oracle::central_diff(loss, in.m(i, j));
        CHECK(oracle::rel_err(din.m(i, j), fd) < 1e-7);
      }
  }
}

TEST_CASE("conv gradient accumulates across calls") {
  Rng rng(3);
  ConvLayer<double> layer;
  layer.resize(1, 1, 3);
  conv_init(layer, rng);
  FeatureMap<double> in(1, 4, 4), dout(1, 4, 4), din;
  fill_random(in, rng);
  fill_random(dout, rng);
  ConvLayer<double> g1, g2;
  g1.resize(1, 1, 3);
  g2.resize(1, 1, 3);
  conv_backward(layer, in, dout, din, g1);
  conv_backward(layer, in, dout, din, g2);
  conv_backward(layer, in, dout, din, g2);
  for (std::size_t i = 0; i < g1.w.size(); ++i)
    CHECK(g2.w[i] == doctest::Approx(2.0 * g1.w[i]).epsilon(1e-12));
}

TEST_CASE("relu forward and backward") {
  FeatureMap<double> a(1, 2, 2);
  a.chan(0) << -1.0, 2.0, 0.0, -3.0;
  FeatureMap<double> pre = a;
  relu_forward(a);
  CHECK(a.chan(0)(0, 0) == 0.0);
  CHECK(a.chan(0)(0, 1) == 2.0);
  CHECK(a.chan(0)(1, 0) == 0.0);

  FeatureMap<double> g(1, 2, 2);
  g.m.setOnes();
  relu_backward(pre, g);
  CHECK(g.chan(0)(0, 0) == 0.0);
  CHECK(g.chan(0)(0, 1) == 1.0);
  CHECK(g.chan(0)(1, 0) == 0.0);  // gradient at exactly zero is zero
  CHECK(g.chan(0)(1, 1) == 0.0);
}

TEST_CASE("maxpool matches brute force and scatters gradients") {
  Rng rng(7);
  FeatureMap<double> in(2, 6, 4), out, din;
  fill_random(in, rng);
  FeatureMap<std::uint8_t> arg;
  maxpool_forward(in, out, arg);
  REQUIRE(out.rows() == 3);
  REQUIRE(out.cols() == 2);
  for (int c = 0; c < 2; ++c)
    for (Index y = 0; y < 3; ++y)
      for (Index x = 0; x < 2; ++x) {
        const double ref = std::max({in.chan(c)(2 * y, 2 * x), in.chan(c)(2 * y, 2 * x + 1),
                                     in.chan(c)(2 * y + 1, 2 * x), in.chan(c)(2 * y + 1, 2 * x + 1)});
        CHECK(out.chan(c)(y, x) == ref);
      }

  FeatureMap<double> g(2, 3, 2);
  fill_random(g, rng);
  maxpool_backward(g, arg, din);
  for (int c = 0; c < 2; ++c) {
    CHECK(din.chan(c).sum() == doctest::Approx(g.chan(c).sum()).epsilon(1e-12));
    CHECK((din.chan(c) != 0.0).count() <= 6);
  }
}

TEST_CASE("maxpool tie goes to the first entry") {
  FeatureMap<double> in(1, 2, 2), out;
  in.chan(0) << 5.0, 5.0, 5.0, 5.0;
  FeatureMap<std::uint8_t> arg;
  maxpool_forward(in, out, arg);
  CHECK(out.chan(0)(0, 0) == 5.0);
  CHECK(arg.chan(0)(0, 0) == 0);
}

TEST_CASE("nearest upsample and its transpose") {
  FeatureMap<double> in(1, 2, 2), up;
  in.chan(0) << 1.0, 2.0, 3.0, 4.0;
  upsample2_forward(in, up);
  REQUIRE(up.rows() == 4);
  CHECK(up.chan(0)(0, 0) == 1.0);
  CHECK(up.chan(0)(1, 1) == 1.0);
  CHECK(up.chan(0)(0, 2) == 2.0);
  CHECK(up.chan(0)(3, 3) == 4.0);

  // adjoint: <up(x), y> == <x, up^T(y)>
  Rng rng(1);
  FeatureMap<double> y(1, 4, 4), xt;
  fill_random(y, rng);
  upsample2_backward(y, xt);
  const double lhs = (up.m.array() * y.m.array()).sum();
  const double rhs = (in.m.array() * xt.m.array()).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("concat and split are inverse") {
  Rng rng(4);
  FeatureMap<double> a(2, 3, 3), b(3, 3, 3);
  fill_random(a, rng);
  fill_random(b, rng);
  const FeatureMap<double> j = concat_channels(a, b);
  REQUIRE(j.channels() == 5);
  FeatureMap<double> a2, b2;
  split_channels(j, 2, a2, b2);
  CHECK(a2.m == a.m);
  CHECK(b2.m == b.m);
}

TEST_CASE("softmax normalizes and matches scalar reference") {
  Rng rng(6);
  FeatureMap<double> logits(3, 4, 4), probs;
  fill_random(logits, rng, 5.0);
  softmax_forward(logits, probs);
  for (Index p = 0; p < 16; ++p) {
    double z = 0.0;
    for (int c = 0; c < 3; ++c) {
      CHECK(probs.m(p, c) >= 0.0);
      CHECK(probs.m(p, c) <= 1.0);
      z += probs.m(p, c);
    }
    CHECK(z == doctest::Approx(1.0).epsilon(1e-12));
    // scalar reference
    double den = 0.0;
    for (int c = 0; c < 3; ++c) den += std::exp(logits.m(p, c));
    for (int c = 0; c < 3; ++c)
      CHECK(probs.m(p, c) == doctest::Approx(std::exp(logits.m(p, c)) / den).epsilon(1e-12));
  }
}

TEST_CASE("softmax gradient matches finite differences") {
  Rng rng(8);
  FeatureMap<double> logits(3, 2, 2), probs, proj(3, 2, 2), dlogits;
  fill_random(logits, rng, 2.0);
  fill_random(proj, rng);

  const auto loss = [&] {
    FeatureMap<double> p;
    softmax_forward(logits, p);
    return (p.m.array() * proj.m.array()).sum();
  };

  softmax_forward(logits, probs);
  softmax_backward(probs, proj, dlogits);
  for (Index i = 0; i < logits.m.rows(); ++i)
    for (Index j = 0; j < logits.m.cols(); ++j) {
      const double fd = oracle::central_diff(loss, logits.m(i, j));
      CHECK(oracle::rel_err(dlogits.m(i, j), fd) < 1e-7);
    }
}

TEST_CASE("composite conv-relu-pool gradient check") {
  Rng rng(13);
  ConvLayer<double> layer;
  layer.resize(2, 3, 3);
  conv_init(layer, rng);
  for (auto& v : layer.b) v = rng.uniform(-0.1, 0.1);
  FeatureMap<double> in(2, 6, 6), proj(3, 3, 3);
  fill_random(in, rng);
  fill_random(proj, rng);

  const auto loss = [&] {
    FeatureMap<double> z, pooled;
    FeatureMap<std::uint8_t> arg;
    conv_forward(layer, in, z);
    FeatureMap<double> pre = z;
    relu_forward(z);
    maxpool_forward(z, pooled, arg);
    return (pooled.m.array() * proj.m.array()).sum();
  };

  // analytic
  FeatureMap<double> z, pooled, dz, din;
  FeatureMap<std::uint8_t> arg;
  conv_forward(layer, in, z);
  FeatureMap<double> pre = z;
  relu_forward(z);
  maxpool_forward(z, pooled, arg);
  maxpool_backward(proj, arg, dz);
  relu_backward(pre, dz);
  ConvLayer<double> grad;
  grad.resize(2, 3, 3);
  conv_backward(layer, in, dz, din, grad);

  for (std::size_t i = 0; i < layer.w.size(); ++i) {
    const double fd = oracle::central_diff(loss, layer.w[i]);
    CHECK(oracle::rel_err(grad.w[i], fd) < 1e-6);
  }
  for (Index i = 0; i < in.m.rows(); ++i)
    for (Index j = 0; j < in.m.cols(); ++j) {
      const double fd = oracle::central_diff(loss, in.m(i, j));
      CHECK(oracle::rel_err(din.m(i, j), fd) < 1e-6);
    }
}

TEST_CASE("conv init is deterministic and seed sensitive") {
  ConvLayer<float> a, b, c;
  a.resize(4, 8, 3);
  b.resize(4, 8, 3);
  c.resize(4, 8, 3);
  Rng r1(42), r2(42), r3(43);
  conv_init(a, r1);
  conv_init(b, r2);
  conv_init(c, r3);
  CHECK(a.w == b.w);
  CHECK(a.w != c.w);
  CHECK((Eigen::Map<const Eigen::ArrayXf>(a.b.data(), 8) == 0.0f).all());
}

TEST_CASE("conv validates shapes") {
  ConvLayer<double> layer;
  layer.resize(2, 3, 3);
  FeatureMap<double> wrong(3, 4, 4), out;
  CHECK_THROWS_AS(conv_forward(layer, wrong, out), std::invalid_argument);
  CHECK_THROWS_AS(layer.resize(2, 3, 4), std::invalid_argument);
}

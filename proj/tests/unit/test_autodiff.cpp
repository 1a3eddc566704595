#include <doctest.h>

#include <cmath>
#include <functional>

#include "lipsync/autodiff.hpp"
#include "lipsync/common.hpp"

using namespace lipsync;
using namespace lipsync::ad;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, scale);
  return t;
}

// Central finite differences against the analytic gradient of a scalar head.
void check_grad(const Tensor& x0, const std::function<Var(Tape&, Var)>& f, double tol = 1e-7,
                double h = 1e-6) {
  Tape tape;
  Var x = tape.leaf(x0, true);
  Var loss = f(tape, x);
  REQUIRE(loss.val().size() == 1);
  tape.backward(loss);
  REQUIRE(x.has_grad());
  Tensor analytic = x.grad();

  Rng pick(123);
  int64_t n = x0.size();
  int64_t samples = std::min<int64_t>(n, 24);
  for (int64_t s = 0; s < samples; ++s) {
    int64_t i = n <= 24 ? s : pick.below(n);
    Tensor xp = x0, xm = x0;
    double step = h * std::max(1.0, std::fabs(x0[i]));
    xp[i] += step;
    xm[i] -= step;
    Tape tp, tm;
    double fp = f(tp, tp.leaf(xp, false)).val()[0];
    double fm = f(tm, tm.leaf(xm, false)).val()[0];
    double fd = (fp - fm) / (2.0 * step);
    double denom = std::max({std::fabs(fd), std::fabs(analytic[i]), 1e-4});
    CHECK(std::fabs(fd - analytic[i]) / denom < tol * 1e4);
  }
}

// Direct convolution, no im2col, for forward cross-checking.
Tensor naive_conv(const Tensor& x, const Tensor& w, int stride, int pad) {
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int Ho = (H + 2 * pad - kh) / stride + 1;
  int Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor y({N, O, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          double acc = 0.0;
          for (int c = 0; c < C; ++c)
            for (int dy = 0; dy < kh; ++dy)
              for (int dx = 0; dx < kw; ++dx) {
                int iy = oy * stride - pad + dy;
                int ix = ox * stride - pad + dx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x.at({n, c, iy, ix}) * w.at({o, c, dy, dx});
              }
          y.at({n, o, oy, ox}) = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("elementwise forward and gradients") {
  Rng rng(7);
  Tensor a0 = random_tensor(rng, {3, 4});
  Tensor b0 = random_tensor(rng, {3, 4});

  {
    Tape t;
    Var a = t.input(a0), b = t.input(b0);
    Tensor s = add(a, b).val();
    Tensor d = sub(a, b).val();
    Tensor m = mul(a, b).val();
    for (int64_t i = 0; i < a0.size(); ++i) {
      CHECK(s[i] == a0[i] + b0[i]);
      CHECK(d[i] == a0[i] - b0[i]);
      CHECK(m[i] == a0[i] * b0[i]);
    }
  }

  check_grad(a0, [&](Tape& t, Var x) { return sum_sq(mul(x, t.input(b0))); });
  check_grad(a0, [&](Tape& t, Var x) { return sum_sq(sub(x, t.input(b0))); });
  check_grad(a0, [&](Tape& t, Var x) { return sum(mul(sigmoid(x), x)); });
  check_grad(a0, [&](Tape& t, Var x) { return sum_sq(leaky_relu(x, 0.2)); });
  check_grad(a0, [&](Tape&, Var x) { return mean(scale(add_const(x, 0.7), 1.3)); });

  Tensor pos = random_tensor(rng, {5});
  for (int64_t i = 0; i < pos.size(); ++i) pos[i] = 0.5 + std::fabs(pos[i]);
  check_grad(pos, [&](Tape&, Var x) { return sum(sqrt0(x)); });
  check_grad(pos, [&](Tape&, Var x) { return sum(powc(x, -0.5)); });
}

TEST_CASE("broadcast add/mul") {
  Rng rng(11);
  Tensor a0 = random_tensor(rng, {2, 3, 4, 4});
  Tensor bias = random_tensor(rng, {1, 3, 1, 1});
  Tensor mask = random_tensor(rng, {2, 1, 4, 4});

  Tape t;
  Var a = t.input(a0);
  Tensor y = add_b(a, t.input(bias)).val();
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
          CHECK(y.at({n, c, i, j}) == a0.at({n, c, i, j}) + bias.at({0, c, 0, 0}));

  check_grad(a0, [&](Tape& tp, Var x) { return sum_sq(add_b(x, tp.input(bias))); });
  check_grad(bias, [&](Tape& tp, Var b) { return sum_sq(add_b(tp.input(a0), b)); });
  check_grad(mask, [&](Tape& tp, Var m) { return sum_sq(mul_b(tp.input(a0), m)); });
  check_grad(a0, [&](Tape& tp, Var x) { return sum_sq(mul_b(x, tp.input(mask))); });
}

TEST_CASE("reductions") {
  Rng rng(13);
  Tensor x0 = random_tensor(rng, {4, 6});
  check_grad(x0, [](Tape&, Var x) { return sum(x); });
  check_grad(x0, [](Tape&, Var x) { return mean(x); });
  check_grad(x0, [](Tape&, Var x) { return sum_sq(x); });
  check_grad(x0, [](Tape&, Var x) { return sum(rowwise_sumsq(x)); });
  check_grad(x0, [](Tape&, Var x) { return sum(logsumexp_rows(x)); });
  check_grad(x0, [](Tape&, Var x) { return sum(take_cols(x, {1, 5, 0, 3})); });

  Tape t;
  Var x = t.input(x0);
  const Tensor lse = logsumexp_rows(x).val();
  for (int i = 0; i < 4; ++i) {
    double s = 0.0;
    for (int j = 0; j < 6; ++j) s += std::exp(x0.at({i, j}));
    CHECK(std::fabs(lse[i] - std::log(s)) < 1e-12);
  }
}

TEST_CASE("matmul and linear") {
  Rng rng(17);
  Tensor a0 = random_tensor(rng, {3, 5});
  Tensor b0 = random_tensor(rng, {5, 4});
  Tensor w0 = random_tensor(rng, {4, 5});
  Tensor bias0 = random_tensor(rng, {4});

  Tape t;
  Tensor y = matmul(t.input(a0), t.input(b0)).val();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 5; ++k) acc += a0.at({i, k}) * b0.at({k, j});
      CHECK(std::fabs(y.at({i, j}) - acc) < 1e-12);
    }

  check_grad(a0, [&](Tape& tp, Var x) { return sum_sq(matmul(x, tp.input(b0))); });
  check_grad(b0, [&](Tape& tp, Var x) { return sum_sq(matmul(tp.input(a0), x)); });
  check_grad(a0, [&](Tape& tp, Var x) { return sum_sq(matmul_nt(x, tp.input(w0))); });
  check_grad(w0, [&](Tape& tp, Var x) { return sum_sq(matmul_nt(tp.input(a0), x)); });
  check_grad(w0, [&](Tape& tp, Var w) {
    return sum_sq(linear(tp.input(a0), w, tp.input(bias0)));
  });
  check_grad(bias0, [&](Tape& tp, Var b) {
    return sum_sq(linear(tp.input(a0), tp.input(w0), b));
  });
}

TEST_CASE("shape ops") {
  Rng rng(19);
  Tensor x0 = random_tensor(rng, {2, 3, 4});
  check_grad(x0, [](Tape&, Var x) { return sum_sq(reshape(x, {6, 4})); });
  check_grad(x0, [](Tape&, Var x) { return sum_sq(slice(x, 1, 1, 2)); });
  check_grad(x0, [](Tape&, Var x) {
    Var a = slice(x, 2, 0, 2);
    Var b = slice(x, 2, 2, 2);
    return sum_sq(concat({b, a}, 2));
  });

  Tape t;
  Var x = t.input(x0);
  Tensor s = slice(x, 1, 1, 2).val();
  CHECK(s.shape() == std::vector<int>{2, 2, 4});
  for (int n = 0; n < 2; ++n)
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 4; ++c) CHECK(s.at({n, r, c}) == x0.at({n, r + 1, c}));

  Tensor cat = concat({x, x}, 0).val();
  CHECK(cat.shape() == std::vector<int>{4, 3, 4});
  CHECK(cat[0] == x0[0]);
  CHECK(cat[x0.size()] == x0[0]);
}

TEST_CASE("conv2d matches naive convolution and differentiates") {
  Rng rng(23);
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}}) {
    Tensor x0 = random_tensor(rng, {2, 3, 6, 6});
    Tensor w0 = random_tensor(rng, {4, 3, 3, 3});
    Tape t;
    Tensor y = conv2d(t.input(x0), t.input(w0), {stride, pad}).val();
    Tensor ref = naive_conv(x0, w0, stride, pad);
    REQUIRE(y.shape() == ref.shape());
    for (int64_t i = 0; i < y.size(); ++i) CHECK(std::fabs(y[i] - ref[i]) < 1e-12);

    ConvSpec spec{stride, pad};
    check_grad(x0, [&, spec](Tape& tp, Var x) { return sum_sq(conv2d(x, tp.input(w0), spec)); });
    check_grad(w0, [&, spec](Tape& tp, Var w) { return sum_sq(conv2d(tp.input(x0), w, spec)); });
  }
}

TEST_CASE("conv2d_mw applies a distinct kernel per sample") {
  Rng rng(29);
  Tensor x0 = random_tensor(rng, {3, 2, 5, 5});
  Tensor w0 = random_tensor(rng, {3, 4, 2, 3, 3});
  Tape t;
  Tensor y = conv2d_mw(t.input(x0), t.input(w0), {1, 1}).val();
  for (int n = 0; n < 3; ++n) {
    Tensor xn({1, 2, 5, 5});
    for (int64_t i = 0; i < xn.size(); ++i) xn[i] = x0[n * xn.size() + i];
    Tensor wn({4, 2, 3, 3});
    for (int64_t i = 0; i < wn.size(); ++i) wn[i] = w0[n * wn.size() + i];
    Tensor ref = naive_conv(xn, wn, 1, 1);
    for (int64_t i = 0; i < ref.size(); ++i)
      CHECK(std::fabs(y[n * ref.size() + i] - ref[i]) < 1e-12);
  }
  check_grad(x0, [&](Tape& tp, Var x) { return sum_sq(conv2d_mw(x, tp.input(w0), {1, 1})); });
  check_grad(w0, [&](Tape& tp, Var w) { return sum_sq(conv2d_mw(tp.input(x0), w, {1, 1})); });
}

TEST_CASE("pooling and upsampling") {
  Rng rng(31);
  Tensor x0 = random_tensor(rng, {2, 3, 4, 4});
  check_grad(x0, [](Tape&, Var x) { return sum_sq(upsample2(x)); });
  check_grad(x0, [](Tape&, Var x) { return sum_sq(avgpool2(x)); });
  check_grad(x0, [](Tape&, Var x) { return sum_sq(global_avgpool(x)); });

  Tape t;
  Tensor up = upsample2(t.input(x0)).val();
  CHECK(up.at({1, 2, 3, 3}) == x0.at({1, 2, 1, 1}));
  Tensor dn = avgpool2(t.input(x0)).val();
  CHECK(std::fabs(dn.at({0, 0, 0, 0}) -
                  0.25 * (x0.at({0, 0, 0, 0}) + x0.at({0, 0, 0, 1}) + x0.at({0, 0, 1, 0}) +
                          x0.at({0, 0, 1, 1}))) < 1e-15);
}

TEST_CASE("smooth3_time: replicate-padded 3-tap average") {
  Rng rng(37);
  Tensor x0 = random_tensor(rng, {2, 5, 3, 4});
  std::array<double, 3> alpha{0.25, 0.5, 0.25};

  Tape t;
  Tensor y = smooth3_time(t.input(x0), alpha).val();
  for (int b = 0; b < 2; ++b)
    for (int tt = 0; tt < 5; ++tt)
      for (int r = 0; r < 3; ++r)
        for (int d = 0; d < 4; ++d) {
          int tm = std::max(0, tt - 1), tp = std::min(4, tt + 1);
          double want = 0.25 * x0.at({b, tm, r, d}) + 0.5 * x0.at({b, tt, r, d}) +
                        0.25 * x0.at({b, tp, r, d});
          CHECK(std::fabs(y.at({b, tt, r, d}) - want) < 1e-15);
        }

  check_grad(x0, [alpha](Tape&, Var x) { return sum_sq(smooth3_time(x, alpha)); });
}

TEST_CASE("composites") {
  Rng rng(41);
  Tensor a0 = random_tensor(rng, {4, 8});
  Tensor b0 = random_tensor(rng, {4, 8});
  check_grad(a0, [&](Tape& tp, Var x) { return mse(x, tp.input(b0)); });
  check_grad(a0, [&](Tape& tp, Var x) {
    return sum_sq(sub(l2_normalize_rows(x), tp.input(b0)));
  });

  Tape t;
  Tensor n = l2_normalize_rows(t.input(a0)).val();
  for (int i = 0; i < 4; ++i) {
    double s = 0.0;
    for (int j = 0; j < 8; ++j) s += n.at({i, j}) * n.at({i, j});
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }

  Tensor z = Tensor::zeros({2, 3});
  Tape tz;
  CHECK_THROWS_AS((void)l2_normalize_rows(tz.input(z)), Error);
}

TEST_CASE("backward accumulates through shared subexpressions") {
  // y = sum((x + x) * x) = 2 * sum(x^2), dy/dx = 4x
  Tensor x0({3}, {1.0, -2.0, 0.5});
  Tape t;
  Var x = t.leaf(x0, true);
  Var y = sum(mul(add(x, x), x));
  t.backward(y);
  for (int i = 0; i < 3; ++i) CHECK(std::fabs(x.grad()[i] - 4.0 * x0[i]) < 1e-12);
}

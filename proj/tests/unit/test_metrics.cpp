#include <doctest.h>

#include <cmath>

#include "lipsync/metrics.hpp"

using namespace lipsync;
using namespace lipsync::metrics;

namespace {

Tensor random_frame(Rng& rng, int h, int w) {
  Tensor t({3, h, w});
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform();
  return t;
}

// Direct windowed SSIM oracle: naive double loops over every valid window.
double ssim_oracle(const Tensor& a, const Tensor& b) {
  int C = a.dim(0), H = a.dim(1), W = a.dim(2);
  std::array<double, 11> g{};
  double gs = 0;
  for (int i = 0; i < 11; ++i) {
    double x = i - 5.0;
    g[static_cast<size_t>(i)] = std::exp(-x * x / 4.5);
    gs += g[static_cast<size_t>(i)];
  }
  for (double& v : g) v /= gs;
  double acc = 0;
  int64_t cnt = 0;
  for (int ch = 0; ch < C; ++ch)
    for (int y = 0; y + 11 <= H; ++y)
      for (int x = 0; x + 11 <= W; ++x) {
        double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            double wgt = g[static_cast<size_t>(i)] * g[static_cast<size_t>(j)];
            double va = a.at({ch, y + i, x + j});
            double vb = b.at({ch, y + i, x + j});
            ma += wgt * va;
            mb += wgt * vb;
            aa += wgt * va * va;
            bb += wgt * vb * vb;
            ab += wgt * va * vb;
          }
        double c1 = 1e-4, c2 = 9e-4;
        acc += ((2 * ma * mb + c1) * (2 * (ab - ma * mb) + c2)) /
               ((ma * ma + mb * mb + c1) * ((aa - ma * ma) + (bb - mb * mb) + c2));
        ++cnt;
      }
  return acc / static_cast<double>(cnt);
}

}  // namespace

TEST_CASE("psnr: cap, formula, oracle") {
  Rng rng(1);
  Tensor x = random_frame(rng, 16, 16);
  CHECK(psnr(x, x) == 99.0);

  // MSE = 0.01 -> 20 dB: construct b = a + 0.1 everywhere (clipped none).
  Tensor a = Tensor::full({3, 8, 8}, 0.4);
  Tensor b = Tensor::full({3, 8, 8}, 0.5);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));

  Tensor y = random_frame(rng, 16, 16);
  double mse = 0;
  for (int64_t i = 0; i < x.size(); ++i) mse += (x[i] - y[i]) * (x[i] - y[i]);
  mse /= static_cast<double>(x.size());
  CHECK(std::fabs(psnr(x, y) - (-10.0 * std::log10(mse))) < 1e-6);

  CHECK_THROWS_AS((void)psnr(x, Tensor({3, 8, 8})), Error);
}

TEST_CASE("ssim: identity, oracle, constants, ordering") {
  Rng rng(2);
  Tensor x = random_frame(rng, 64, 64);
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));

  Tensor y = random_frame(rng, 64, 64);
  CHECK(std::fabs(ssim(x, y) - ssim_oracle(x, y)) < 1e-6);

  // Constant 0 vs constant 1: closed-form via the same oracle.
  Tensor z0 = Tensor::zeros({3, 16, 16});
  Tensor z1 = Tensor::full({3, 16, 16}, 1.0);
  CHECK(std::fabs(ssim(z0, z1) - ssim_oracle(z0, z1)) < 1e-9);
  CHECK(ssim(z0, z1) < 0.01);

  // Ordering sanity.
  CHECK(ssim(y, y) >= ssim(x, y));
  CHECK(psnr(y, y) >= psnr(x, y));

  CHECK_THROWS_AS((void)ssim(Tensor({3, 8, 8}), Tensor({3, 8, 8})), Error);
}

TEST_CASE("lmd: zero, 3-4-5, direct oracle") {
  std::vector<std::array<double, 2>> a{{0, 0}, {5, 5}, {2, 7}};
  CHECK(lmd(a, a) == 0.0);

  std::vector<std::array<double, 2>> shifted;
  for (auto& p : a) shifted.push_back({p[0] + 3.0, p[1] + 4.0});
  CHECK(lmd(shifted, a) == doctest::Approx(5.0).epsilon(1e-12));

  Rng rng(3);
  std::vector<std::array<double, 2>> p, q;
  double want = 0;
  for (int i = 0; i < 8; ++i) {
    p.push_back({rng.uniform(0, 64), rng.uniform(0, 64)});
    q.push_back({rng.uniform(0, 64), rng.uniform(0, 64)});
    want += std::hypot(p.back()[0] - q.back()[0], p.back()[1] - q.back()[1]);
  }
  CHECK(std::fabs(lmd(p, q) - want / 8.0) < 1e-9);

  CHECK_THROWS_AS((void)lmd(p, a), Error);
}

TEST_CASE("lse scores: degenerate scorer gives zero, errors on short clips") {
  // Stub the expert so every tower emits one fixed embedding: zero all
  // weights, give both heads the same bias. Then lse_d = 0 and lse_c = 0.
  cfg::GlobalConfig c;
  c.resolution = 16;
  c.levels = 3;
  c.style_dim = 8;
  c.model.decoder_channels = {8, 8, 6, 6};
  c.sync.embed_dim = 16;
  c.validate();
  sync::SyncExpert expert(c, 9);
  for (nn::Param* p : expert.params().all()) p->value.fill(0.0);
  Tensor fixed({16});
  for (int i = 0; i < 16; ++i) fixed[i] = 0.1 * (i + 1);
  expert.params().find("video.head.bias")->value = fixed;
  expert.params().find("audio.head.bias")->value = fixed;

  std::vector<Tensor> frames(12, Tensor::full({3, 16, 16}, 0.5));
  Tensor mel = Tensor::full({40, 80}, std::log(1e-5));
  LseScores s = lse_scores(frames, mel, expert, 1);
  CHECK(std::fabs(s.lse_d) < 1e-12);
  CHECK(std::fabs(s.lse_c) < 1e-12);

  std::vector<Tensor> short_clip(3, Tensor::full({3, 16, 16}, 0.5));
  CHECK_THROWS_AS((void)lse_scores(short_clip, mel, expert, 1), Error);
}

#include <benchmark/benchmark.h>

#include "lipsync/autodiff.hpp"
#include "lipsync/geometry.hpp"
#include "lipsync/mel.hpp"
#include "lipsync/metrics.hpp"
#include "lipsync/models.hpp"
#include "lipsync/synth.hpp"

using namespace lipsync;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_conv2d_forward(benchmark::State& state) {
  Rng rng(1);
  Tensor x = random_tensor(rng, {8, 16, 64, 64});
  Tensor w = random_tensor(rng, {16, 16, 3, 3});
  for (auto _ : state) {
    ad::Tape tape;
    ad::Var y = ad::conv2d(tape.input(x), tape.input(w), {1, 1});
    benchmark::DoNotOptimize(y.val().data());
  }
}
BENCHMARK(BM_conv2d_forward);

void BM_conv2d_train_step(benchmark::State& state) {
  Rng rng(2);
  Tensor x = random_tensor(rng, {8, 16, 32, 32});
  Tensor w = random_tensor(rng, {16, 16, 3, 3});
  for (auto _ : state) {
    ad::Tape tape;
    ad::Var wv = tape.leaf(w, true);
    ad::Var loss = ad::sum_sq(ad::conv2d(tape.input(x), wv, {1, 1}));
    tape.backward(loss);
    benchmark::DoNotOptimize(wv.grad().data());
  }
}
BENCHMARK(BM_conv2d_train_step);

void BM_rasterize_mask(benchmark::State& state) {
  synth::IdentityParams id = synth::sample_identity(5);
  geom::MeshTemplate tmpl = synth::build_mask_template(id, 8);
  geom::PoseParams pose;
  pose.euler = {0.2, -0.15, 0.1};
  pose.expression.assign(8, 0.0);
  pose.expression[0] = 0.4;
  for (auto _ : state) {
    geom::LipMask mask = geom::pose_aware_mask(tmpl, pose, 64, 64);
    benchmark::DoNotOptimize(mask.grid.data());
  }
}
BENCHMARK(BM_rasterize_mask);

void BM_waveform_to_mel(benchmark::State& state) {
  synth::IdentityParams id = synth::sample_identity(6);
  synth::VideoClip clip = synth::render_clip(id, 4.0, 9, 32);
  for (auto _ : state) {
    Tensor mel = audio::waveform_to_mel(clip.waveform);
    benchmark::DoNotOptimize(mel.data());
  }
}
BENCHMARK(BM_waveform_to_mel);

void BM_render_frame(benchmark::State& state) {
  synth::IdentityParams id = synth::sample_identity(7);
  geom::PoseParams pose;
  pose.euler = {0.1, 0.2, -0.1};
  pose.expression.assign(8, 0.0);
  for (auto _ : state) {
    Tensor frame = synth::render_frame(id, pose, 0.6, 64, 64);
    benchmark::DoNotOptimize(frame.data());
  }
}
BENCHMARK(BM_render_frame);

void BM_decode_frame(benchmark::State& state) {
  cfg::GlobalConfig cfg;
  cfg.validate();
  models::Generator gen(cfg, 11);
  Rng rng(3);
  Tensor frames = random_tensor(rng, {1, 3, 64, 64});
  Tensor styles = random_tensor(rng, {1, 8, 64});
  for (auto _ : state) {
    ad::Tape tape;
    nn::Binder bind(tape, true);
    std::vector<ad::Var> pyr = gen.face_encoder().apply(bind, tape.input(frames));
    ad::Var out = gen.decoder().apply(bind, tape.input(styles), pyr);
    benchmark::DoNotOptimize(out.val().data());
  }
}
BENCHMARK(BM_decode_frame);

void BM_ssim(benchmark::State& state) {
  Rng rng(4);
  Tensor a = random_tensor(rng, {3, 64, 64});
  Tensor b = random_tensor(rng, {3, 64, 64});
  for (auto _ : state) {
    double v = metrics::ssim(a, b);
    benchmark::DoNotOptimize(v);
  }
}
BENCHMARK(BM_ssim);

}  // namespace

BENCHMARK_MAIN();

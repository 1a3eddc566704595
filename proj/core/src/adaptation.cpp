#include "lipsync/adaptation.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <ostream>

#include "lipsync/mel.hpp"
#include "lipsync/metrics.hpp"

namespace lipsync::adapt {

using namespace lipsync::ad;
using nn::Binder;
using nlohmann::json;

TargetClip::TargetClip(synth::VideoClip clip, const cfg::GlobalConfig& cfg)
    : clip_(std::move(clip)), cfg_(cfg) {
  require(clip_.frame_count() >= 5 * clip_.fps, ErrorCode::InvalidArgument,
          "adaptation target clip must be at least 5 s long");
  require(clip_.width == cfg.resolution && clip_.height == cfg.resolution,
          ErrorCode::InvalidArgument, "target clip resolution does not match config");
  mel_ = audio::waveform_to_mel(clip_.waveform, cfg.mel);
  geom::MeshTemplate tmpl = synth::build_mask_template(clip_.identity, cfg.expression_dim);
  masks_.reserve(static_cast<size_t>(clip_.frame_count()));
  for (int t = 0; t < clip_.frame_count(); ++t) {
    if (cfg.ablation.pose_mask_rect) {
      masks_.push_back(geom::rectangular_mask(clip_.height, clip_.width));
    } else {
      masks_.push_back(
          geom::pose_aware_mask(tmpl, clip_.meta[static_cast<size_t>(t)].pose, clip_.height, clip_.width));
    }
  }
}

Tensor TargetClip::frame(int t) const {
  return io::image_to_frame(clip_.frames[static_cast<size_t>(t)]);
}

Tensor TargetClip::masked_frame(int t) const {
  return geom::apply_mask(frame(t), masks_[static_cast<size_t>(t)]);
}

namespace {

struct TargetBatch {
  Tensor masked, target, audio, sync_audio, refs;
};

// Windows over the target clip; audio segments come from `mel` (the target's
// own mel for L_train, foreign mel for the regularizer).
TargetBatch build_target_batch(TargetClip& tc, const Tensor& mel, const std::vector<int>& starts,
                               const cfg::GlobalConfig& cfg) {
  const int B = static_cast<int>(starts.size());
  const int T = cfg.frames_per_window;
  const int H = cfg.resolution, W = cfg.resolution;
  TargetBatch b;
  b.masked = Tensor({B * T, 3, H, W});
  b.target = Tensor({B * T, 3, H, W});
  b.audio = Tensor({B * T, 1, cfg.mel.segment_frames, cfg.mel.bins});
  b.sync_audio = Tensor({B, 1, cfg.mel.segment_frames, cfg.mel.bins});
  b.refs = Tensor({B, 3, H, W});
  Tensor ref = tc.frame(0);
  for (int i = 0; i < B; ++i) {
    int t0 = starts[static_cast<size_t>(i)];
    for (int64_t k = 0; k < ref.size(); ++k) b.refs[i * ref.size() + k] = ref[k];
    for (int t = 0; t < T; ++t) {
      Tensor tgt = tc.frame(t0 + t);
      Tensor msk = tc.masked_frame(t0 + t);
      for (int64_t k = 0; k < tgt.size(); ++k) {
        b.target[(i * T + t) * tgt.size() + k] = tgt[k];
        b.masked[(i * T + t) * tgt.size() + k] = msk[k];
      }
      Tensor seg = audio::audio_segment(mel, t0 + t, cfg.mel);
      for (int64_t k = 0; k < seg.size(); ++k) b.audio[(i * T + t) * seg.size() + k] = seg[k];
    }
    Tensor sseg = audio::audio_segment(mel, t0 + T / 2, cfg.mel);
    for (int64_t k = 0; k < sseg.size(); ++k) b.sync_audio[i * sseg.size() + k] = sseg[k];
  }
  return b;
}

struct ForwardLoss {
  Var total;
  double value = 0.0;
};

// lambda_1 * perceptual + lambda_2 * sync on one window batch.
ForwardLoss window_objective(models::Generator& gen, const sync::SyncExpert& expert, Tape& tape,
                             Binder& bind, const TargetBatch& batch, int B) {
  const cfg::GlobalConfig& cfg = gen.config();
  const int T = cfg.frames_per_window;
  models::Generator::WindowForward fw =
      gen.forward_window(bind, tape.input(batch.masked), tape.input(batch.audio),
                         tape.input(batch.refs), B, T);
  Var perc = gen.perceptual().loss(bind, fw.frames, tape.input(batch.target));
  Var total = scale(perc, cfg.loss.lambda_perceptual);
  if (cfg.loss.lambda_sync > 0.0) {
    Binder frozen(tape, /*freeze=*/true);
    auto& ex = const_cast<sync::SyncExpert&>(expert);
    Var stacked = train::stack_video_windows(fw.frames, B, T, cfg.resolution);
    Var fv = ex.embed_video_stacked(frozen, stacked);
    Var fa = ex.embed_audio(frozen, tape.input(batch.sync_audio));
    total = add(total, scale(mean(sync::sync_distance_rows(fv, fa)), cfg.loss.lambda_sync));
  }
  return {total, total.val()[0]};
}

// Regularizer branch: target context driven by foreign audio, scored by the
// frozen expert (Eq.-style sync distance).
Var regularizer_term(models::Generator& gen, const sync::SyncExpert& expert, Tape& tape,
                     Binder& bind, const TargetBatch& batch, int B) {
  const cfg::GlobalConfig& cfg = gen.config();
  const int T = cfg.frames_per_window;
  models::Generator::WindowForward fw =
      gen.forward_window(bind, tape.input(batch.masked), tape.input(batch.audio),
                         tape.input(batch.refs), B, T);
  Binder frozen(tape, /*freeze=*/true);
  auto& ex = const_cast<sync::SyncExpert&>(expert);
  Var stacked = train::stack_video_windows(fw.frames, B, T, cfg.resolution);
  Var fv = ex.embed_video_stacked(frozen, stacked);
  Var fa = ex.embed_audio(frozen, tape.input(batch.sync_audio));
  return mean(sync::sync_distance_rows(fv, fa));
}

}  // namespace

std::vector<AdaptStep> adapt(models::Generator& gen, const sync::SyncExpert& expert,
                             TargetClip& target, data::ClipCache& corpus,
                             const std::vector<int>& audio_pool, const AdaptOptions& opts,
                             std::ostream* log) {
  require(opts.lambda_reg >= 0.0, ErrorCode::InvalidConfig, "lambda_reg must be >= 0");
  const cfg::GlobalConfig& cfg = gen.config();
  const int T = cfg.frames_per_window;
  const bool use_reg = opts.lambda_reg > 0.0 && cfg.ablation.sync_reg_enabled;
  if (use_reg)
    require(!audio_pool.empty(), ErrorCode::InvalidConfig,
            "sync regularizer needs a non-empty training-audio pool");

  int max_start = opts.max_start >= 0 ? opts.max_start : target.frame_count() - T;
  require(max_start >= 0 && max_start + T <= target.frame_count(), ErrorCode::InvalidArgument,
          "adaptation window bound out of range");

  Rng rng(static_cast<uint64_t>(opts.seed));
  nn::Adam opt(opts.lr, cfg.optim.beta1, cfg.optim.beta2, cfg.optim.eps);
  std::vector<nn::Param*> decoder_params = gen.decoder_params();

  std::vector<AdaptStep> trace;
  trace.reserve(static_cast<size_t>(opts.steps));
  for (int s = 0; s < opts.steps; ++s) {
    std::vector<int> starts;
    for (int b = 0; b < opts.batch_windows; ++b)
      starts.push_back(static_cast<int>(rng.below(max_start + 1)));
    TargetBatch main_batch = build_target_batch(target, target.mel(), starts, cfg);

    Tape tape;
    Binder bind(tape);
    ForwardLoss train_term = window_objective(gen, expert, tape, bind, main_batch, opts.batch_windows);
    Var total = train_term.total;

    AdaptStep step;
    step.train_loss = train_term.value;
    if (use_reg) {
      // Fresh foreign audio each step: random training clip, random window.
      std::vector<int> ctx_starts;
      for (int b = 0; b < opts.batch_windows; ++b)
        ctx_starts.push_back(static_cast<int>(rng.below(max_start + 1)));
      int clip_idx = audio_pool[static_cast<size_t>(rng.below(static_cast<int64_t>(audio_pool.size())))];
      const Tensor& foreign = corpus.mel(clip_idx);
      int foreign_frames = static_cast<int>(std::floor(foreign.dim(0) / 3.2)) + 1;
      std::vector<int> audio_starts;
      for (int b = 0; b < opts.batch_windows; ++b)
        audio_starts.push_back(static_cast<int>(rng.below(std::max(1, foreign_frames - T))));
      // Context windows from the target, audio windows from the foreign clip.
      TargetBatch reg_batch = build_target_batch(target, target.mel(), ctx_starts, cfg);
      for (int b = 0; b < opts.batch_windows; ++b) {
        for (int t = 0; t < T; ++t) {
          Tensor seg = audio::audio_segment(foreign, audio_starts[static_cast<size_t>(b)] + t, cfg.mel);
          for (int64_t k = 0; k < seg.size(); ++k)
            reg_batch.audio[(b * T + t) * seg.size() + k] = seg[k];
        }
        Tensor sseg = audio::audio_segment(foreign, audio_starts[static_cast<size_t>(b)] + T / 2, cfg.mel);
        for (int64_t k = 0; k < sseg.size(); ++k) reg_batch.sync_audio[b * sseg.size() + k] = sseg[k];
      }
      Var reg = regularizer_term(gen, expert, tape, bind, reg_batch, opts.batch_windows);
      step.regularizer = reg.val()[0];
      total = add(total, scale(reg, opts.lambda_reg));
    }
    step.total = total.val()[0];
    require(std::isfinite(step.total), ErrorCode::RuntimeFailure,
            "non-finite adaptation loss at step " + std::to_string(s + 1));

    gen.params().zero_grad();
    tape.backward(total);
    bind.collect_grads();
    opt.step(decoder_params);
    trace.push_back(step);

    if (log) {
      (*log) << json({{"step", s + 1},
                      {"train", step.train_loss},
                      {"regularizer", step.regularizer},
                      {"total", step.total}})
                    .dump()
             << "\n";
    }
  }
  return trace;
}

std::vector<Tensor> generate_driven(models::Generator& gen, TargetClip& target,
                                    const Tensor& drive_mel, int max_frames) {
  const cfg::GlobalConfig& cfg = gen.config();
  int f_audio = static_cast<int>(std::floor(drive_mel.dim(0) / 3.2)) + 1;
  int frames = std::min(target.frame_count(), f_audio);
  if (max_frames > 0) frames = std::min(frames, max_frames);
  require(frames >= 1, ErrorCode::InvalidArgument, "generate_driven: nothing to generate");

  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(frames));
  const int chunk = 24;
  const int H = cfg.resolution;
  Tensor ref = target.frame(0).reshaped({1, 3, H, H});
  for (int s = 0; s < frames; s += chunk) {
    int e = std::min(frames, s + chunk);
    int cs = std::max(0, s - 1), ce = std::min(frames, e + 1);
    int n = ce - cs;
    Tensor masked({n, 3, H, H});
    Tensor audio({n, 1, cfg.mel.segment_frames, cfg.mel.bins});
    for (int t = cs; t < ce; ++t) {
      Tensor m = target.masked_frame(t);
      Tensor seg = audio::audio_segment(drive_mel, t, cfg.mel);
      for (int64_t k = 0; k < m.size(); ++k) masked[(t - cs) * m.size() + k] = m[k];
      for (int64_t k = 0; k < seg.size(); ++k) audio[(t - cs) * seg.size() + k] = seg[k];
    }
    Tape tape;
    Binder bind(tape, /*freeze=*/true);
    models::Generator::WindowForward fw =
        gen.forward_window(bind, tape.input(masked), tape.input(audio), tape.input(ref), 1, n);
    int64_t plane = static_cast<int64_t>(3) * H * H;
    for (int t = s; t < e; ++t) {
      Tensor one({3, H, H});
      for (int64_t k = 0; k < plane; ++k) one[k] = fw.frames.val()[(t - cs) * plane + k];
      out.push_back(std::move(one));
    }
  }
  return out;
}

double sync_regularizer_value(models::Generator& gen, const sync::SyncExpert& expert,
                              TargetClip& target, const Tensor& audio_windows,
                              const Tensor& sync_audio_window, const std::vector<int>& starts) {
  const cfg::GlobalConfig& cfg = gen.config();
  TargetBatch batch = build_target_batch(target, target.mel(), starts, cfg);
  batch.audio = audio_windows;
  batch.sync_audio = sync_audio_window;
  Tape tape;
  Binder bind(tape, /*freeze=*/true);
  Var reg = regularizer_term(gen, expert, tape, bind, batch, static_cast<int>(starts.size()));
  return reg.val()[0];
}

double cross_drive_sync_distance(models::Generator& gen, const sync::SyncExpert& expert,
                                 TargetClip& target, const std::vector<Tensor>& foreign_mels,
                                 int max_frames) {
  const cfg::GlobalConfig& cfg = gen.config();
  const int T = cfg.frames_per_window;
  double acc = 0.0;
  int count = 0;
  for (const Tensor& mel : foreign_mels) {
    std::vector<Tensor> generated = generate_driven(gen, target, mel, max_frames);
    int frames = static_cast<int>(generated.size());
    for (int t0 = 0; t0 + T <= frames; t0 += 2) {
      std::vector<Tensor> window(generated.begin() + t0, generated.begin() + t0 + T);
      Tensor fv = expert.embed_video_value(window);
      Tensor fa = expert.embed_audio_value(audio::audio_segment(mel, t0 + T / 2, cfg.mel));
      acc += sync::sync_distance(fv, fa);
      ++count;
    }
  }
  require(count > 0, ErrorCode::InvalidArgument, "cross_drive_sync_distance: no windows");
  return acc / count;
}

double target_reconstruction_psnr(models::Generator& gen, TargetClip& target, int from, int to) {
  require(from >= 0 && to <= target.frame_count() && from < to, ErrorCode::InvalidArgument,
          "bad frame range");
  std::vector<Tensor> generated = generate_driven(gen, target, target.mel(), to);
  require(static_cast<int>(generated.size()) >= to, ErrorCode::InvalidArgument,
          "target clip audio shorter than requested range");
  double acc = 0.0;
  for (int t = from; t < to; ++t)
    acc += metrics::psnr(generated[static_cast<size_t>(t)], target.frame(t));
  return acc / (to - from);
}

uint64_t frozen_fingerprint(const models::Generator& gen) {
  // FNV over the raw float64 bits of every non-decoder tensor.
  uint64_t h = 0xcbf29ce484222325ull;
  const nn::ParamStore& store = gen.params();
  for (size_t i = 0; i < store.size(); ++i) {
    const nn::Param& p = store.at(i);
    if (p.name.rfind("dec.", 0) == 0) continue;
    for (int64_t k = 0; k < p.value.size(); ++k) {
      uint64_t bits;
      double v = p.value[k];
      std::memcpy(&bits, &v, sizeof(bits));
      h = (h ^ bits) * 0x100000001b3ull;
    }
  }
  return h;
}

}  // namespace lipsync::adapt

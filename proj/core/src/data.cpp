#include "lipsync/data.hpp"

#include <filesystem>

#include "lipsync/image_io.hpp"
#include "lipsync/mel.hpp"

namespace lipsync::data {

namespace fs = std::filesystem;

ClipCache::ClipCache(const std::string& corpus_dir, const cfg::GlobalConfig& cfg)
    : dir_(corpus_dir), cfg_(cfg), manifest_(synth::load_corpus(corpus_dir)) {
  clips_.resize(manifest_.entries.size());
  mels_.resize(manifest_.entries.size());
  templates_.resize(manifest_.entries.size());
  masks_.resize(manifest_.entries.size());
}

const synth::VideoClip& ClipCache::clip(int idx) {
  auto& slot = clips_[static_cast<size_t>(idx)];
  if (!slot) {
    slot = synth::read_clip((fs::path(dir_) / manifest_.entries[static_cast<size_t>(idx)].dir).string());
    require(slot->width == cfg_.resolution && slot->height == cfg_.resolution,
            ErrorCode::InvalidConfig, "corpus resolution does not match config");
  }
  return *slot;
}

const Tensor& ClipCache::mel(int idx) {
  auto& slot = mels_[static_cast<size_t>(idx)];
  if (!slot) slot = audio::waveform_to_mel(clip(idx).waveform, cfg_.mel);
  return *slot;
}

const geom::LipMask& ClipCache::mask(int idx, int frame) {
  auto& per_clip = masks_[static_cast<size_t>(idx)];
  auto it = per_clip.find(frame);
  if (it != per_clip.end()) return it->second;
  const synth::VideoClip& c = clip(idx);
  geom::LipMask m;
  if (cfg_.ablation.pose_mask_rect) {
    m = geom::rectangular_mask(c.height, c.width);
  } else {
    auto& tmpl = templates_[static_cast<size_t>(idx)];
    if (!tmpl) tmpl = synth::build_mask_template(c.identity, cfg_.expression_dim);
    m = geom::pose_aware_mask(*tmpl, c.meta[static_cast<size_t>(frame)].pose, c.height, c.width);
  }
  return per_clip.emplace(frame, std::move(m)).first->second;
}

Tensor ClipCache::frame_tensor(int idx, int t) {
  return io::image_to_frame(clip(idx).frames[static_cast<size_t>(t)]);
}

Tensor ClipCache::masked_frame_tensor(int idx, int t) {
  return geom::apply_mask(frame_tensor(idx, t), mask(idx, t));
}

namespace {

void copy_into(Tensor& dst, int slot, const Tensor& src) {
  int64_t n = src.size();
  for (int64_t i = 0; i < n; ++i) dst[slot * n + i] = src[i];
}

}  // namespace

WindowBatch window_batch_from_clip(ClipCache& cache, int clip_idx, const Tensor& mel,
                                   const std::vector<int>& starts, int T) {
  const synth::VideoClip& c = cache.clip(clip_idx);
  const int B = static_cast<int>(starts.size());
  const int H = c.height, W = c.width;
  const audio::MelParams& mp = cache.config().mel;

  WindowBatch batch;
  batch.masked = Tensor({B * T, 3, H, W});
  batch.target = Tensor({B * T, 3, H, W});
  batch.audio = Tensor({B * T, 1, mp.segment_frames, mp.bins});
  batch.sync_audio = Tensor({B, 1, mp.segment_frames, mp.bins});
  batch.refs = Tensor({B, 3, H, W});

  for (int b = 0; b < B; ++b) {
    int t0 = starts[static_cast<size_t>(b)];
    require(t0 >= 0 && t0 + T <= c.frame_count(), ErrorCode::InvalidArgument,
            "window start out of range");
    batch.clip_ids.push_back(clip_idx);
    batch.starts.push_back(t0);
    copy_into(batch.refs, b, cache.frame_tensor(clip_idx, 0));
    for (int t = 0; t < T; ++t) {
      copy_into(batch.target, b * T + t, cache.frame_tensor(clip_idx, t0 + t));
      copy_into(batch.masked, b * T + t, cache.masked_frame_tensor(clip_idx, t0 + t));
      Tensor seg = audio::audio_segment(mel, t0 + t, mp);
      copy_into(batch.audio, b * T + t, seg.reshaped({1, seg.dim(0), seg.dim(1)}));
    }
    Tensor sseg = audio::audio_segment(mel, t0 + T / 2, mp);
    copy_into(batch.sync_audio, b, sseg.reshaped({1, sseg.dim(0), sseg.dim(1)}));
  }
  return batch;
}

WindowBatch sample_window_batch(ClipCache& cache, const std::vector<int>& pool, int batch_clips,
                                int T, Rng& rng) {
  require(!pool.empty(), ErrorCode::InvalidArgument, "empty clip pool");
  const int H = cache.clip(pool[0]).height, W = cache.clip(pool[0]).width;
  const audio::MelParams& mp = cache.config().mel;

  WindowBatch batch;
  batch.masked = Tensor({batch_clips * T, 3, H, W});
  batch.target = Tensor({batch_clips * T, 3, H, W});
  batch.audio = Tensor({batch_clips * T, 1, mp.segment_frames, mp.bins});
  batch.sync_audio = Tensor({batch_clips, 1, mp.segment_frames, mp.bins});
  batch.refs = Tensor({batch_clips, 3, H, W});

  for (int b = 0; b < batch_clips; ++b) {
    int idx = pool[static_cast<size_t>(rng.below(static_cast<int64_t>(pool.size())))];
    const synth::VideoClip& c = cache.clip(idx);
    int t0 = static_cast<int>(rng.below(c.frame_count() - T + 1));
    batch.clip_ids.push_back(idx);
    batch.starts.push_back(t0);
    const Tensor& m = cache.mel(idx);
    copy_into(batch.refs, b, cache.frame_tensor(idx, 0));
    for (int t = 0; t < T; ++t) {
      copy_into(batch.target, b * T + t, cache.frame_tensor(idx, t0 + t));
      copy_into(batch.masked, b * T + t, cache.masked_frame_tensor(idx, t0 + t));
      Tensor seg = audio::audio_segment(m, t0 + t, mp);
      copy_into(batch.audio, b * T + t, seg.reshaped({1, seg.dim(0), seg.dim(1)}));
    }
    Tensor sseg = audio::audio_segment(m, t0 + T / 2, mp);
    copy_into(batch.sync_audio, b, sseg.reshaped({1, sseg.dim(0), sseg.dim(1)}));
  }
  return batch;
}

}  // namespace lipsync::data

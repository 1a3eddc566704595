#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lipsync/config.hpp"
#include "lipsync/geometry.hpp"
#include "lipsync/synth.hpp"

namespace lipsync::data {

// Lazy-loading view over a generated corpus: decoded frames stay quantized in
// memory, mel spectrograms and pose-aware masks are computed once per clip.
// Single-writer: the training loop owns it; no internal locking.
class ClipCache {
 public:
  ClipCache(const std::string& corpus_dir, const cfg::GlobalConfig& cfg);

  const synth::CorpusManifest& manifest() const { return manifest_; }
  const cfg::GlobalConfig& config() const { return cfg_; }
  int clip_count() const { return static_cast<int>(manifest_.entries.size()); }
  std::vector<int> split(const std::string& name) const { return manifest_.split_indices(name); }

  const synth::VideoClip& clip(int idx);
  const Tensor& mel(int idx);
  const geom::LipMask& mask(int idx, int frame);  // pose-aware or rectangular per config
  Tensor frame_tensor(int idx, int t);            // [3,H,W]
  Tensor masked_frame_tensor(int idx, int t);

 private:
  std::string dir_;
  cfg::GlobalConfig cfg_;
  synth::CorpusManifest manifest_;
  std::vector<std::optional<synth::VideoClip>> clips_;
  std::vector<std::optional<Tensor>> mels_;
  std::vector<std::optional<geom::MeshTemplate>> templates_;
  std::vector<std::map<int, geom::LipMask>> masks_;
};

// One training batch: B clip windows of T consecutive frames.
struct WindowBatch {
  Tensor masked;      // [B*T, 3, H, W], clip-major
  Tensor target;      // [B*T, 3, H, W]
  Tensor audio;       // [B*T, 1, seg, bins]
  Tensor sync_audio;  // [B, 1, seg, bins], window spanning each clip's T frames
  Tensor refs;        // [B, 3, H, W], each clip's first frame
  std::vector<int> clip_ids;
  std::vector<int> starts;
};

WindowBatch sample_window_batch(ClipCache& cache, const std::vector<int>& pool, int batch_clips,
                                int frames_per_window, Rng& rng);

// Same window layout built from an explicit clip + external audio (driving).
WindowBatch window_batch_from_clip(ClipCache& cache, int clip_idx, const Tensor& mel,
                                   const std::vector<int>& starts, int frames_per_window);

}  // namespace lipsync::data

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "lipsync/data.hpp"
#include "lipsync/models.hpp"
#include "lipsync/sync_expert.hpp"
#include "lipsync/training.hpp"

namespace lipsync::adapt {

// Target-clip context prepared once: pose-aware masks, mel, frame tensors.
class TargetClip {
 public:
  TargetClip(synth::VideoClip clip, const cfg::GlobalConfig& cfg);

  const synth::VideoClip& clip() const { return clip_; }
  const Tensor& mel() const { return mel_; }
  int frame_count() const { return clip_.frame_count(); }
  Tensor frame(int t) const;
  Tensor masked_frame(int t) const;

 private:
  synth::VideoClip clip_;
  cfg::GlobalConfig cfg_;
  Tensor mel_;
  std::vector<geom::LipMask> masks_;
};

struct AdaptOptions {
  double lambda_reg = 0.1;  // 0 disables the regularizer entirely
  int steps = 500;
  double lr = 1e-4;
  int64_t seed = 1;
  int batch_windows = 4;
  // Windows start in [0, max_start]; -1 means the whole clip (evaluation may
  // hold out the tail by passing a smaller bound).
  int max_start = -1;
};

struct AdaptStep {
  double train_loss = 0.0;  // lambda_1 * perceptual + lambda_2 * sync on the target
  double regularizer = 0.0;
  double total = 0.0;
};

// Fine-tunes decoder parameters only (encoders, smoother, sync expert and
// w_avg stay frozen) on reconstruction of the target plus the sync
// regularizer driven by fresh training-corpus audio each step.
std::vector<AdaptStep> adapt(models::Generator& gen, const sync::SyncExpert& expert,
                             TargetClip& target, data::ClipCache& corpus,
                             const std::vector<int>& audio_pool, const AdaptOptions& opts,
                             std::ostream* log);

// Chunked full-sequence generation from a standalone clip context (masked
// target frames + reference) driven by an arbitrary mel. The one-frame halo
// reproduces full-sequence smoothing exactly.
std::vector<Tensor> generate_driven(models::Generator& gen, TargetClip& target,
                                    const Tensor& drive_mel, int max_frames = -1);

// The regularizer value for one sampled foreign-audio window batch: decodes
// target-context frames driven by that audio and scores them against it.
double sync_regularizer_value(models::Generator& gen, const sync::SyncExpert& expert,
                              TargetClip& target, const Tensor& audio_windows,
                              const Tensor& sync_audio_window, const std::vector<int>& starts);

// Mean sync distance of the target clip driven by each foreign mel in turn
// (held-out-audio generality measurement).
double cross_drive_sync_distance(models::Generator& gen, const sync::SyncExpert& expert,
                                 TargetClip& target, const std::vector<Tensor>& foreign_mels,
                                 int max_frames = -1);

// Reconstruction PSNR of the target clip over frames [from, to).
double target_reconstruction_psnr(models::Generator& gen, TargetClip& target, int from, int to);

// Frozen-set fingerprint: CRC of every non-decoder parameter (bitwise
// invariance check across adaptation).
uint64_t frozen_fingerprint(const models::Generator& gen);

}  // namespace lipsync::adapt

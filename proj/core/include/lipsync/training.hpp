#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "lipsync/data.hpp"
#include "lipsync/models.hpp"
#include "lipsync/sync_expert.hpp"

namespace lipsync::train {

// ---------------------------------------------------------------------------
// Checkpoints: a directory of little-endian float32 tensor files plus a
// manifest carrying shapes, CRC32 checksums, the config snapshot and step.

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointInfo {
  int format_version = kCheckpointFormatVersion;
  std::string kind;  // "generator" | "sync_expert"
  int64_t step = 0;
  std::string personalized_for;  // empty unless adapted
  cfg::GlobalConfig config;
};

void save_checkpoint(const std::string& dir, const nn::ParamStore& store,
                     const CheckpointInfo& info);
CheckpointInfo read_checkpoint_info(const std::string& dir);
// Fills an existing store; every tensor is validated against the manifest
// (shape + checksum) and the store must be covered exactly.
void load_checkpoint_params(const std::string& dir, nn::ParamStore& store);

struct LoadedGenerator {
  std::unique_ptr<models::Generator> generator;
  CheckpointInfo info;
};
LoadedGenerator load_generator_checkpoint(const std::string& dir);

struct LoadedSyncExpert {
  std::unique_ptr<sync::SyncExpert> expert;
  CheckpointInfo info;
};
LoadedSyncExpert load_sync_expert_checkpoint(const std::string& dir);

// ---------------------------------------------------------------------------
// Generator training

struct StepLosses {
  double perceptual = 0.0;
  double sync = 0.0;
  double total = 0.0;
};

// Crops the lower half of each generated frame and stacks each clip's T
// frames on channels: [B*T,3,H,W] -> [B,3T,H/2,W].
ad::Var stack_video_windows(ad::Var frames, int batch_clips, int frames_per_window, int height);

class Trainer {
 public:
  // expert may be null when lambda_sync == 0; it is frozen otherwise.
  Trainer(models::Generator& gen, const sync::SyncExpert* expert, data::ClipCache& cache,
          std::ostream* log);

  StepLosses step();
  StepLosses step_on_batch(const data::WindowBatch& batch);
  void run(int steps);
  int64_t steps_taken() const { return step_; }

 private:
  models::Generator& gen_;
  const sync::SyncExpert* expert_;
  data::ClipCache& cache_;
  std::vector<int> train_pool_;
  Rng rng_;
  nn::Adam opt_;
  std::ostream* log_;
  int64_t step_ = 0;
};

// Full-sequence generation with frozen parameters: pose-aware masked context
// from `clip_idx`, style path driven by `drive_mel` (the clip's own mel for
// reconstruction, foreign mel for cross-driving). Chunked with a one-frame
// halo, which reproduces the full-sequence smoothing exactly.
std::vector<Tensor> generate_sequence(models::Generator& gen, const sync::SyncExpert* unused,
                                      data::ClipCache& cache, int clip_idx, const Tensor& drive_mel,
                                      int max_frames = -1);

// ---------------------------------------------------------------------------
// Sync-expert training (contrastive, symmetric InfoNCE with temporal-offset
// hard negatives) and its evaluation helpers.

struct SyncTrainResult {
  std::vector<double> losses;
  double heldout_initial = 0.0;
  double heldout_final = 0.0;
};

SyncTrainResult train_sync_expert(sync::SyncExpert& expert, data::ClipCache& cache,
                                  const std::vector<int>& pool, int steps, int64_t seed,
                                  std::ostream* log);

// Matched-vs-mismatched AUC of sync_distance over held-out pairs (smaller
// distance ranks as "matched").
double sync_auc(sync::SyncExpert& expert, data::ClipCache& cache, const std::vector<int>& pool,
                int pairs, int64_t seed);

// ---------------------------------------------------------------------------
// Finite-difference check of the combined training objective.

struct GradCheckResult {
  double max_rel_err = 0.0;
  int checked = 0;
};
GradCheckResult gradient_check(const cfg::GlobalConfig& cfg, int samples, uint64_t seed);

}  // namespace lipsync::train

#pragma once

#include <string>
#include <vector>

#include "lipsync/autodiff.hpp"
#include "lipsync/config.hpp"
#include "lipsync/nn.hpp"

namespace lipsync::sync {

using ad::Var;
using nn::Binder;

// Two-tower audio-visual alignment scorer. The video tower sees T=5
// consecutive frames cropped to the lower half and stacked on channels; the
// audio tower sees the 16-frame mel window spanning them. Both emit unit-norm
// embeddings compared by cosine distance.
class SyncExpert {
 public:
  SyncExpert(const cfg::GlobalConfig& cfg, uint64_t init_seed);

  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  const cfg::GlobalConfig& config() const { return cfg_; }

  // frames: T entries, each [B,3,H,W]; crops the lower half and stacks.
  Var embed_video(Binder& bind, const std::vector<Var>& frames) const;
  // stacked [B, 3T, H/2, W] variant (the decoder-output path).
  Var embed_video_stacked(Binder& bind, Var stacked) const;
  // windows [B,1,16,bins].
  Var embed_audio(Binder& bind, Var windows) const;

  // Convenience for frozen evaluation (no gradients).
  Tensor embed_video_value(const std::vector<Tensor>& frames) const;
  Tensor embed_audio_value(const Tensor& window) const;

  int embed_dim() const { return embed_dim_; }

 private:
  Var tower(Binder& bind, Var x, const std::vector<nn::Param*>& w, const std::vector<nn::Param*>& b,
            nn::Param* head_w, nn::Param* head_b) const;

  cfg::GlobalConfig cfg_;
  nn::ParamStore store_;
  std::vector<nn::Param*> vconv_w_, vconv_b_, aconv_w_, aconv_b_;
  nn::Param* vhead_w_ = nullptr;
  nn::Param* vhead_b_ = nullptr;
  nn::Param* ahead_w_ = nullptr;
  nn::Param* ahead_b_ = nullptr;
  int embed_dim_ = 128, frames_ = 5, resolution_ = 64, bins_ = 80, seg_ = 16;
  double log_floor_ = 1e-5;
};

// 1 - cos(u, v); inputs are re-normalized, zero vectors rejected.
double sync_distance(const Tensor& u, const Tensor& v);
// Row-wise 1 - cos for [B,C] embeddings already unit-norm (training path).
Var sync_distance_rows(Var fv, Var fa);

struct SyncTrainStats {
  std::vector<double> losses;        // per step
  double initial_heldout_loss = 0;
  double final_heldout_loss = 0;
};

class ClipCache;  // forward declaration (data.hpp)

}  // namespace lipsync::sync

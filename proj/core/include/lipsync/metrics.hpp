#pragma once

#include <array>
#include <string>
#include <vector>

#include "lipsync/data.hpp"
#include "lipsync/models.hpp"
#include "lipsync/sync_expert.hpp"

namespace lipsync::metrics {

// -10 log10(MSE) over all pixels/channels of [C,H,W] frames in [0,1];
// identical frames cap at 99 dB.
double psnr(const Tensor& a, const Tensor& b);

// Structural similarity: 11x11 Gaussian window (sigma 1.5), C1=(0.01)^2,
// C2=(0.03)^2 for unit dynamic range, valid window positions, averaged over
// channels and positions.
double ssim(const Tensor& a, const Tensor& b);

// Mean Euclidean distance between matched keypoint sets (pixel units).
double lmd(const std::vector<std::array<double, 2>>& pred,
           const std::vector<std::array<double, 2>>& truth);

struct LseScores {
  double lse_d = 0.0;
  double lse_c = 0.0;
};

// Over aligned 5-frame windows: lse_d = mean sync distance; lse_c = mean of
// [cos at true alignment - median cos over audio offsets in -15..+15].
LseScores lse_scores(const std::vector<Tensor>& frames, const Tensor& mel,
                     const sync::SyncExpert& expert, int stride = 2);

struct ClipMetrics {
  std::string clip;
  double psnr = 0.0;
  double ssim = 0.0;
  double lmd = 0.0;
  double lse_d = 0.0;
  double lse_c = 0.0;
  double id_consistency = 0.0;
};

struct MetricReport {
  std::string checkpoint_id;
  std::string split;
  std::vector<ClipMetrics> clips;
  ClipMetrics mean;  // corpus means (clip field empty)

  std::string to_json_text() const;
};

struct EvalOptions {
  int max_clips = -1;        // cap the split size (-1: all)
  int id_sample_stride = 10; // frames between identity-recovery samples
};

// Reconstruction evaluation on a split: generate each clip from its own
// audio, compare against ground truth.
MetricReport evaluate(models::Generator& gen, const sync::SyncExpert& expert,
                      data::ClipCache& cache, const std::string& split, const EvalOptions& opts = {});

}  // namespace lipsync::metrics

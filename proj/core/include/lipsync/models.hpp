#pragma once

#include <array>
#include <string>
#include <vector>

#include "lipsync/autodiff.hpp"
#include "lipsync/config.hpp"
#include "lipsync/nn.hpp"

namespace lipsync::models {

using ad::Var;
using nn::Binder;

// Style-modulated convolution: a learned affine maps a D-dim style row to
// per-input-channel kernel scales; with demodulation each output-channel
// kernel is rescaled to unit norm. Batched via per-sample kernels.
class ModulatedConv2d {
 public:
  ModulatedConv2d() = default;
  ModulatedConv2d(nn::ParamStore& store, const std::string& prefix, Rng& rng, int style_dim,
                  int in_ch, int out_ch, int ksize, bool demodulate, bool modulated = true,
                  bool trainable = true);

  // x [N,C,H,W], style_rows [N,D] -> [N,O,H,W] (stride 1, same padding).
  Var apply(Binder& bind, Var x, Var style_rows) const;
  // Fused variant with an optional leaky-rectifier epilogue.
  Var apply_act(Binder& bind, Var x, Var style_rows, double act_slope, bool use_act) const;

  // Per-sample input-channel scales produced by the affine, [N,C].
  Var scales(Binder& bind, Var style_rows) const;

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  bool demodulate() const { return demodulate_; }
  bool modulated() const { return modulated_; }

  nn::Param* weight = nullptr;    // [O,C,k,k]
  nn::Param* bias = nullptr;      // [O]
  nn::Param* affine_w = nullptr;  // [C,D] (absent when not modulated)
  nn::Param* affine_b = nullptr;  // [C], init 1

 private:
  int in_ch_ = 0, out_ch_ = 0, ksize_ = 3, style_dim_ = 0;
  bool demodulate_ = true, modulated_ = true;
};

// Strided-conv pyramid over the masked frame; taps one feature map per
// decoder level, ordered coarse to fine, channels matched to the decoder.
class FaceEncoder {
 public:
  FaceEncoder() = default;
  FaceEncoder(nn::ParamStore& store, Rng& rng, const cfg::GlobalConfig& cfg);

  // frames [N,3,H,W] -> L maps, level l at resolution (start<<l+1) with the
  // decoder's block-l input channels.
  std::vector<Var> apply(Binder& bind, Var frames) const;

  const std::vector<int>& level_resolutions() const { return level_res_; }
  const std::vector<int>& level_channels() const { return level_ch_; }

 private:
  std::vector<nn::Param*> conv_w_, conv_b_;
  std::vector<int> level_res_, level_ch_;
  int resolution_ = 0, levels_ = 0;
};

// Reference frame -> 2L x D style code (w_ref).
class ReferenceEncoder {
 public:
  ReferenceEncoder() = default;
  ReferenceEncoder(nn::ParamStore& store, Rng& rng, const cfg::GlobalConfig& cfg);
  Var apply(Binder& bind, Var frames) const;  // [B,3,H,W] -> [B,2L,D]

 private:
  std::vector<nn::Param*> conv_w_, conv_b_;
  nn::Param* head_w_ = nullptr;
  nn::Param* head_b_ = nullptr;
  int resolution_ = 0, rows_ = 0, style_dim_ = 0;
};

// One 16-frame mel window -> 2L x D deviation code (a_t), per-frame.
class AudioEncoder {
 public:
  AudioEncoder() = default;
  AudioEncoder(nn::ParamStore& store, Rng& rng, const cfg::GlobalConfig& cfg);
  Var apply(Binder& bind, Var mel_windows) const;  // [N,1,16,bins] -> [N,2L,D]

 private:
  std::vector<nn::Param*> conv_w_, conv_b_;
  nn::Param* head_w_ = nullptr;
  nn::Param* head_b_ = nullptr;
  int rows_ = 0, style_dim_ = 0, seg_frames_ = 0, bins_ = 0;
  double log_floor_ = 1e-5;
};

// w_t = w_ref + a_t (the latent composition contract).
Var compose_style(Var w_ref, Var a_t);

// Moving-average latent smoothing: 3-tap weighted average over time plus a
// per-row two-layer channelwise transform (zero-initialized, identity skip).
class LatentSmoother {
 public:
  LatentSmoother() = default;
  LatentSmoother(nn::ParamStore& store, Rng& rng, const cfg::GlobalConfig& cfg);

  // a_codes [B,T,R,D], w_ref [B,R,D], w_avg [R,D] -> smoothed codes [B,T,R,D].
  // With smoothing disabled (ablation) returns w_ref + a_t + w_avg directly.
  Var apply(Binder& bind, Var a_codes, Var w_ref, Var w_avg) const;

 private:
  std::vector<nn::Param*> w1_, b1_, w2_, b2_;
  std::array<double, 3> alpha_{0.25, 0.5, 0.25};
  int rows_ = 0, style_dim_ = 0, hidden_ = 0;
  bool enabled_ = true, literal_ = false;
};

// Style-modulated image decoder with style-aware masked fusion at the head of
// every block.
class Decoder {
 public:
  Decoder() = default;
  Decoder(nn::ParamStore& store, Rng& rng, const cfg::GlobalConfig& cfg);

  // styles [N,2L,D], pyramid: L maps coarse->fine -> frames [N,3,H,W] in [0,1].
  Var apply(Binder& bind, Var styles, const std::vector<Var>& pyramid) const;

  // S_t^l for block l from the encoded feature and the block's first style row.
  Var fusion_mask(Binder& bind, int block, Var enc_feat, Var style_row) const;

  int blocks() const { return static_cast<int>(conv1_.size()); }
  int start_resolution() const { return start_res_; }
  const std::vector<int>& channels() const { return channels_; }
  const ModulatedConv2d& samf_conv(int block) const { return samf_[static_cast<size_t>(block)]; }
  const ModulatedConv2d& conv1(int block) const { return conv1_[static_cast<size_t>(block)]; }

 private:
  nn::Param* start_ = nullptr;  // [C0, s, s] learned constant
  std::vector<ModulatedConv2d> samf_, conv1_, conv2_;
  nn::Param* to_rgb_w_ = nullptr;
  nn::Param* to_rgb_b_ = nullptr;
  std::vector<int> channels_;
  int start_res_ = 4, style_dim_ = 0;
};

// S*enc + (1-S)*gen, S broadcast over channels.
Var fuse(Var fusion_mask, Var enc_feat, Var gen_feat);

// Frozen fixed-seed random conv pyramid: the perceptual feature extractor.
// Multi-scale distance = sum over average-pooled scales and layers of the
// per-sample l2 feature distance, averaged over the batch.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(nn::ParamStore& store, Rng& rng, int channels, int scales);

  Var loss(Binder& bind, Var x, Var y) const;  // x,y [N,3,H,W]
  std::vector<Var> features(Binder& bind, Var x) const;
  int scales() const { return scales_; }
  int layers() const { return static_cast<int>(conv_w_.size()); }

 private:
  std::vector<nn::Param*> conv_w_, conv_b_;
  int scales_ = 3;
};

// The full generator: three encoders, smoother, decoder, and the running
// average code. One ParamStore owns every tensor (checkpoint unit).
class Generator {
 public:
  Generator(const cfg::GlobalConfig& cfg, uint64_t init_seed);

  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  const cfg::GlobalConfig& config() const { return cfg_; }

  const FaceEncoder& face_encoder() const { return face_; }
  const ReferenceEncoder& reference_encoder() const { return ref_; }
  const AudioEncoder& audio_encoder() const { return audio_; }
  const LatentSmoother& smoother() const { return mals_; }
  const Decoder& decoder() const { return decoder_; }
  const FeatureExtractor& perceptual() const { return perceptual_; }

  nn::Param& w_avg() { return *w_avg_; }
  const nn::Param& w_avg() const { return *w_avg_; }

  // Update the running average code from a batch of composed codes [N,2L,D].
  void update_w_avg(const Tensor& composed_batch);

  // Full forward for a window batch: masked frames [B*T,3,H,W] (clip-major),
  // audio windows [B*T,1,16,bins], references [B,3,H,W].
  struct WindowForward {
    Var frames;    // [B*T,3,H,W]
    Var composed;  // [B*T,2L,D] w_t codes (pre-smoothing)
    Var smoothed;  // [B*T,2L,D]
  };
  WindowForward forward_window(Binder& bind, Var masked_frames, Var audio_windows, Var refs,
                               int batch_clips, int frames_per_clip) const;

  // Decoder-only parameter list (adaptation trains exactly these).
  std::vector<nn::Param*> decoder_params();
  std::vector<nn::Param*> trainable_params();

 private:
  cfg::GlobalConfig cfg_;
  nn::ParamStore store_;
  FaceEncoder face_;
  ReferenceEncoder ref_;
  AudioEncoder audio_;
  LatentSmoother mals_;
  Decoder decoder_;
  FeatureExtractor perceptual_;
  nn::Param* w_avg_ = nullptr;
};

}  // namespace lipsync::models

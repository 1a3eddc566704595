#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "lipsync/geometry.hpp"
#include "lipsync/image_io.hpp"
#include "lipsync/mel.hpp"
#include "lipsync/tensor.hpp"

namespace lipsync::synth {

struct IdentityParams {
  double skin_hue = 0.5;     // [0,1], blend between two skin anchors
  double face_aspect = 1.0;  // [0.7, 1.3]
  double mouth_width = 0.25; // [0.15, 0.35] frame fraction
  double eye_spacing = 0.3;  // [0.2, 0.4] frame fraction
  int64_t seed = 0;

  void validate() const;
};

IdentityParams sample_identity(int64_t seed);

struct FrameMeta {
  geom::PoseParams pose;
  std::vector<std::array<double, 2>> mouth_keypoints;  // pixel units, M = 8
  std::array<double, 2> nose;                          // pixel units
  double openness = 0.0;                               // [0,1]
};

struct VideoClip {
  int width = 64, height = 64;
  int fps = 25, sample_rate = 16000;
  double duration = 0.0;
  IdentityParams identity;
  std::vector<io::Image8> frames;
  std::vector<double> waveform;
  std::vector<FrameMeta> meta;

  int frame_count() const { return static_cast<int>(frames.size()); }
};

inline constexpr int kMouthKeypoints = 8;

// Procedural clip: ellipse-head face whose mouth opening tracks the smoothed
// RMS envelope of a generated multi-sine waveform; head pose follows a smooth
// bounded random walk. Bit-deterministic in (identity, duration, seed).
VideoClip render_clip(const IdentityParams& identity, double duration_s, int64_t seed,
                      int resolution = 64, int expression_dim = 8);

// Single frame render (also the template-matching reference for metrics).
Tensor render_frame(const IdentityParams& identity, const geom::PoseParams& pose, double openness,
                    int height, int width);

// Mouth keypoints / nose position for given state, in pixel units.
std::vector<std::array<double, 2>> mouth_keypoints_px(const IdentityParams& identity,
                                                      const geom::PoseParams& pose, double openness,
                                                      int height, int width);
std::array<double, 2> nose_px(const IdentityParams& identity, const geom::PoseParams& pose,
                              int height, int width);

// The pose-aware-mask mesh template for one identity: lip/jaw vertices over
// the mouth region (plus a cheek/upper-face ring that selection must drop),
// with blendshape 0 as the jaw-open axis.
geom::MeshTemplate build_mask_template(const IdentityParams& identity, int expression_dim = 8);

// Analytic localizer: recover mouth openness (and optionally mouth width) from
// a generated frame by template matching over the renderer's mouth shapes.
struct MouthFit {
  double openness = 0.0;
  double mouth_width = 0.0;
};
MouthFit fit_mouth(const Tensor& frame, const IdentityParams& identity,
                   const geom::PoseParams& pose, bool fit_width);

// Skin hue recovered from cheek samples (inverse of the skin color blend).
double recover_skin_hue(const Tensor& frame, const IdentityParams& identity,
                        const geom::PoseParams& pose);

// Per-frame RMS envelope of a waveform (smoothed, max-normalized) -- the
// ground-truth openness construction, exposed for tests and audio-driving.
std::vector<double> openness_from_waveform(const std::vector<double>& waveform, int frame_count,
                                           int samples_per_frame);

// ---------------------------------------------------------------------------
// Clip directory layout: frames/%05d.png, masks/%05d.png, audio.wav, meta.json

void write_clip(const VideoClip& clip, const std::string& dir);
VideoClip read_clip(const std::string& dir);

// ---------------------------------------------------------------------------
// Corpus: corpus.json manifest + one subdirectory per clip.

struct CorpusEntry {
  std::string dir;       // relative to the corpus root
  int64_t clip_seed = 0;
  int identity_index = 0;
  std::string split;     // "train" | "test"
};

struct CorpusManifest {
  int64_t seed = 0;
  int identities = 64;
  double duration = 4.0;
  int resolution = 64;
  std::vector<CorpusEntry> entries;

  std::vector<int> split_indices(const std::string& split) const;
};

CorpusManifest generate_corpus(const std::string& out_dir, int clips, int64_t seed,
                               double duration = 4.0, int identities = 64, int resolution = 64,
                               int expression_dim = 8);
CorpusManifest load_corpus(const std::string& dir);

}  // namespace lipsync::synth

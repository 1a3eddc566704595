#pragma once

#include <vector>

#include "lipsync/tensor.hpp"

namespace lipsync::audio {

struct MelParams {
  int sample_rate = 16000;
  int window = 800;    // samples
  int hop = 200;       // samples -> 80 mel frames / s
  int bins = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-5;
  int segment_frames = 16;  // mel frames per video-frame window (0.2 s)
};

// Log mel spectrogram, grid [F, bins]. F = 1 + floor((n - window) / hop).
// Magnitude STFT with a periodic Hann window, HTK-scale triangular filters
// (no area normalization), natural log with the configured floor.
Tensor waveform_to_mel(const std::vector<double>& waveform, const MelParams& p = {});

int mel_frame_count(int64_t samples, const MelParams& p = {});

// 16-mel-frame window aligned to video frame t (25 fps): centered at
// round(t * 80/25), columns [c-8, c+8), zero-padded outside the clip.
Tensor audio_segment(const Tensor& mel, int frame_index, const MelParams& p = {});

// HTK mel scale helpers (exposed for tests).
double hz_to_mel(double hz);
double mel_to_hz(double mel);
// Triangle weight of filter b (0-based) at frequency hz.
double mel_filter_weight(int b, double hz, const MelParams& p = {});

}  // namespace lipsync::audio

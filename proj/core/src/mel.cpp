#include "lipsync/mel.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>
#include <vector>

namespace lipsync::audio {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

// Filter corner frequencies: bins+2 points evenly spaced on the mel scale.
std::vector<double> filter_corners_hz(const MelParams& p) {
  std::vector<double> f(static_cast<size_t>(p.bins) + 2);
  double m0 = hz_to_mel(p.fmin), m1 = hz_to_mel(p.fmax);
  for (int j = 0; j < p.bins + 2; ++j)
    f[static_cast<size_t>(j)] = mel_to_hz(m0 + (m1 - m0) * j / (p.bins + 1));
  return f;
}

struct FftPlan {
  fftw_plan plan = nullptr;
  int n = 0;
};

std::mutex plan_mutex;
FftPlan shared_plan;

fftw_plan get_plan(int n) {
  std::lock_guard<std::mutex> lock(plan_mutex);
  if (shared_plan.plan == nullptr || shared_plan.n != n) {
    if (shared_plan.plan) fftw_destroy_plan(shared_plan.plan);
    std::vector<double> in(static_cast<size_t>(n));
    std::vector<fftw_complex> out(static_cast<size_t>(n) / 2 + 1);
    shared_plan.plan =
        fftw_plan_dft_r2c_1d(n, in.data(), out.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
    shared_plan.n = n;
  }
  return shared_plan.plan;
}

}  // namespace

int mel_frame_count(int64_t samples, const MelParams& p) {
  require(samples >= p.window, ErrorCode::InvalidArgument,
          "waveform shorter than one analysis window");
  return 1 + static_cast<int>((samples - p.window) / p.hop);
}

double mel_filter_weight(int b, double hz, const MelParams& p) {
  std::vector<double> f = filter_corners_hz(p);
  double lo = f[static_cast<size_t>(b)], mid = f[static_cast<size_t>(b) + 1],
         hi = f[static_cast<size_t>(b) + 2];
  if (hz <= lo || hz >= hi) return 0.0;
  return hz <= mid ? (hz - lo) / (mid - lo) : (hi - hz) / (hi - mid);
}

Tensor waveform_to_mel(const std::vector<double>& waveform, const MelParams& p) {
  int F = mel_frame_count(static_cast<int64_t>(waveform.size()), p);
  const int n = p.window;
  const int nbins = n / 2 + 1;

  // Periodic Hann.
  std::vector<double> hann(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) hann[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / n));

  // Sparse filterbank: per mel bin, the contiguous FFT-bin range and weights.
  std::vector<double> corners = filter_corners_hz(p);
  struct Filter {
    int k0;
    std::vector<double> w;
  };
  std::vector<Filter> filters(static_cast<size_t>(p.bins));
  double bin_hz = static_cast<double>(p.sample_rate) / n;
  for (int b = 0; b < p.bins; ++b) {
    double lo = corners[static_cast<size_t>(b)], mid = corners[static_cast<size_t>(b) + 1],
           hi = corners[static_cast<size_t>(b) + 2];
    int k0 = std::max(0, static_cast<int>(std::floor(lo / bin_hz)) + 1);
    int k1 = std::min(nbins - 1, static_cast<int>(std::ceil(hi / bin_hz)) - 1);
    Filter& flt = filters[static_cast<size_t>(b)];
    flt.k0 = k0;
    for (int k = k0; k <= k1; ++k) {
      double hz = k * bin_hz;
      double w = hz <= lo || hz >= hi ? 0.0
                 : (hz <= mid ? (hz - lo) / (mid - lo) : (hi - hz) / (hi - mid));
      flt.w.push_back(w);
    }
  }

  fftw_plan plan = get_plan(n);
  std::vector<double> frame(static_cast<size_t>(n));
  std::vector<fftw_complex> spec(static_cast<size_t>(nbins));
  std::vector<double> mag(static_cast<size_t>(nbins));

  Tensor mel({F, p.bins});
  for (int f = 0; f < F; ++f) {
    const double* src = waveform.data() + static_cast<int64_t>(f) * p.hop;
    for (int i = 0; i < n; ++i) frame[static_cast<size_t>(i)] = src[i] * hann[static_cast<size_t>(i)];
    fftw_execute_dft_r2c(plan, frame.data(), spec.data());
    for (int k = 0; k < nbins; ++k)
      mag[static_cast<size_t>(k)] = std::hypot(spec[static_cast<size_t>(k)][0], spec[static_cast<size_t>(k)][1]);
    for (int b = 0; b < p.bins; ++b) {
      const Filter& flt = filters[static_cast<size_t>(b)];
      double acc = 0.0;
      for (size_t i = 0; i < flt.w.size(); ++i)
        acc += flt.w[i] * mag[static_cast<size_t>(flt.k0) + i];
      mel.at({f, b}) = std::log(std::max(acc, p.log_floor));
    }
  }
  return mel;
}

Tensor audio_segment(const Tensor& mel, int frame_index, const MelParams& p) {
  require(frame_index >= 0, ErrorCode::InvalidArgument, "audio_segment: negative frame index");
  require(mel.rank() == 2 && mel.dim(1) == p.bins, ErrorCode::InvalidArgument,
          "audio_segment: bad mel shape");
  const int F = mel.dim(0);
  const int half = p.segment_frames / 2;
  // 80 mel frames/s over 25 fps video = 3.2 mel frames per video frame.
  int center = static_cast<int>(std::llround(frame_index * 3.2));
  Tensor seg({p.segment_frames, p.bins});
  for (int i = 0; i < p.segment_frames; ++i) {
    int srcrow = center - half + i;
    for (int b = 0; b < p.bins; ++b)
      seg.at({i, b}) = (srcrow < 0 || srcrow >= F) ? 0.0 : mel.at({srcrow, b});
  }
  return seg;
}

}  // namespace lipsync::audio

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lipsync/geometry.hpp"
#include "lipsync/tensor.hpp"

namespace lipsync::io {

// 8-bit interleaved RGB image, row-major.
struct Image8 {
  int h = 0, w = 0;
  std::vector<uint8_t> rgb;  // h*w*3

  uint8_t at(int r, int c, int ch) const { return rgb[(static_cast<size_t>(r) * w + c) * 3 + ch]; }
};

void write_png_rgb8(const std::string& path, const Image8& img);
Image8 read_png_rgb8(const std::string& path);

// 1-bit grayscale PNG for masks.
void write_png_mask(const std::string& path, const geom::LipMask& mask);
geom::LipMask read_png_mask(const std::string& path);

// Frame <-> image conversions; frames are [3,H,W] doubles in [0,1].
Image8 frame_to_image(const Tensor& frame);
Tensor image_to_frame(const Image8& img);

// 16-bit PCM mono WAV.
void write_wav_mono16(const std::string& path, const std::vector<double>& samples, int sample_rate);
std::vector<double> read_wav_mono16(const std::string& path, int expected_rate);

}  // namespace lipsync::io

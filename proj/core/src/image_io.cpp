#include "lipsync/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

namespace lipsync::io {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

struct PngWrite {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWrite() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

struct PngRead {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngRead() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

void write_png(const std::string& path, int h, int w, int bit_depth, int color_type,
               const std::vector<png_bytep>& rows) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  require(f != nullptr, ErrorCode::RuntimeFailure, "cannot open PNG for write: " + path);
  PngWrite ctx;
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(ctx.png != nullptr, ErrorCode::RuntimeFailure, "png_create_write_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  require(ctx.info != nullptr, ErrorCode::RuntimeFailure, "png_create_info_struct failed");
  if (setjmp(png_jmpbuf(ctx.png))) fail(ErrorCode::RuntimeFailure, "PNG write error: " + path);
  png_init_io(ctx.png, f.get());
  png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);
  png_write_image(ctx.png, const_cast<png_bytep*>(rows.data()));
  png_write_end(ctx.png, nullptr);
}

}  // namespace

void write_png_rgb8(const std::string& path, const Image8& img) {
  require(img.h > 0 && img.w > 0 && img.rgb.size() == static_cast<size_t>(img.h) * img.w * 3,
          ErrorCode::InvalidArgument, "write_png_rgb8: bad image");
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (int r = 0; r < img.h; ++r)
    rows[static_cast<size_t>(r)] =
        const_cast<png_bytep>(img.rgb.data() + static_cast<size_t>(r) * img.w * 3);
  write_png(path, img.h, img.w, 8, PNG_COLOR_TYPE_RGB, rows);
}

Image8 read_png_rgb8(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  require(f != nullptr, ErrorCode::CorruptClip, "missing PNG: " + path);
  PngRead ctx;
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(ctx.png != nullptr, ErrorCode::RuntimeFailure, "png_create_read_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  require(ctx.info != nullptr, ErrorCode::RuntimeFailure, "png_create_info_struct failed");
  if (setjmp(png_jmpbuf(ctx.png))) fail(ErrorCode::CorruptClip, "PNG read error: " + path);
  png_init_io(ctx.png, f.get());
  png_read_info(ctx.png, ctx.info);
  png_uint_32 w = png_get_image_width(ctx.png, ctx.info);
  png_uint_32 h = png_get_image_height(ctx.png, ctx.info);
  int bit_depth = png_get_bit_depth(ctx.png, ctx.info);
  int color = png_get_color_type(ctx.png, ctx.info);
  require(bit_depth == 8 && color == PNG_COLOR_TYPE_RGB, ErrorCode::CorruptClip,
          "expected 8-bit RGB PNG: " + path);
  Image8 img;
  img.h = static_cast<int>(h);
  img.w = static_cast<int>(w);
  img.rgb.assign(static_cast<size_t>(img.h) * img.w * 3, 0);
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (int r = 0; r < img.h; ++r)
    rows[static_cast<size_t>(r)] = img.rgb.data() + static_cast<size_t>(r) * img.w * 3;
  png_read_image(ctx.png, rows.data());
  png_read_end(ctx.png, nullptr);
  return img;
}

void write_png_mask(const std::string& path, const geom::LipMask& mask) {
  require(mask.h > 0 && mask.w > 0, ErrorCode::InvalidArgument, "write_png_mask: empty mask");
  int stride = (mask.w + 7) / 8;
  std::vector<uint8_t> packed(static_cast<size_t>(mask.h) * stride, 0);
  for (int r = 0; r < mask.h; ++r)
    for (int c = 0; c < mask.w; ++c)
      if (mask.at(r, c))
        packed[static_cast<size_t>(r) * stride + c / 8] |= static_cast<uint8_t>(0x80u >> (c % 8));
  std::vector<png_bytep> rows(static_cast<size_t>(mask.h));
  for (int r = 0; r < mask.h; ++r)
    rows[static_cast<size_t>(r)] = packed.data() + static_cast<size_t>(r) * stride;
  write_png(path, mask.h, mask.w, 1, PNG_COLOR_TYPE_GRAY, rows);
}

geom::LipMask read_png_mask(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  require(f != nullptr, ErrorCode::CorruptClip, "missing mask PNG: " + path);
  PngRead ctx;
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(ctx.png != nullptr, ErrorCode::RuntimeFailure, "png_create_read_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  require(ctx.info != nullptr, ErrorCode::RuntimeFailure, "png_create_info_struct failed");
  if (setjmp(png_jmpbuf(ctx.png))) fail(ErrorCode::CorruptClip, "PNG read error: " + path);
  png_init_io(ctx.png, f.get());
  png_read_info(ctx.png, ctx.info);
  require(png_get_bit_depth(ctx.png, ctx.info) == 1 &&
              png_get_color_type(ctx.png, ctx.info) == PNG_COLOR_TYPE_GRAY,
          ErrorCode::CorruptClip, "expected 1-bit gray PNG: " + path);
  geom::LipMask mask;
  mask.h = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
  mask.w = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
  int stride = (mask.w + 7) / 8;
  std::vector<uint8_t> packed(static_cast<size_t>(mask.h) * stride, 0);
  std::vector<png_bytep> rows(static_cast<size_t>(mask.h));
  for (int r = 0; r < mask.h; ++r)
    rows[static_cast<size_t>(r)] = packed.data() + static_cast<size_t>(r) * stride;
  png_read_image(ctx.png, rows.data());
  png_read_end(ctx.png, nullptr);
  mask.grid.assign(static_cast<size_t>(mask.h) * mask.w, 0);
  for (int r = 0; r < mask.h; ++r)
    for (int c = 0; c < mask.w; ++c)
      mask.at(r, c) = (packed[static_cast<size_t>(r) * stride + c / 8] >> (7 - c % 8)) & 1u;
  return mask;
}

Image8 frame_to_image(const Tensor& frame) {
  require(frame.rank() == 3 && frame.dim(0) == 3, ErrorCode::InvalidArgument,
          "frame_to_image: need [3,H,W]");
  Image8 img;
  img.h = frame.dim(1);
  img.w = frame.dim(2);
  img.rgb.assign(static_cast<size_t>(img.h) * img.w * 3, 0);
  int64_t plane = static_cast<int64_t>(img.h) * img.w;
  for (int ch = 0; ch < 3; ++ch) {
    const double* src = frame.data() + ch * plane;
    for (int64_t i = 0; i < plane; ++i) {
      double v = clamp01(src[i]);
      img.rgb[static_cast<size_t>(i) * 3 + ch] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
  }
  return img;
}

Tensor image_to_frame(const Image8& img) {
  Tensor frame({3, img.h, img.w});
  int64_t plane = static_cast<int64_t>(img.h) * img.w;
  for (int ch = 0; ch < 3; ++ch) {
    double* dst = frame.data() + ch * plane;
    for (int64_t i = 0; i < plane; ++i)
      dst[i] = static_cast<double>(img.rgb[static_cast<size_t>(i) * 3 + ch]) / 255.0;
  }
  return frame;
}

namespace {

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(static_cast<uint8_t>(v & 0xff));
  b.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  b.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  b.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v & 0xff));
  b.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
}

uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t get_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

void write_wav_mono16(const std::string& path, const std::vector<double>& samples, int sample_rate) {
  std::vector<uint8_t> buf;
  uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
  buf.insert(buf.end(), {'R', 'I', 'F', 'F'});
  put_u32(buf, 36 + data_bytes);
  buf.insert(buf.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(buf, 16);
  put_u16(buf, 1);  // PCM
  put_u16(buf, 1);  // mono
  put_u32(buf, static_cast<uint32_t>(sample_rate));
  put_u32(buf, static_cast<uint32_t>(sample_rate * 2));
  put_u16(buf, 2);
  put_u16(buf, 16);
  buf.insert(buf.end(), {'d', 'a', 't', 'a'});
  put_u32(buf, data_bytes);
  for (double s : samples) {
    double v = s < -1.0 ? -1.0 : (s > 1.0 ? 1.0 : s);
    auto q = static_cast<int16_t>(std::lround(v * 32767.0));
    put_u16(buf, static_cast<uint16_t>(q));
  }
  FilePtr f(std::fopen(path.c_str(), "wb"));
  require(f != nullptr, ErrorCode::RuntimeFailure, "cannot open WAV for write: " + path);
  require(std::fwrite(buf.data(), 1, buf.size(), f.get()) == buf.size(), ErrorCode::RuntimeFailure,
          "short WAV write: " + path);
}

std::vector<double> read_wav_mono16(const std::string& path, int expected_rate) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  require(f != nullptr, ErrorCode::CorruptClip, "missing WAV: " + path);
  std::fseek(f.get(), 0, SEEK_END);
  long len = std::ftell(f.get());
  std::fseek(f.get(), 0, SEEK_SET);
  require(len >= 44, ErrorCode::CorruptClip, "WAV too short: " + path);
  std::vector<uint8_t> buf(static_cast<size_t>(len));
  require(std::fread(buf.data(), 1, buf.size(), f.get()) == buf.size(), ErrorCode::CorruptClip,
          "WAV read error: " + path);
  require(std::memcmp(buf.data(), "RIFF", 4) == 0 && std::memcmp(buf.data() + 8, "WAVE", 4) == 0,
          ErrorCode::CorruptClip, "not a WAV file: " + path);
  // Walk chunks; accept only 16-bit mono PCM at the expected rate.
  size_t pos = 12;
  int rate = 0, channels = 0, bits = 0;
  size_t data_off = 0, data_len = 0;
  while (pos + 8 <= buf.size()) {
    uint32_t sz = get_u32(buf.data() + pos + 4);
    if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0 && pos + 8 + 16 <= buf.size()) {
      const uint8_t* p = buf.data() + pos + 8;
      require(get_u16(p) == 1, ErrorCode::InvalidArgument, "WAV must be PCM: " + path);
      channels = get_u16(p + 2);
      rate = static_cast<int>(get_u32(p + 4));
      bits = get_u16(p + 14);
    } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
      data_off = pos + 8;
      data_len = sz;
    }
    pos += 8 + sz + (sz & 1);
  }
  require(channels == 1 && bits == 16, ErrorCode::InvalidArgument,
          "WAV must be 16-bit mono: " + path);
  require(rate == expected_rate, ErrorCode::InvalidArgument,
          "WAV sample rate must be " + std::to_string(expected_rate) + ": " + path);
  require(data_off > 0 && data_off + data_len <= buf.size(), ErrorCode::CorruptClip,
          "WAV data chunk missing or truncated: " + path);
  std::vector<double> out(data_len / 2);
  for (size_t i = 0; i < out.size(); ++i) {
    auto q = static_cast<int16_t>(get_u16(buf.data() + data_off + 2 * i));
    out[i] = static_cast<double>(q) / 32767.0;
  }
  return out;
}

}  // namespace lipsync::io

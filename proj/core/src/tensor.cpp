#include "lipsync/tensor.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <thread>

namespace lipsync {

namespace {
int worker_count = 0;
}

void set_worker_threads(int n) { worker_count = n; }

int worker_threads() {
  if (worker_count > 0) return worker_count;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw > 8 ? 8 : hw);
}

bool Tensor::all_finite() const {
  for (int64_t i = 0; i < size(); ++i) {
    if (!std::isfinite(data_[static_cast<size_t>(i)])) return false;
  }
  return true;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (int64_t i = 0; i < size(); ++i) {
    double a = std::fabs(data_[static_cast<size_t>(i)]);
    if (a > m) m = a;
  }
  return m;
}

namespace {

std::vector<float> to_f32(const Tensor& t) {
  std::vector<float> buf(static_cast<size_t>(t.size()));
  for (int64_t i = 0; i < t.size(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(t[i]);
  return buf;
}

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

void write_tensor_f32(const std::string& path, const Tensor& t) {
  std::vector<float> buf = to_f32(t);
  FilePtr f(std::fopen(path.c_str(), "wb"));
  require(f != nullptr, ErrorCode::RuntimeFailure, "cannot open for write: " + path);
  size_t wrote = buf.empty() ? 0 : std::fwrite(buf.data(), sizeof(float), buf.size(), f.get());
  require(wrote == buf.size(), ErrorCode::RuntimeFailure, "short write: " + path);
}

Tensor read_tensor_f32(const std::string& path, const std::vector<int>& shape) {
  int64_t n = Tensor::count(shape);
  FilePtr f(std::fopen(path.c_str(), "rb"));
  require(f != nullptr, ErrorCode::CorruptCheckpoint, "missing tensor file: " + path);
  std::vector<float> buf(static_cast<size_t>(n));
  size_t got = n == 0 ? 0 : std::fread(buf.data(), sizeof(float), buf.size(), f.get());
  require(got == buf.size(), ErrorCode::CorruptCheckpoint, "truncated tensor file: " + path);
  // Reject trailing bytes as corruption too.
  char probe;
  require(std::fread(&probe, 1, 1, f.get()) == 0, ErrorCode::CorruptCheckpoint,
          "tensor file larger than manifest shape: " + path);
  Tensor t(shape);
  for (int64_t i = 0; i < n; ++i) t[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
  return t;
}

uint32_t tensor_crc32_f32(const Tensor& t) {
  std::vector<float> buf = to_f32(t);
  uLong crc = crc32(0L, Z_NULL, 0);
  if (!buf.empty()) {
    crc = crc32(crc, reinterpret_cast<const Bytef*>(buf.data()),
                static_cast<uInt>(buf.size() * sizeof(float)));
  }
  return static_cast<uint32_t>(crc);
}

}  // namespace lipsync

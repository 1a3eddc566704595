#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "lipsync/common.hpp"

namespace lipsync {

// Dense row-major float64 tensor, rank 0..4. Computation is float64
// throughout; float32 appears only in checkpoint files.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)), data_(count(shape_), 0.0) {}
  Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(static_cast<int64_t>(data_.size()) == count(shape_), ErrorCode::InvalidArgument,
            "tensor data size does not match shape");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }
  static Tensor scalar(double v) { return Tensor({}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(std::initializer_list<int> idx) { return data_[static_cast<size_t>(offset(idx))]; }
  double at(std::initializer_list<int> idx) const { return data_[static_cast<size_t>(offset(idx))]; }

  // Same data, new shape (element count must match).
  Tensor reshaped(std::vector<int> shape) const {
    require(count(shape) == size(), ErrorCode::InvalidArgument, "reshape changes element count");
    return Tensor(std::move(shape), data_);
  }

  void fill(double v) {
    for (auto& x : data_) x = v;
  }

  bool all_finite() const;
  double max_abs() const;

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }

 private:
  int64_t offset(std::initializer_list<int> idx) const {
    int64_t off = 0;
    size_t i = 0;
    for (int v : idx) {
      off = off * shape_[i] + v;
      ++i;
    }
    return off;
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

// Little-endian float32 raw tensor files (the checkpoint wire format).
void write_tensor_f32(const std::string& path, const Tensor& t);
Tensor read_tensor_f32(const std::string& path, const std::vector<int>& shape);
uint32_t tensor_crc32_f32(const Tensor& t);

}  // namespace lipsync

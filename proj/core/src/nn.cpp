#include "lipsync/nn.hpp"

#include <cmath>

namespace lipsync::nn {

Tensor conv_init(Rng& rng, int out_ch, int in_ch, int kh, int kw, double neg_slope) {
  double fan_in = static_cast<double>(in_ch) * kh * kw;
  double gain = std::sqrt(2.0 / (1.0 + neg_slope * neg_slope));
  double std = gain / std::sqrt(fan_in);
  Tensor w({out_ch, in_ch, kh, kw});
  for (int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, std);
  return w;
}

Tensor linear_init(Rng& rng, int out_dim, int in_dim) {
  double std = 1.0 / std::sqrt(static_cast<double>(in_dim));
  Tensor w({out_dim, in_dim});
  for (int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, std);
  return w;
}

}  // namespace lipsync::nn

#include "lipsync/sync_expert.hpp"

#include <cmath>

namespace lipsync::sync {

using namespace lipsync::ad;

SyncExpert::SyncExpert(const cfg::GlobalConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  embed_dim_ = cfg.sync.embed_dim;
  frames_ = cfg.frames_per_window;
  resolution_ = cfg.resolution;
  bins_ = cfg.mel.bins;
  seg_ = cfg.mel.segment_frames;
  log_floor_ = cfg.mel.log_floor;

  Rng rng(init_seed ^ 0x5ca1ab1eull);
  const int vwidths[3] = {24, 32, 48};
  int in_ch = 3 * frames_;
  for (int i = 0; i < 3; ++i) {
    std::string name = "video.conv" + std::to_string(i);
    vconv_w_.push_back(&store_.create(name + ".weight", nn::conv_init(rng, vwidths[i], in_ch, 3, 3)));
    vconv_b_.push_back(&store_.create(name + ".bias", Tensor({vwidths[i]})));
    in_ch = vwidths[i];
  }
  // Small random head biases keep the pre-normalization embedding away from
  // exact zero even for constant inputs (true silence hits the mel floor).
  Tensor vb({embed_dim_});
  for (int64_t i = 0; i < vb.size(); ++i) vb[i] = rng.normal(0.0, 0.01);
  vhead_w_ = &store_.create("video.head.weight", nn::linear_init(rng, embed_dim_, in_ch));
  vhead_b_ = &store_.create("video.head.bias", std::move(vb));

  const int awidths[3] = {16, 24, 32};
  in_ch = 1;
  for (int i = 0; i < 3; ++i) {
    std::string name = "audio.conv" + std::to_string(i);
    aconv_w_.push_back(&store_.create(name + ".weight", nn::conv_init(rng, awidths[i], in_ch, 3, 3)));
    aconv_b_.push_back(&store_.create(name + ".bias", Tensor({awidths[i]})));
    in_ch = awidths[i];
  }
  Tensor ab({embed_dim_});
  for (int64_t i = 0; i < ab.size(); ++i) ab[i] = rng.normal(0.0, 0.01);
  ahead_w_ = &store_.create("audio.head.weight", nn::linear_init(rng, embed_dim_, in_ch));
  ahead_b_ = &store_.create("audio.head.bias", std::move(ab));
}

Var SyncExpert::tower(Binder& bind, Var x, const std::vector<nn::Param*>& w,
                      const std::vector<nn::Param*>& b, nn::Param* head_w, nn::Param* head_b) const {
  for (size_t i = 0; i < w.size(); ++i)
    x = conv2d_bias_act(x, bind(*w[i]), bind(*b[i]), {2, 1}, 0.2);
  Var pooled = global_avgpool(x);
  Var e = linear(pooled, bind(*head_w), bind(*head_b));
  return l2_normalize_rows(e);
}

Var SyncExpert::embed_video(Binder& bind, const std::vector<Var>& frames) const {
  require(static_cast<int>(frames.size()) == frames_, ErrorCode::InvalidArgument,
          "embed_video: expected exactly " + std::to_string(frames_) + " frames");
  const std::vector<int> shape0 = frames[0].val().shape();  // copy: tape growth invalidates refs
  require(shape0.size() == 4 && shape0[1] == 3 && shape0[2] == resolution_ &&
              shape0[3] == resolution_,
          ErrorCode::InvalidArgument, "embed_video: wrong frame resolution");
  std::vector<Var> cropped;
  cropped.reserve(frames.size());
  for (const Var& f : frames) {
    require(f.val().shape() == shape0, ErrorCode::InvalidArgument,
            "embed_video: ragged frame batch");
    cropped.push_back(slice(f, 2, resolution_ / 2, resolution_ / 2));  // lower half
  }
  return embed_video_stacked(bind, concat(cropped, 1));
}

Var SyncExpert::embed_video_stacked(Binder& bind, Var stacked) const {
  const Tensor& v = stacked.val();
  require(v.rank() == 4 && v.dim(1) == 3 * frames_ && v.dim(2) == resolution_ / 2 &&
              v.dim(3) == resolution_,
          ErrorCode::InvalidArgument, "embed_video: stacked window must be [B,3T,H/2,W]");
  return tower(bind, stacked, vconv_w_, vconv_b_, vhead_w_, vhead_b_);
}

Var SyncExpert::embed_audio(Binder& bind, Var windows) const {
  const Tensor& v = windows.val();
  require(v.rank() == 4 && v.dim(1) == 1 && v.dim(2) == seg_ && v.dim(3) == bins_,
          ErrorCode::InvalidArgument, "embed_audio: window must be [B,1,seg,bins]");
  double lnfloor = std::log(log_floor_);
  Var x = scale(add_const(windows, -lnfloor), 1.0 / -lnfloor);
  return tower(bind, x, aconv_w_, aconv_b_, ahead_w_, ahead_b_);
}

Tensor SyncExpert::embed_video_value(const std::vector<Tensor>& frames) const {
  Tape tape;
  Binder bind(tape);
  std::vector<Var> vars;
  vars.reserve(frames.size());
  for (const Tensor& f : frames)
    vars.push_back(tape.input(f.rank() == 3 ? f.reshaped({1, f.dim(0), f.dim(1), f.dim(2)}) : f));
  auto* self = const_cast<SyncExpert*>(this);
  (void)self;
  return embed_video(bind, vars).val();
}

Tensor SyncExpert::embed_audio_value(const Tensor& window) const {
  Tape tape;
  Binder bind(tape);
  Tensor w4 = window.rank() == 2 ? window.reshaped({1, 1, window.dim(0), window.dim(1)}) : window;
  return embed_audio(bind, tape.input(w4)).val();
}

double sync_distance(const Tensor& u, const Tensor& v) {
  require(u.size() == v.size() && u.size() > 0, ErrorCode::InvalidArgument,
          "sync_distance: dimension mismatch");
  double nu = 0.0, nv = 0.0, dot = 0.0;
  for (int64_t i = 0; i < u.size(); ++i) {
    nu += u[i] * u[i];
    nv += v[i] * v[i];
    dot += u[i] * v[i];
  }
  require(nu > 1e-24 && nv > 1e-24, ErrorCode::InvalidArgument, "sync_distance: zero vector");
  return 1.0 - dot / (std::sqrt(nu) * std::sqrt(nv));
}

Var sync_distance_rows(Var fv, Var fa) {
  require(fv.val().same_shape(fa.val()) && fv.val().rank() == 2, ErrorCode::InvalidArgument,
          "sync_distance_rows: need matching [B,C]");
  Var dot = sum_keep(mul(fv, fa), 1);  // [B]
  return add_const(scale(dot, -1.0), 1.0);
}

}  // namespace lipsync::sync

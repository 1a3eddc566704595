#include "lipsync/models.hpp"

#include <cmath>

namespace lipsync::models {

using namespace lipsync::ad;

namespace {

Var conv2d_full_plain(Var x, Var w, Var bias, ConvSpec spec) {
  return add_b(conv2d(x, w, spec), reshape(bias, {1, bias.val().dim(0), 1, 1}));
}

uint64_t sub_seed(uint64_t base, uint64_t tag) {
  uint64_t x = base ^ (tag * 0x9e3779b97f4a7c15ull);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  return x ^ (x >> 27);
}

Tensor zeros_like_shape(std::vector<int> shape) { return Tensor(std::move(shape)); }

}  // namespace

// ---------------------------------------------------------------------------
// ModulatedConv2d

ModulatedConv2d::ModulatedConv2d(nn::ParamStore& store, const std::string& prefix, Rng& rng,
                                 int style_dim, int in_ch, int out_ch, int ksize, bool demodulate,
                                 bool modulated, bool trainable)
    : in_ch_(in_ch), out_ch_(out_ch), ksize_(ksize), style_dim_(style_dim),
      demodulate_(demodulate), modulated_(modulated) {
  weight = &store.create(prefix + ".weight", nn::conv_init(rng, out_ch, in_ch, ksize, ksize),
                         trainable);
  bias = &store.create(prefix + ".bias", zeros_like_shape({out_ch}), trainable);
  if (modulated_) {
    Tensor aw = nn::linear_init(rng, in_ch, style_dim);
    for (int64_t i = 0; i < aw.size(); ++i) aw[i] *= 0.2;  // scales start near the bias
    affine_w = &store.create(prefix + ".affine.weight", std::move(aw), trainable);
    affine_b = &store.create(prefix + ".affine.bias", Tensor::full({in_ch}, 1.0), trainable);
  }
}

Var ModulatedConv2d::scales(Binder& bind, Var style_rows) const {
  require(modulated_, ErrorCode::InvalidArgument, "scales() on an unmodulated conv");
  const Tensor& s = style_rows.val();
  require(s.rank() == 2 && s.dim(1) == style_dim_, ErrorCode::InvalidArgument,
          "modulated_conv: style rows must be [N,D]");
  return linear(style_rows, bind(*affine_w), bind(*affine_b));
}

Var ModulatedConv2d::apply(Binder& bind, Var x, Var style_rows) const {
  return apply_act(bind, x, style_rows, /*act_slope=*/0.0, /*use_act=*/false);
}

Var ModulatedConv2d::apply_act(Binder& bind, Var x, Var style_rows, double act_slope,
                               bool use_act) const {
  require(x.val().rank() == 4 && x.val().dim(1) == in_ch_, ErrorCode::InvalidArgument,
          "modulated_conv: channel mismatch");
  ConvSpec spec{1, ksize_ / 2};
  if (!modulated_) {
    return use_act ? conv2d_bias_act(x, bind(*weight), bind(*bias), spec, act_slope)
                   : conv2d_full_plain(x, bind(*weight), bind(*bias), spec);
  }
  const int N = x.val().dim(0);
  Var s = scales(bind, style_rows);  // [N,C]
  Var w5 = reshape(bind(*weight), {1, out_ch_, in_ch_, ksize_, ksize_});
  Var wmod = mul_b(w5, reshape(s, {N, 1, in_ch_, 1, 1}));  // [N,O,C,k,k]
  if (demodulate_) {
    Var d = powc(add_const(sumsq_keep(wmod, 2), 1e-8), -0.5);  // [N,O]
    wmod = mul_b(wmod, reshape(d, {N, out_ch_, 1, 1, 1}));
  }
  return use_act ? conv2d_mw_bias_act(x, wmod, bind(*bias), spec, act_slope)
                 : conv2d_mw_bias(x, wmod, bind(*bias), spec);
}

// ---------------------------------------------------------------------------
// FaceEncoder

FaceEncoder::FaceEncoder(nn::ParamStore& store, Rng& rng, const cfg::GlobalConfig& cfg) {
  resolution_ = cfg.resolution;
  levels_ = cfg.levels;
  const std::vector<int>& dc = cfg.model.decoder_channels;
  // Pyramid level l (coarse to fine) carries the decoder's block-(l+1) input
  // channels dc[l]; the trunk runs fine to coarse.
  int in_ch = 3;
  int res = cfg.resolution;
  for (int i = 0; i < levels_; ++i) {
    int out_ch = dc[static_cast<size_t>(levels_ - 1 - i)];
    std::string name = "face.conv" + std::to_string(i);
    conv_w_.push_back(&store.create(name + ".weight", nn::conv_init(rng, out_ch, in_ch, 3, 3)));
    conv_b_.push_back(&store.create(name + ".bias", zeros_like_shape({out_ch})));
    in_ch = out_ch;
  }
  for (int l = 0; l < levels_; ++l) {
    level_res_.push_back(res >> (levels_ - 1 - l));
    level_ch_.push_back(dc[static_cast<size_t>(l)]);
  }
}

std::vector<Var> FaceEncoder::apply(Binder& bind, Var frames) const {
  const Tensor& v = frames.val();
  require(v.rank() == 4 && v.dim(1) == 3 && v.dim(2) == resolution_ && v.dim(3) == resolution_,
          ErrorCode::InvalidArgument, "encode_face: wrong input resolution");
  std::vector<Var> taps;  // fine -> coarse while walking the trunk
  Var x = frames;
  for (size_t i = 0; i < conv_w_.size(); ++i) {
    ConvSpec spec{i == 0 ? 1 : 2, 1};
    x = conv2d_bias_act(x, bind(*conv_w_[i]), bind(*conv_b_[i]), spec, 0.2);
    taps.push_back(x);
  }
  std::vector<Var> pyramid(taps.rbegin(), taps.rend());
  return pyramid;
}

// ---------------------------------------------------------------------------
// ReferenceEncoder

ReferenceEncoder::ReferenceEncoder(nn::ParamStore& store, Rng& rng, const cfg::GlobalConfig& cfg) {
  resolution_ = cfg.resolution;
  rows_ = 2 * cfg.levels;
  style_dim_ = cfg.style_dim;
  int downs = 0;
  for (int r = cfg.resolution; r > 4; r >>= 1) ++downs;
  int in_ch = 3;
  for (int i = 0; i < downs; ++i) {
    int out_ch = std::min(48, 16 + 8 * i);
    std::string name = "ref.conv" + std::to_string(i);
    conv_w_.push_back(&store.create(name + ".weight", nn::conv_init(rng, out_ch, in_ch, 3, 3)));
    conv_b_.push_back(&store.create(name + ".bias", zeros_like_shape({out_ch})));
    in_ch = out_ch;
  }
  head_w_ = &store.create("ref.head.weight", nn::linear_init(rng, rows_ * style_dim_, in_ch));
  head_b_ = &store.create("ref.head.bias", zeros_like_shape({rows_ * style_dim_}));
}

Var ReferenceEncoder::apply(Binder& bind, Var frames) const {
  const Tensor& v = frames.val();
  require(v.rank() == 4 && v.dim(1) == 3 && v.dim(2) == resolution_ && v.dim(3) == resolution_,
          ErrorCode::InvalidArgument, "encode_reference: wrong input resolution");
  int B = v.dim(0);
  Var x = frames;
  for (size_t i = 0; i < conv_w_.size(); ++i)
    x = conv2d_bias_act(x, bind(*conv_w_[i]), bind(*conv_b_[i]), {2, 1}, 0.2);
  Var pooled = global_avgpool(x);  // [B, C]
  Var code = linear(pooled, bind(*head_w_), bind(*head_b_));
  return reshape(code, {B, rows_, style_dim_});
}

// ---------------------------------------------------------------------------
// AudioEncoder

AudioEncoder::AudioEncoder(nn::ParamStore& store, Rng& rng, const cfg::GlobalConfig& cfg) {
  rows_ = 2 * cfg.levels;
  style_dim_ = cfg.style_dim;
  seg_frames_ = cfg.mel.segment_frames;
  bins_ = cfg.mel.bins;
  log_floor_ = cfg.mel.log_floor;
  const int widths[3] = {16, 24, 32};
  int in_ch = 1;
  for (int i = 0; i < 3; ++i) {
    std::string name = "audio.conv" + std::to_string(i);
    conv_w_.push_back(&store.create(name + ".weight", nn::conv_init(rng, widths[i], in_ch, 3, 3)));
    conv_b_.push_back(&store.create(name + ".bias", zeros_like_shape({widths[i]})));
    in_ch = widths[i];
  }
  head_w_ = &store.create("audio.head.weight", nn::linear_init(rng, rows_ * style_dim_, in_ch));
  head_b_ = &store.create("audio.head.bias", zeros_like_shape({rows_ * style_dim_}));
}

Var AudioEncoder::apply(Binder& bind, Var mel_windows) const {
  const Tensor& v = mel_windows.val();
  require(v.rank() == 4 && v.dim(1) == 1 && v.dim(2) == seg_frames_ && v.dim(3) == bins_,
          ErrorCode::InvalidArgument, "encode_audio: wrong mel window shape");
  int N = v.dim(0);
  // Map log-mel range onto O(1) activations: floor -> 0.
  double lnfloor = std::log(log_floor_);
  Var x = scale(add_const(mel_windows, -lnfloor), 1.0 / -lnfloor);
  for (size_t i = 0; i < conv_w_.size(); ++i)
    x = conv2d_bias_act(x, bind(*conv_w_[i]), bind(*conv_b_[i]), {2, 1}, 0.2);
  Var pooled = global_avgpool(x);
  Var code = linear(pooled, bind(*head_w_), bind(*head_b_));
  return reshape(code, {N, rows_, style_dim_});
}

Var compose_style(Var w_ref, Var a_t) {
  require(w_ref.val().same_shape(a_t.val()), ErrorCode::InvalidArgument,
          "compose_style: shape mismatch");
  return add(w_ref, a_t);
}

// ---------------------------------------------------------------------------
// LatentSmoother

LatentSmoother::LatentSmoother(nn::ParamStore& store, Rng& rng, const cfg::GlobalConfig& cfg) {
  rows_ = 2 * cfg.levels;
  style_dim_ = cfg.style_dim;
  hidden_ = cfg.mals.hidden;
  alpha_ = cfg.mals.alpha;
  enabled_ = cfg.ablation.mals_enabled;
  literal_ = cfg.ablation.mals_literal_eq4;
  double asum = alpha_[0] + alpha_[1] + alpha_[2];
  require(std::fabs(asum - 1.0) < 1e-9, ErrorCode::InvalidConfig,
          "moving-average weights must sum to 1");
  for (int r = 0; r < rows_; ++r) {
    std::string name = "mals.row" + std::to_string(r);
    w1_.push_back(&store.create(name + ".w1", nn::linear_init(rng, hidden_, style_dim_)));
    b1_.push_back(&store.create(name + ".b1", zeros_like_shape({hidden_})));
    // Final layer zero-initialized: at init the transform is pure smoothing.
    w2_.push_back(&store.create(name + ".w2", zeros_like_shape({style_dim_, hidden_})));
    b2_.push_back(&store.create(name + ".b2", zeros_like_shape({style_dim_})));
  }
}

Var LatentSmoother::apply(Binder& bind, Var a_codes, Var w_ref, Var w_avg) const {
  const Tensor& av = a_codes.val();
  require(av.rank() == 4 && av.dim(2) == rows_ && av.dim(3) == style_dim_,
          ErrorCode::InvalidArgument, "smooth_trajectory: codes must be [B,T,2L,D]");
  const int B = av.dim(0), T = av.dim(1);
  require(w_ref.val().rank() == 3 && w_ref.val().dim(0) == B, ErrorCode::InvalidArgument,
          "smooth_trajectory: w_ref must be [B,2L,D]");
  Var ref4 = reshape(w_ref, {B, 1, rows_, style_dim_});
  Var avg4 = reshape(w_avg, {1, 1, rows_, style_dim_});

  if (!enabled_) return add_b(add_b(a_codes, ref4), avg4);

  Var base = literal_ ? add_b(a_codes, ref4) : a_codes;
  Var d = smooth3_time(base, alpha_);

  std::vector<Var> rows;
  rows.reserve(static_cast<size_t>(rows_));
  for (int r = 0; r < rows_; ++r) {
    Var dr = reshape(slice(d, 2, r, 1), {B * T, style_dim_});
    Var h = leaky_relu(linear(dr, bind(*w1_[static_cast<size_t>(r)]), bind(*b1_[static_cast<size_t>(r)])), 0.2);
    Var out = add(dr, linear(h, bind(*w2_[static_cast<size_t>(r)]), bind(*b2_[static_cast<size_t>(r)])));
    rows.push_back(reshape(out, {B, T, 1, style_dim_}));
  }
  Var smoothed = concat(rows, 2);
  return add_b(add_b(smoothed, ref4), avg4);
}

// ---------------------------------------------------------------------------
// Decoder

Decoder::Decoder(nn::ParamStore& store, Rng& rng, const cfg::GlobalConfig& cfg) {
  channels_ = cfg.model.decoder_channels;
  style_dim_ = cfg.style_dim;
  start_res_ = cfg.resolution >> cfg.levels;
  bool frozen = cfg.model.freeze_non_samf;

  Tensor start({channels_[0], start_res_, start_res_});
  for (int64_t i = 0; i < start.size(); ++i) start[i] = rng.normal(0.0, 1.0);
  start_ = &store.create("dec.start", std::move(start), !frozen);

  for (int l = 0; l < cfg.levels; ++l) {
    int cin = channels_[static_cast<size_t>(l)];
    int cout = channels_[static_cast<size_t>(l) + 1];
    std::string base = "dec.block" + std::to_string(l);
    samf_.emplace_back(store, base + ".samf", rng, style_dim_, cin, 1, 3,
                       /*demodulate=*/false, /*modulated=*/cfg.ablation.samf_modulated,
                       /*trainable=*/true);
    conv1_.emplace_back(store, base + ".conv1", rng, style_dim_, cin, cout, 3, true, true, !frozen);
    conv2_.emplace_back(store, base + ".conv2", rng, style_dim_, cout, cout, 3, true, true, !frozen);
  }
  int clast = channels_.back();
  to_rgb_w_ = &store.create("dec.to_rgb.weight", nn::conv_init(rng, 3, clast, 1, 1), !frozen);
  to_rgb_b_ = &store.create("dec.to_rgb.bias", zeros_like_shape({3}), !frozen);
}

Var Decoder::fusion_mask(Binder& bind, int block, Var enc_feat, Var style_row) const {
  const ModulatedConv2d& conv = samf_[static_cast<size_t>(block)];
  require(enc_feat.val().rank() == 4 && enc_feat.val().dim(1) == conv.in_channels(),
          ErrorCode::InvalidArgument, "fusion_mask: encoded feature resolution/channel mismatch");
  return sigmoid(conv.apply(bind, enc_feat, style_row));
}

Var fuse(Var fusion_mask, Var enc_feat, Var gen_feat) {
  require(enc_feat.val().same_shape(gen_feat.val()), ErrorCode::InvalidArgument,
          "fuse: encoded/generated shape mismatch");
  const Tensor& s = fusion_mask.val();
  require(s.rank() == 4 && s.dim(1) == 1 && s.dim(2) == enc_feat.val().dim(2) &&
              s.dim(3) == enc_feat.val().dim(3),
          ErrorCode::InvalidArgument, "fuse: mask shape mismatch");
  Var inv = add_const(scale(fusion_mask, -1.0), 1.0);
  return add(mul_b(enc_feat, fusion_mask), mul_b(gen_feat, inv));
}

Var Decoder::apply(Binder& bind, Var styles, const std::vector<Var>& pyramid) const {
  const Tensor& sv = styles.val();
  const int L = blocks();
  require(sv.rank() == 3 && sv.dim(1) == 2 * L && sv.dim(2) == style_dim_,
          ErrorCode::InvalidArgument, "decode: styles must be [N,2L,D]");
  require(static_cast<int>(pyramid.size()) == L, ErrorCode::InvalidArgument,
          "decode: pyramid level count mismatch");
  const int N = sv.dim(0);

  ad::Tape& tape = *styles.tape();
  Var x = add_b(tape.input(Tensor({N, channels_[0], start_res_, start_res_})),
                reshape(bind(*start_), {1, channels_[0], start_res_, start_res_}));

  int res = start_res_;
  for (int l = 0; l < L; ++l) {
    x = upsample2(x);
    res *= 2;
    const Tensor& ev = pyramid[static_cast<size_t>(l)].val();
    require(ev.rank() == 4 && ev.dim(0) == N && ev.dim(1) == channels_[static_cast<size_t>(l)] &&
                ev.dim(2) == res && ev.dim(3) == res,
            ErrorCode::InvalidArgument, "decode: pyramid level resolution/channel mismatch");
    Var row_a = reshape(slice(styles, 1, 2 * l, 1), {N, style_dim_});
    Var row_b = reshape(slice(styles, 1, 2 * l + 1, 1), {N, style_dim_});
    Var s_mask = fusion_mask(bind, l, pyramid[static_cast<size_t>(l)], row_a);
    x = fuse(s_mask, pyramid[static_cast<size_t>(l)], x);
    x = conv1_[static_cast<size_t>(l)].apply_act(bind, x, row_a, 0.2, true);
    x = conv2_[static_cast<size_t>(l)].apply_act(bind, x, row_b, 0.2, true);
  }
  Var rgb = conv2d(x, bind(*to_rgb_w_), {1, 0});
  rgb = add_b(rgb, reshape(bind(*to_rgb_b_), {1, 3, 1, 1}));
  return sigmoid(rgb);
}

// ---------------------------------------------------------------------------
// FeatureExtractor

FeatureExtractor::FeatureExtractor(nn::ParamStore& store, Rng& rng, int channels, int scales)
    : scales_(scales) {
  int in_ch = 3;
  for (int i = 0; i < 4; ++i) {
    std::string name = "perc.conv" + std::to_string(i);
    conv_w_.push_back(&store.create(name + ".weight",
                                    nn::conv_init(rng, channels, in_ch, 3, 3), /*trainable=*/false));
    conv_b_.push_back(&store.create(name + ".bias", Tensor({channels}), /*trainable=*/false));
    in_ch = channels;
  }
}

std::vector<Var> FeatureExtractor::features(Binder& bind, Var x) const {
  std::vector<Var> out;
  for (size_t i = 0; i < conv_w_.size(); ++i) {
    x = conv2d_bias_act(x, bind(*conv_w_[i]), bind(*conv_b_[i]), {1, 1}, 0.2);
    out.push_back(x);
  }
  return out;
}

Var FeatureExtractor::loss(Binder& bind, Var x, Var y) const {
  require(x.val().same_shape(y.val()), ErrorCode::InvalidArgument,
          "perceptual_loss: shape mismatch");
  const int N = x.val().dim(0);
  Var acc;
  bool first = true;
  Var xs = x, ys = y;
  for (int s = 0; s < scales_; ++s) {
    if (s > 0) {
      xs = avgpool2(xs);
      ys = avgpool2(ys);
    }
    std::vector<Var> fx = features(bind, xs);
    std::vector<Var> fy = features(bind, ys);
    for (size_t l = 0; l < fx.size(); ++l) {
      Var d = sub(fx[l], fy[l]);
      Var norms = sqrt0(sumsq_keep(d, 1));  // per-sample l2 norm
      Var total = sum(norms);
      acc = first ? total : add(acc, total);
      first = false;
    }
  }
  return scale(acc, 1.0 / static_cast<double>(N));
}

// ---------------------------------------------------------------------------
// Generator

Generator::Generator(const cfg::GlobalConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  {
    Rng rng(sub_seed(init_seed, 1));
    face_ = FaceEncoder(store_, rng, cfg_);
  }
  {
    Rng rng(sub_seed(init_seed, 2));
    ref_ = ReferenceEncoder(store_, rng, cfg_);
  }
  {
    Rng rng(sub_seed(init_seed, 3));
    audio_ = AudioEncoder(store_, rng, cfg_);
  }
  {
    Rng rng(sub_seed(init_seed, 4));
    mals_ = LatentSmoother(store_, rng, cfg_);
  }
  {
    Rng rng(sub_seed(init_seed, 5));
    decoder_ = Decoder(store_, rng, cfg_);
  }
  {
    Rng rng(sub_seed(init_seed, 6));
    perceptual_ = FeatureExtractor(store_, rng, cfg_.loss.perceptual_channels,
                                   cfg_.loss.perceptual_levels);
  }
  w_avg_ = &store_.create("w_avg", Tensor({2 * cfg_.levels, cfg_.style_dim}), /*trainable=*/false);

  // Pyramid/decoder resolution agreement, asserted at construction.
  int res = cfg_.resolution >> cfg_.levels;
  for (int l = 0; l < cfg_.levels; ++l) {
    res *= 2;
    require(face_.level_resolutions()[static_cast<size_t>(l)] == res, ErrorCode::InvalidArgument,
            "pyramid/decoder resolution disagreement");
    require(face_.level_channels()[static_cast<size_t>(l)] ==
                cfg_.model.decoder_channels[static_cast<size_t>(l)],
            ErrorCode::InvalidArgument, "pyramid/decoder channel disagreement");
  }
}

void Generator::update_w_avg(const Tensor& composed_batch) {
  require(composed_batch.rank() == 3 && composed_batch.dim(1) == 2 * cfg_.levels &&
              composed_batch.dim(2) == cfg_.style_dim,
          ErrorCode::InvalidArgument, "update_w_avg: need [N,2L,D]");
  int N = composed_batch.dim(0);
  int64_t rd = static_cast<int64_t>(2 * cfg_.levels) * cfg_.style_dim;
  double decay = cfg_.w_avg_decay;
  Tensor& avg = w_avg_->value;
  for (int64_t i = 0; i < rd; ++i) {
    double mean = 0.0;
    for (int n = 0; n < N; ++n) mean += composed_batch[n * rd + i];
    mean /= static_cast<double>(N);
    avg[i] = decay * avg[i] + (1.0 - decay) * mean;
  }
}

Generator::WindowForward Generator::forward_window(Binder& bind, Var masked_frames,
                                                   Var audio_windows, Var refs, int batch_clips,
                                                   int frames_per_clip) const {
  const int B = batch_clips, T = frames_per_clip;
  const int R = 2 * cfg_.levels, D = cfg_.style_dim;
  require(masked_frames.val().dim(0) == B * T, ErrorCode::InvalidArgument,
          "forward_window: masked frame count != B*T");

  std::vector<Var> pyramid = face_.apply(bind, masked_frames);
  Var a = audio_.apply(bind, audio_windows);       // [B*T, R, D]
  Var w_ref = ref_.apply(bind, refs);              // [B, R, D]

  Var a4 = reshape(a, {B, T, R, D});
  Var composed4 = add_b(a4, reshape(w_ref, {B, 1, R, D}));  // Eq-style additive composition
  Var smoothed4 = mals_.apply(bind, a4, w_ref, bind(*w_avg_));

  WindowForward out;
  out.composed = reshape(composed4, {B * T, R, D});
  out.smoothed = reshape(smoothed4, {B * T, R, D});
  out.frames = decoder_.apply(bind, out.smoothed, pyramid);
  return out;
}

std::vector<nn::Param*> Generator::decoder_params() {
  std::vector<nn::Param*> out;
  for (nn::Param* p : store_.all())
    if (p->name.rfind("dec.", 0) == 0 && p->trainable) out.push_back(p);
  return out;
}

std::vector<nn::Param*> Generator::trainable_params() {
  std::vector<nn::Param*> out;
  for (nn::Param* p : store_.all())
    if (p->trainable) out.push_back(p);
  return out;
}

}  // namespace lipsync::models

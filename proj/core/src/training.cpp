#include "lipsync/training.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "lipsync/mel.hpp"

namespace lipsync::train {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lipsync::ad;
using nn::Binder;

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::string& dir, const nn::ParamStore& store,
                     const CheckpointInfo& info) {
  fs::create_directories(fs::path(dir) / "tensors");
  json manifest;
  manifest["format_version"] = info.format_version;
  manifest["kind"] = info.kind;
  manifest["step"] = info.step;
  manifest["personalized_for"] = info.personalized_for;
  manifest["config"] = json::parse(cfg::config_to_json_text(info.config));
  manifest["tensors"] = json::array();
  for (size_t i = 0; i < store.size(); ++i) {
    const nn::Param& p = store.at(i);
    std::string file = "tensors/" + p.name + ".f32";
    write_tensor_f32((fs::path(dir) / file).string(), p.value);
    manifest["tensors"].push_back(json{{"name", p.name},
                                       {"shape", p.value.shape()},
                                       {"file", file},
                                       {"crc32", tensor_crc32_f32(p.value)}});
  }
  std::ofstream out(fs::path(dir) / "manifest.json");
  require(out.good(), ErrorCode::RuntimeFailure, "cannot write checkpoint manifest in " + dir);
  out << manifest.dump(1) << "\n";
}

namespace {

json read_manifest(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  require(in.good(), ErrorCode::CorruptCheckpoint, "missing checkpoint manifest in " + dir);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptCheckpoint, std::string("manifest parse error: ") + e.what());
  }
}

}  // namespace

CheckpointInfo read_checkpoint_info(const std::string& dir) {
  json j = read_manifest(dir);
  CheckpointInfo info;
  try {
    info.format_version = j.at("format_version").get<int>();
    require(info.format_version == kCheckpointFormatVersion, ErrorCode::IncompatibleVersion,
            "unsupported checkpoint format version " + std::to_string(info.format_version));
    info.kind = j.at("kind").get<std::string>();
    info.step = j.at("step").get<int64_t>();
    info.personalized_for = j.value("personalized_for", std::string{});
    info.config = cfg::config_from_json_text(j.at("config").dump());
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptCheckpoint, std::string("manifest schema error: ") + e.what());
  }
  return info;
}

void load_checkpoint_params(const std::string& dir, nn::ParamStore& store) {
  json j = read_manifest(dir);
  require(j.at("format_version").get<int>() == kCheckpointFormatVersion,
          ErrorCode::IncompatibleVersion, "unsupported checkpoint format version");
  size_t loaded = 0;
  try {
    for (const json& jt : j.at("tensors")) {
      std::string name = jt.at("name").get<std::string>();
      std::vector<int> shape = jt.at("shape").get<std::vector<int>>();
      nn::Param* p = store.find(name);
      require(p != nullptr, ErrorCode::CorruptCheckpoint, "checkpoint tensor unknown to model: " + name);
      require(p->value.shape() == shape, ErrorCode::CorruptCheckpoint,
              "checkpoint shape mismatch for " + name);
      Tensor t = read_tensor_f32((fs::path(dir) / jt.at("file").get<std::string>()).string(), shape);
      require(tensor_crc32_f32(t) == jt.at("crc32").get<uint32_t>(), ErrorCode::CorruptCheckpoint,
              "checksum mismatch for " + name);
      p->value = std::move(t);
      ++loaded;
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptCheckpoint, std::string("manifest schema error: ") + e.what());
  }
  require(loaded == store.size(), ErrorCode::CorruptCheckpoint,
          "checkpoint does not cover every model tensor");
}

LoadedGenerator load_generator_checkpoint(const std::string& dir) {
  CheckpointInfo info = read_checkpoint_info(dir);
  require(info.kind == "generator", ErrorCode::CorruptCheckpoint,
          "checkpoint kind is not 'generator': " + info.kind);
  LoadedGenerator out;
  out.generator = std::make_unique<models::Generator>(info.config, 0);
  load_checkpoint_params(dir, out.generator->params());
  out.info = std::move(info);
  return out;
}

LoadedSyncExpert load_sync_expert_checkpoint(const std::string& dir) {
  CheckpointInfo info = read_checkpoint_info(dir);
  require(info.kind == "sync_expert", ErrorCode::CorruptCheckpoint,
          "checkpoint kind is not 'sync_expert': " + info.kind);
  LoadedSyncExpert out;
  out.expert = std::make_unique<sync::SyncExpert>(info.config, 0);
  load_checkpoint_params(dir, out.expert->params());
  out.info = std::move(info);
  return out;
}

// ---------------------------------------------------------------------------
// Generator training

Var stack_video_windows(Var frames, int batch_clips, int frames_per_window, int height) {
  std::vector<Var> windows;
  windows.reserve(static_cast<size_t>(batch_clips));
  for (int b = 0; b < batch_clips; ++b) {
    std::vector<Var> parts;
    parts.reserve(static_cast<size_t>(frames_per_window));
    for (int t = 0; t < frames_per_window; ++t) {
      Var one = slice(frames, 0, b * frames_per_window + t, 1);
      parts.push_back(slice(one, 2, height / 2, height / 2));
    }
    windows.push_back(concat(parts, 1));
  }
  return concat(windows, 0);
}

Trainer::Trainer(models::Generator& gen, const sync::SyncExpert* expert, data::ClipCache& cache,
                 std::ostream* log)
    : gen_(gen), expert_(expert), cache_(cache), rng_(static_cast<uint64_t>(gen.config().train.seed)),
      opt_(gen.config().optim.lr, gen.config().optim.beta1, gen.config().optim.beta2,
           gen.config().optim.eps),
      log_(log) {
  train_pool_ = cache.split("train");
  require(!train_pool_.empty(), ErrorCode::InvalidArgument, "training split is empty");
}

StepLosses Trainer::step() {
  data::WindowBatch batch = data::sample_window_batch(
      cache_, train_pool_, gen_.config().train.batch_clips, gen_.config().frames_per_window, rng_);
  return step_on_batch(batch);
}

StepLosses Trainer::step_on_batch(const data::WindowBatch& batch) {
  auto t_start = std::chrono::steady_clock::now();
  const cfg::GlobalConfig& cfg = gen_.config();
  const int B = static_cast<int>(batch.refs.dim(0));
  const int T = cfg.frames_per_window;
  const double l1 = cfg.loss.lambda_perceptual, l2 = cfg.loss.lambda_sync;

  Tape tape;
  Binder bind(tape);
  Var masked = tape.input(batch.masked);
  Var audio_w = tape.input(batch.audio);
  Var refs = tape.input(batch.refs);
  Var target = tape.input(batch.target);

  models::Generator::WindowForward fw = gen_.forward_window(bind, masked, audio_w, refs, B, T);
  Var perc = gen_.perceptual().loss(bind, fw.frames, target);
  Var total = scale(perc, l1);

  StepLosses losses;
  losses.perceptual = perc.val()[0];
  if (l2 > 0.0 && expert_ != nullptr) {
    Binder frozen(tape, /*freeze=*/true);
    auto* ex = const_cast<sync::SyncExpert*>(expert_);
    Var stacked = stack_video_windows(fw.frames, B, T, cfg.resolution);
    Var fv = ex->embed_video_stacked(frozen, stacked);
    Var fa = ex->embed_audio(frozen, tape.input(batch.sync_audio));
    Var lsync = mean(sync::sync_distance_rows(fv, fa));
    losses.sync = lsync.val()[0];
    total = add(total, scale(lsync, l2));
  }
  losses.total = total.val()[0];

  if (!std::isfinite(losses.total)) {
    std::string ids;
    for (size_t i = 0; i < batch.clip_ids.size(); ++i)
      ids += (i ? "," : "") + std::to_string(batch.clip_ids[i]) + "@" +
             std::to_string(batch.starts[i]);
    fail(ErrorCode::RuntimeFailure, "non-finite loss at step " + std::to_string(step_ + 1) +
                                        " (seed " + std::to_string(cfg.train.seed) + ", batch " +
                                        ids + ")");
  }

  gen_.params().zero_grad();
  tape.backward(total);
  bind.collect_grads();
  std::vector<nn::Param*> trainable = gen_.trainable_params();
  opt_.step(trainable);
  gen_.update_w_avg(fw.composed.val());
  ++step_;

  if (log_) {
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::steady_clock::now() - t_start)
                  .count();
    json line = {{"step", step_},
                 {"perceptual", losses.perceptual},
                 {"sync", losses.sync},
                 {"total", losses.total},
                 {"wall_ms", ms}};
    (*log_) << line.dump() << "\n";
  }
  return losses;
}

void Trainer::run(int steps) {
  for (int i = 0; i < steps; ++i) (void)step();
}

std::vector<Tensor> generate_sequence(models::Generator& gen, const sync::SyncExpert*,
                                      data::ClipCache& cache, int clip_idx, const Tensor& drive_mel,
                                      int max_frames) {
  const cfg::GlobalConfig& cfg = gen.config();
  const synth::VideoClip& clip = cache.clip(clip_idx);
  int f_clip = clip.frame_count();
  int f_audio = static_cast<int>(std::floor(drive_mel.dim(0) / 3.2)) + 1;
  int frames = std::min(f_clip, f_audio);
  if (max_frames > 0) frames = std::min(frames, max_frames);
  require(frames >= 1, ErrorCode::InvalidArgument, "nothing to generate");

  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(frames));
  const int chunk = 24;
  const int H = cfg.resolution, W = cfg.resolution;
  Tensor ref = cache.frame_tensor(clip_idx, 0).reshaped({1, 3, H, W});

  for (int s = 0; s < frames; s += chunk) {
    int e = std::min(frames, s + chunk);
    int cs = std::max(0, s - 1);
    int ce = std::min(frames, e + 1);
    int n = ce - cs;

    Tensor masked({n, 3, H, W});
    Tensor audio({n, 1, cfg.mel.segment_frames, cfg.mel.bins});
    for (int t = cs; t < ce; ++t) {
      Tensor m = cache.masked_frame_tensor(clip_idx, t);
      Tensor seg = audio::audio_segment(drive_mel, t, cfg.mel);
      int slot = t - cs;
      for (int64_t i = 0; i < m.size(); ++i) masked[slot * m.size() + i] = m[i];
      for (int64_t i = 0; i < seg.size(); ++i) audio[slot * seg.size() + i] = seg[i];
    }

    Tape tape;
    Binder bind(tape, /*freeze=*/true);
    models::Generator::WindowForward fw =
        gen.forward_window(bind, tape.input(masked), tape.input(audio), tape.input(ref), 1, n);
    const Tensor& frames_val = fw.frames.val();
    int64_t plane = static_cast<int64_t>(3) * H * W;
    for (int t = s; t < e; ++t) {
      int slot = t - cs;
      Tensor one({3, H, W});
      for (int64_t i = 0; i < plane; ++i) one[i] = frames_val[slot * plane + i];
      out.push_back(std::move(one));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sync-expert training

namespace {

struct PairSample {
  Tensor video;  // [1, 3T, H/2, W]
  Tensor audio;  // [1, 1, seg, bins]
};

Tensor video_window_tensor(data::ClipCache& cache, int clip_idx, int t0, int T) {
  const synth::VideoClip& c = cache.clip(clip_idx);
  const int H = c.height, W = c.width;
  Tensor out({1, 3 * T, H / 2, W});
  int64_t plane = static_cast<int64_t>(H) * W;
  int64_t half = plane / 2;
  for (int t = 0; t < T; ++t) {
    Tensor f = cache.frame_tensor(clip_idx, t0 + t);
    for (int ch = 0; ch < 3; ++ch) {
      const double* src = f.data() + ch * plane + half;  // lower half
      double* dst = out.data() + (static_cast<int64_t>(t) * 3 + ch) * half;
      for (int64_t i = 0; i < half; ++i) dst[i] = src[i];
    }
  }
  return out;
}

Tensor audio_window_tensor(data::ClipCache& cache, int clip_idx, int center_frame) {
  Tensor seg = audio::audio_segment(cache.mel(clip_idx), center_frame, cache.config().mel);
  return seg.reshaped({1, 1, seg.dim(0), seg.dim(1)});
}

Tensor stack0(const std::vector<Tensor>& xs) {
  std::vector<int> shape = xs[0].shape();
  shape[0] = static_cast<int>(xs.size());
  Tensor out(shape);
  int64_t n = xs[0].size();
  for (size_t i = 0; i < xs.size(); ++i)
    for (int64_t j = 0; j < n; ++j) out[static_cast<int64_t>(i) * n + j] = xs[i][j];
  return out;
}

struct SyncBatch {
  Tensor videos, videos_off, audios, audios_off;  // [B,...] each
};

SyncBatch sample_sync_batch(data::ClipCache& cache, const std::vector<int>& pool, int B, int T,
                            int off_min, int off_max, Rng& rng) {
  std::vector<Tensor> v, voff, a, aoff;
  for (int b = 0; b < B; ++b) {
    int idx = pool[static_cast<size_t>(rng.below(static_cast<int64_t>(pool.size())))];
    const synth::VideoClip& c = cache.clip(idx);
    int t0 = static_cast<int>(rng.below(c.frame_count() - T + 1));
    int delta = static_cast<int>(rng.below(off_max - off_min + 1)) + off_min;
    if (rng.uniform() < 0.5) delta = -delta;
    int center = t0 + T / 2;
    int off_center = center + delta;
    if (off_center < 0 || off_center > c.frame_count() - 1) off_center = center - delta;
    int off_start = std::min(std::max(0, t0 + delta), c.frame_count() - T);

    v.push_back(video_window_tensor(cache, idx, t0, T));
    voff.push_back(video_window_tensor(cache, idx, off_start, T));
    a.push_back(audio_window_tensor(cache, idx, center));
    aoff.push_back(audio_window_tensor(cache, idx, off_center));
  }
  return {stack0(v), stack0(voff), stack0(a), stack0(aoff)};
}

Var info_nce(Var anchors, Var positives, Var extra_negatives, double temperature,
             std::vector<int> targets) {
  Var bank = concat({positives, extra_negatives}, 0);      // [2B, C]
  Var logits = scale(matmul_nt(anchors, bank), 1.0 / temperature);  // [B, 2B]
  Var lse = logsumexp_rows(logits);
  Var pos = take_cols(logits, std::move(targets));
  return mean(sub(lse, pos));
}

double heldout_sync_loss(sync::SyncExpert& expert, data::ClipCache& cache,
                         const std::vector<int>& pool, int64_t seed) {
  const cfg::GlobalConfig& cfg = expert.config();
  Rng rng(static_cast<uint64_t>(seed));
  SyncBatch sb = sample_sync_batch(cache, pool, cfg.sync.batch_pairs, cfg.frames_per_window,
                                   cfg.sync.offset_min, cfg.sync.offset_max, rng);
  Tape tape;
  Binder bind(tape, /*freeze=*/true);
  Var fv = expert.embed_video_stacked(bind, tape.input(sb.videos));
  Var fvo = expert.embed_video_stacked(bind, tape.input(sb.videos_off));
  Var fa = expert.embed_audio(bind, tape.input(sb.audios));
  Var fao = expert.embed_audio(bind, tape.input(sb.audios_off));
  std::vector<int> targets(static_cast<size_t>(cfg.sync.batch_pairs));
  for (int i = 0; i < cfg.sync.batch_pairs; ++i) targets[static_cast<size_t>(i)] = i;
  Var lv = info_nce(fv, fa, fao, cfg.sync.temperature, targets);
  Var la = info_nce(fa, fv, fvo, cfg.sync.temperature, targets);
  return 0.5 * (lv.val()[0] + la.val()[0]);
}

}  // namespace

SyncTrainResult train_sync_expert(sync::SyncExpert& expert, data::ClipCache& cache,
                                  const std::vector<int>& pool, int steps, int64_t seed,
                                  std::ostream* log) {
  require(!pool.empty(), ErrorCode::InvalidArgument, "train_sync_expert: empty corpus pool");
  const cfg::GlobalConfig& cfg = expert.config();
  const int B = cfg.sync.batch_pairs, T = cfg.frames_per_window;
  Rng rng(static_cast<uint64_t>(seed));
  nn::Adam opt(cfg.optim.lr, cfg.optim.beta1, cfg.optim.beta2, cfg.optim.eps);
  std::vector<int> targets(static_cast<size_t>(B));
  for (int i = 0; i < B; ++i) targets[static_cast<size_t>(i)] = i;

  SyncTrainResult result;
  result.heldout_initial = heldout_sync_loss(expert, cache, pool, seed ^ 0x7e57);

  for (int s = 0; s < steps; ++s) {
    SyncBatch sb = sample_sync_batch(cache, pool, B, T, cfg.sync.offset_min, cfg.sync.offset_max, rng);
    Tape tape;
    Binder bind(tape);
    Var fv = expert.embed_video_stacked(bind, tape.input(sb.videos));
    Var fvo = expert.embed_video_stacked(bind, tape.input(sb.videos_off));
    Var fa = expert.embed_audio(bind, tape.input(sb.audios));
    Var fao = expert.embed_audio(bind, tape.input(sb.audios_off));
    Var loss = scale(add(info_nce(fv, fa, fao, cfg.sync.temperature, targets),
                         info_nce(fa, fv, fvo, cfg.sync.temperature, targets)),
                     0.5);
    double lv = loss.val()[0];
    require(std::isfinite(lv), ErrorCode::RuntimeFailure,
            "non-finite sync loss at step " + std::to_string(s + 1));
    expert.params().zero_grad();
    tape.backward(loss);
    bind.collect_grads();
    std::vector<nn::Param*> params = expert.params().all();
    opt.step(params);
    result.losses.push_back(lv);
    if (log) (*log) << nlohmann::json({{"step", s + 1}, {"sync_nce", lv}}).dump() << "\n";
  }
  result.heldout_final = heldout_sync_loss(expert, cache, pool, seed ^ 0x7e57);
  return result;
}

double sync_auc(sync::SyncExpert& expert, data::ClipCache& cache, const std::vector<int>& pool,
                int pairs, int64_t seed) {
  require(pool.size() >= 2, ErrorCode::InvalidArgument, "sync_auc: need at least two clips");
  const cfg::GlobalConfig& cfg = expert.config();
  const int T = cfg.frames_per_window;
  Rng rng(static_cast<uint64_t>(seed));

  std::vector<double> matched, mismatched;
  for (int i = 0; i < pairs; ++i) {
    int idx = pool[static_cast<size_t>(rng.below(static_cast<int64_t>(pool.size())))];
    const synth::VideoClip& c = cache.clip(idx);
    int t0 = static_cast<int>(rng.below(c.frame_count() - T + 1));
    int other = idx;
    while (other == idx) other = pool[static_cast<size_t>(rng.below(static_cast<int64_t>(pool.size())))];
    const synth::VideoClip& co = cache.clip(other);
    int t1 = static_cast<int>(rng.below(co.frame_count() - T + 1));

    Tape tape;
    Binder bind(tape, /*freeze=*/true);
    Var fv = expert.embed_video_stacked(bind, tape.input(video_window_tensor(cache, idx, t0, T)));
    Var fa = expert.embed_audio(bind, tape.input(audio_window_tensor(cache, idx, t0 + T / 2)));
    Var fam = expert.embed_audio(bind, tape.input(audio_window_tensor(cache, other, t1 + T / 2)));
    matched.push_back(sync::sync_distance(fv.val(), fa.val()));
    mismatched.push_back(sync::sync_distance(fv.val(), fam.val()));
  }
  // AUC of "matched has smaller distance" via the rank statistic.
  double wins = 0.0;
  for (double m : matched)
    for (double n : mismatched) wins += m < n ? 1.0 : (m == n ? 0.5 : 0.0);
  return wins / (static_cast<double>(matched.size()) * mismatched.size());
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckResult gradient_check(const cfg::GlobalConfig& cfg, int samples, uint64_t seed) {
  models::Generator gen(cfg, seed);
  sync::SyncExpert expert(cfg, seed ^ 0xfeed);
  const int B = 2, T = cfg.frames_per_window;
  const int H = cfg.resolution;

  Rng rng(seed ^ 0xda7a);
  auto uniform_tensor = [&](std::vector<int> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
  };
  Tensor masked = uniform_tensor({B * T, 3, H, H}, 0.0, 1.0);
  Tensor target = uniform_tensor({B * T, 3, H, H}, 0.0, 1.0);
  Tensor audio = uniform_tensor({B * T, 1, cfg.mel.segment_frames, cfg.mel.bins}, -11.5, 2.0);
  Tensor sync_audio = uniform_tensor({B, 1, cfg.mel.segment_frames, cfg.mel.bins}, -11.5, 2.0);
  Tensor refs = uniform_tensor({B, 3, H, H}, 0.0, 1.0);

  auto eval_loss = [&](bool backprop) {
    Tape tape;
    Binder bind(tape, /*freeze=*/!backprop);
    models::Generator::WindowForward fw = gen.forward_window(
        bind, tape.input(masked), tape.input(audio), tape.input(refs), B, T);
    Var perc = gen.perceptual().loss(bind, fw.frames, tape.input(target));
    Var total = scale(perc, cfg.loss.lambda_perceptual);
    Binder frozen(tape, /*freeze=*/true);
    Var stacked = stack_video_windows(fw.frames, B, T, H);
    Var fv = expert.embed_video_stacked(frozen, stacked);
    Var fa = expert.embed_audio(frozen, tape.input(sync_audio));
    total = add(total, scale(mean(sync::sync_distance_rows(fv, fa)), cfg.loss.lambda_sync));
    double v = total.val()[0];
    if (backprop) {
      gen.params().zero_grad();
      tape.backward(total);
      bind.collect_grads();
    }
    return v;
  };

  eval_loss(true);

  // Uniform sample over all trainable coordinates.
  std::vector<nn::Param*> params = gen.trainable_params();
  std::vector<std::pair<nn::Param*, int64_t>> coords;
  int64_t total_coords = 0;
  for (nn::Param* p : params) total_coords += p->value.size();
  Rng pick(seed ^ 0x9dc);
  for (int i = 0; i < samples; ++i) {
    int64_t flat = pick.below(total_coords);
    for (nn::Param* p : params) {
      if (flat < p->value.size()) {
        coords.push_back({p, flat});
        break;
      }
      flat -= p->value.size();
    }
  }

  GradCheckResult result;
  for (auto& [p, idx] : coords) {
    double analytic = p->grad[idx];
    double theta = p->value[idx];
    double h = 1e-5 * std::max(1.0, std::fabs(theta));
    p->value[idx] = theta + h;
    double fp = eval_loss(false);
    p->value[idx] = theta - h;
    double fm = eval_loss(false);
    p->value[idx] = theta;
    double fd = (fp - fm) / (2.0 * h);
    double rel = std::fabs(fd - analytic) / std::max({std::fabs(fd), std::fabs(analytic), 1e-8});
    result.max_rel_err = std::max(result.max_rel_err, rel);
    ++result.checked;
  }
  return result;
}

}  // namespace lipsync::train

#include "lipsync/cli.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "lipsync/adaptation.hpp"
#include "lipsync/config.hpp"
#include "lipsync/data.hpp"
#include "lipsync/metrics.hpp"
#include "lipsync/models.hpp"
#include "lipsync/sync_expert.hpp"
#include "lipsync/synth.hpp"
#include "lipsync/training.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lipsync::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void apply_threads(const cfg::GlobalConfig& cfg) {
  if (cfg.threads > 0) {
    set_worker_threads(cfg.threads);
#ifdef _OPENMP
    omp_set_num_threads(cfg.threads);
#endif
  }
}

std::string nonempty(const std::string& flag_value, const std::string& cfg_value,
                     const std::string& what) {
  if (!flag_value.empty()) return flag_value;
  if (!cfg_value.empty()) return cfg_value;
  fail(ErrorCode::InvalidConfig, "missing required path: " + what);
}

struct SynthArgs {
  std::string out;
  int clips = 0;
  int64_t seed = 0;
  double duration = 4.0;
  int identities = 64;
  int resolution = 64;
  int expression_dim = 8;
};

int cmd_synth(const SynthArgs& a) {
  synth::generate_corpus(a.out, a.clips, a.seed, a.duration, a.identities, a.resolution,
                         a.expression_dim);
  std::cout << "wrote " << a.clips << " clips to " << a.out << "\n";
  return 0;
}

struct PathArgs {
  std::string config;
  std::string data, out, checkpoint, sync_expert;
};

int cmd_train_sync(const PathArgs& a) {
  cfg::GlobalConfig cfg = cfg::config_from_file(a.config);
  apply_threads(cfg);
  std::string data = nonempty(a.data, cfg.paths.data, "--data / paths.data");
  std::string out = nonempty(a.out, cfg.paths.out, "--out / paths.out");

  data::ClipCache cache(data, cfg);
  sync::SyncExpert expert(cfg, static_cast<uint64_t>(cfg.sync.seed));
  fs::create_directories(out);
  std::ofstream log(fs::path(out) / "sync_train_log.jsonl");
  train::SyncTrainResult result =
      train::train_sync_expert(expert, cache, cache.split("train"), cfg.sync.steps, cfg.sync.seed, &log);

  train::CheckpointInfo info;
  info.kind = "sync_expert";
  info.step = cfg.sync.steps;
  info.config = cfg;
  train::save_checkpoint((fs::path(out) / "sync_expert").string(), expert.params(), info);
  std::cout << "sync expert trained: held-out loss " << result.heldout_initial << " -> "
            << result.heldout_final << "\n";
  return 0;
}

int cmd_train(const PathArgs& a) {
  cfg::GlobalConfig cfg = cfg::config_from_file(a.config);
  apply_threads(cfg);
  std::string data = nonempty(a.data, cfg.paths.data, "--data / paths.data");
  std::string out = nonempty(a.out, cfg.paths.out, "--out / paths.out");

  data::ClipCache cache(data, cfg);
  std::unique_ptr<sync::SyncExpert> expert;
  if (cfg.loss.lambda_sync > 0.0) {
    std::string expert_path =
        nonempty(a.sync_expert, cfg.paths.sync_expert, "--sync-expert / paths.sync_expert");
    expert = train::load_sync_expert_checkpoint(expert_path).expert;
  }

  models::Generator gen(cfg, static_cast<uint64_t>(cfg.train.seed));
  fs::create_directories(out);
  std::ofstream log(fs::path(out) / "train_log.jsonl");
  train::Trainer trainer(gen, expert.get(), cache, &log);
  trainer.run(cfg.train.steps);

  train::CheckpointInfo info;
  info.kind = "generator";
  info.step = cfg.train.steps;
  info.config = cfg;
  train::save_checkpoint((fs::path(out) / "checkpoint").string(), gen.params(), info);
  std::cout << "generator trained for " << cfg.train.steps << " steps -> " << out << "\n";
  return 0;
}

struct AdaptArgs : PathArgs {
  std::string target;
};

int cmd_adapt(const AdaptArgs& a) {
  cfg::GlobalConfig file_cfg = cfg::config_from_file(a.config);
  train::LoadedGenerator loaded = train::load_generator_checkpoint(
      nonempty(a.checkpoint, file_cfg.paths.checkpoint, "--checkpoint / paths.checkpoint"));
  // The checkpoint pins the architecture; the file config provides the
  // adaptation schedule, paths and ablation flags.
  cfg::GlobalConfig cfg = loaded.info.config;
  cfg.adapt = file_cfg.adapt;
  cfg.loss = file_cfg.loss;
  cfg.ablation.sync_reg_enabled = file_cfg.ablation.sync_reg_enabled;
  cfg.paths = file_cfg.paths;
  cfg.threads = file_cfg.threads;
  apply_threads(cfg);
  models::Generator& gen = *loaded.generator;
  const_cast<cfg::GlobalConfig&>(gen.config()) = cfg;

  std::string data = nonempty(a.data, cfg.paths.data, "--data / paths.data");
  std::string out = nonempty(a.out, cfg.paths.out, "--out / paths.out");
  std::string expert_path =
      nonempty(a.sync_expert, cfg.paths.sync_expert, "--sync-expert / paths.sync_expert");

  data::ClipCache cache(data, cfg);
  train::LoadedSyncExpert expert = train::load_sync_expert_checkpoint(expert_path);
  adapt::TargetClip target(synth::read_clip(a.target), cfg);

  adapt::AdaptOptions opts;
  opts.lambda_reg = cfg.ablation.sync_reg_enabled ? cfg.loss.lambda_reg : 0.0;
  opts.steps = cfg.adapt.steps;
  opts.lr = cfg.adapt.lr;
  opts.seed = cfg.adapt.seed;
  opts.batch_windows = cfg.train.batch_clips;

  fs::create_directories(out);
  std::ofstream log(fs::path(out) / "adapt_log.jsonl");
  adapt::adapt(gen, *expert.expert, target, cache, cache.split("train"), opts, &log);

  train::CheckpointInfo info;
  info.kind = "generator";
  info.step = loaded.info.step + opts.steps;
  info.config = cfg;
  info.personalized_for = std::to_string(target.clip().identity.seed);
  train::save_checkpoint((fs::path(out) / "checkpoint").string(), gen.params(), info);
  std::cout << "adapted for identity " << info.personalized_for << " -> " << out << "\n";
  return 0;
}

struct InferArgs {
  std::string checkpoint, clip, audio, out;
};

int cmd_infer(const InferArgs& a) {
  train::LoadedGenerator loaded = train::load_generator_checkpoint(a.checkpoint);
  cfg::GlobalConfig cfg = loaded.info.config;
  apply_threads(cfg);

  synth::VideoClip source = synth::read_clip(a.clip);
  std::vector<double> wav = io::read_wav_mono16(a.audio, cfg.mel.sample_rate);
  Tensor drive_mel = audio::waveform_to_mel(wav, cfg.mel);

  adapt::TargetClip context(source, cfg);
  std::vector<Tensor> frames = adapt::generate_driven(*loaded.generator, context, drive_mel);

  // Persist as a regular clip: driven audio, source poses, openness from the
  // driving envelope, keypoints recomputed for that openness.
  synth::VideoClip out_clip;
  out_clip.width = cfg.resolution;
  out_clip.height = cfg.resolution;
  out_clip.duration = static_cast<double>(frames.size()) / out_clip.fps;
  out_clip.identity = source.identity;
  int64_t samples = static_cast<int64_t>(std::lround(out_clip.duration * out_clip.sample_rate));
  require(static_cast<int64_t>(wav.size()) >= samples, ErrorCode::InvalidArgument,
          "driving audio shorter than generated video");
  out_clip.waveform.assign(wav.begin(), wav.begin() + samples);
  std::vector<double> openness = synth::openness_from_waveform(
      out_clip.waveform, static_cast<int>(frames.size()), out_clip.sample_rate / out_clip.fps);
  for (size_t t = 0; t < frames.size(); ++t) {
    out_clip.frames.push_back(io::frame_to_image(frames[t]));
    synth::FrameMeta meta = source.meta[t];
    meta.openness = openness[t];
    meta.mouth_keypoints = synth::mouth_keypoints_px(source.identity, meta.pose, openness[t],
                                                     cfg.resolution, cfg.resolution);
    out_clip.meta.push_back(std::move(meta));
  }
  synth::write_clip(out_clip, a.out);
  std::cout << "generated " << frames.size() << " frames -> " << a.out << "\n";
  return 0;
}

struct EvalArgs : PathArgs {
  std::string split = "test";
  int max_clips = -1;
};

int cmd_eval(const EvalArgs& a) {
  train::LoadedGenerator loaded = train::load_generator_checkpoint(
      nonempty(a.checkpoint, "", "--checkpoint"));
  cfg::GlobalConfig cfg = loaded.info.config;
  apply_threads(cfg);
  std::string data = nonempty(a.data, cfg.paths.data, "--data / paths.data");
  std::string expert_path =
      nonempty(a.sync_expert, cfg.paths.sync_expert, "--sync-expert / paths.sync_expert");

  data::ClipCache cache(data, cfg);
  train::LoadedSyncExpert expert = train::load_sync_expert_checkpoint(expert_path);

  metrics::EvalOptions opts;
  opts.max_clips = a.max_clips;
  metrics::MetricReport report = metrics::evaluate(*loaded.generator, *expert.expert, cache, a.split, opts);
  report.checkpoint_id = a.checkpoint + "@" + std::to_string(loaded.info.step);

  std::string out = a.out.empty() ? "report.json" : a.out;
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  std::ofstream f(out);
  require(f.good(), ErrorCode::RuntimeFailure, "cannot write report: " + out);
  f << report.to_json_text() << "\n";
  std::cout << "psnr " << report.mean.psnr << " ssim " << report.mean.ssim << " lmd "
            << report.mean.lmd << " lse_d " << report.mean.lse_d << " lse_c " << report.mean.lse_c
            << " id_consistency " << report.mean.id_consistency << "\n";
  return 0;
}

struct AblateArgs : PathArgs {
  std::string axis;
  std::string target;
};

// Flattened key-by-key diff of two config documents.
std::vector<std::string> config_diff(const json& a, const json& b, const std::string& prefix = "") {
  std::vector<std::string> out;
  for (auto it = a.begin(); it != a.end(); ++it) {
    std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    const json& va = it.value();
    const json& vb = b.at(it.key());
    if (va.is_object()) {
      auto sub = config_diff(va, vb, key);
      out.insert(out.end(), sub.begin(), sub.end());
    } else if (va != vb) {
      out.push_back(key);
    }
  }
  return out;
}

int cmd_ablate(const AblateArgs& a) {
  cfg::GlobalConfig full = cfg::config_from_file(a.config);
  apply_threads(full);
  std::string data = nonempty(a.data, full.paths.data, "--data / paths.data");
  std::string out = nonempty(a.out, full.paths.out, "--out / paths.out");
  fs::create_directories(out);

  cfg::GlobalConfig ablated = full;
  if (a.axis == "posemask")
    ablated.ablation.pose_mask_rect = true;
  else if (a.axis == "samf")
    ablated.ablation.samf_modulated = false;
  else if (a.axis == "mals")
    ablated.ablation.mals_enabled = false;
  else if (a.axis == "syncreg")
    ablated.ablation.sync_reg_enabled = false;
  else
    fail(ErrorCode::InvalidConfig, "unknown ablation axis: " + a.axis);

  json full_json = json::parse(cfg::config_to_json_text(full));
  json abl_json = json::parse(cfg::config_to_json_text(ablated));
  std::vector<std::string> diff = config_diff(full_json, abl_json);
  require(diff.size() == 1, ErrorCode::RuntimeFailure,
          "ablated config must differ from Full in exactly one flag");

  json report;
  report["axis"] = a.axis;
  report["config_diff"] = diff;

  data::ClipCache cache_full(data, full);
  train::LoadedSyncExpert expert = train::load_sync_expert_checkpoint(
      nonempty(a.sync_expert, full.paths.sync_expert, "--sync-expert / paths.sync_expert"));

  if (a.axis == "syncreg") {
    // Adaptation-axis comparison: one adaptation with the regularizer, one
    // without, scored by held-out-audio sync distance.
    require(!a.target.empty(), ErrorCode::InvalidConfig, "--target required for syncreg axis");
    std::string ckpt = nonempty(a.checkpoint, full.paths.checkpoint, "--checkpoint");

    std::vector<Tensor> foreign;
    std::vector<int> test_pool = cache_full.split("test");
    for (size_t i = 0; i < test_pool.size() && i < 5; ++i)
      foreign.push_back(cache_full.mel(test_pool[i]));

    auto run_arm = [&](bool with_reg) {
      train::LoadedGenerator arm = train::load_generator_checkpoint(ckpt);
      const_cast<cfg::GlobalConfig&>(arm.generator->config()).ablation.sync_reg_enabled = with_reg;
      adapt::TargetClip target(synth::read_clip(a.target), full);
      adapt::AdaptOptions opts;
      opts.lambda_reg = with_reg ? full.loss.lambda_reg : 0.0;
      opts.steps = full.adapt.steps;
      opts.lr = full.adapt.lr;
      opts.seed = full.adapt.seed;
      opts.batch_windows = full.train.batch_clips;
      adapt::adapt(*arm.generator, *expert.expert, target, cache_full, cache_full.split("train"),
                   opts, nullptr);
      return adapt::cross_drive_sync_distance(*arm.generator, *expert.expert, target, foreign, 100);
    };

    {
      train::LoadedGenerator base = train::load_generator_checkpoint(ckpt);
      adapt::TargetClip target(synth::read_clip(a.target), full);
      report["pre_adaptation_sync"] =
          adapt::cross_drive_sync_distance(*base.generator, *expert.expert, target, foreign, 100);
    }
    report["with_regularizer_sync"] = run_arm(true);
    report["without_regularizer_sync"] = run_arm(false);
  } else {
    auto run_arm = [&](const cfg::GlobalConfig& cfg, const std::string& name) {
      data::ClipCache cache(data, cfg);
      std::unique_ptr<sync::SyncExpert> arm_expert;
      if (cfg.loss.lambda_sync > 0.0)
        arm_expert = train::load_sync_expert_checkpoint(
                         nonempty(a.sync_expert, cfg.paths.sync_expert, "--sync-expert"))
                         .expert;
      models::Generator gen(cfg, static_cast<uint64_t>(cfg.train.seed));
      std::ofstream log(fs::path(out) / (name + "_train_log.jsonl"));
      train::Trainer trainer(gen, arm_expert.get(), cache, &log);
      trainer.run(cfg.train.steps);
      metrics::MetricReport rep = metrics::evaluate(gen, *expert.expert, cache, "test");
      return json{{"psnr", rep.mean.psnr},   {"ssim", rep.mean.ssim},
                  {"lmd", rep.mean.lmd},     {"lse_d", rep.mean.lse_d},
                  {"lse_c", rep.mean.lse_c}, {"id_consistency", rep.mean.id_consistency}};
    };
    report["full"] = run_arm(full, "full");
    report["ablated"] = run_arm(ablated, "ablated");
  }

  std::ofstream f(fs::path(out) / "ablate_report.json");
  require(f.good(), ErrorCode::RuntimeFailure, "cannot write ablate report");
  f << report.dump(1) << "\n";
  std::cout << report.dump(1) << "\n";
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Pose-aware masked lip-sync video generation lab"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth_cmd = app.add_subcommand("synth-data", "Generate a synthetic audio-visual corpus");
  synth_cmd->add_option("--out", synth_args.out, "Output corpus directory")->required();
  synth_cmd->add_option("--clips", synth_args.clips, "Number of clips")->required();
  synth_cmd->add_option("--seed", synth_args.seed, "Corpus seed")->required();
  synth_cmd->add_option("--duration", synth_args.duration, "Clip duration in seconds");
  synth_cmd->add_option("--identities", synth_args.identities, "Number of identities");
  synth_cmd->add_option("--resolution", synth_args.resolution, "Frame resolution");
  synth_cmd->add_option("--expression-dim", synth_args.expression_dim, "Blendshape count");

  PathArgs tsync_args;
  CLI::App* tsync_cmd = app.add_subcommand("train-sync", "Train the audio-visual sync expert");
  tsync_cmd->add_option("--config", tsync_args.config, "Global config JSON")->required();
  tsync_cmd->add_option("--data", tsync_args.data, "Corpus directory");
  tsync_cmd->add_option("--out", tsync_args.out, "Output directory");

  PathArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "Train the generator");
  train_cmd->add_option("--config", train_args.config, "Global config JSON")->required();
  train_cmd->add_option("--data", train_args.data, "Corpus directory");
  train_cmd->add_option("--out", train_args.out, "Output directory");
  train_cmd->add_option("--sync-expert", train_args.sync_expert, "Sync expert checkpoint");

  AdaptArgs adapt_args;
  CLI::App* adapt_cmd = app.add_subcommand("adapt", "Few-shot personalization on one clip");
  adapt_cmd->add_option("--config", adapt_args.config, "Global config JSON")->required();
  adapt_cmd->add_option("--target", adapt_args.target, "Target clip directory")->required();
  adapt_cmd->add_option("--checkpoint", adapt_args.checkpoint, "Base generator checkpoint");
  adapt_cmd->add_option("--data", adapt_args.data, "Corpus directory (regularizer audio pool)");
  adapt_cmd->add_option("--out", adapt_args.out, "Output directory");
  adapt_cmd->add_option("--sync-expert", adapt_args.sync_expert, "Sync expert checkpoint");

  InferArgs infer_args;
  CLI::App* infer_cmd = app.add_subcommand("infer", "Drive a clip with replacement audio");
  infer_cmd->add_option("--checkpoint", infer_args.checkpoint, "Generator checkpoint")->required();
  infer_cmd->add_option("--clip", infer_args.clip, "Source clip directory")->required();
  infer_cmd->add_option("--audio", infer_args.audio, "Driving WAV (16 kHz mono)")->required();
  infer_cmd->add_option("--out", infer_args.out, "Output clip directory")->required();

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Generator checkpoint")->required();
  eval_cmd->add_option("--split", eval_args.split, "Corpus split (train|test)");
  eval_cmd->add_option("--out", eval_args.out, "Report path (report.json)");
  eval_cmd->add_option("--data", eval_args.data, "Corpus directory");
  eval_cmd->add_option("--sync-expert", eval_args.sync_expert, "Sync expert checkpoint");
  eval_cmd->add_option("--max-clips", eval_args.max_clips, "Cap the number of clips");

  AblateArgs ablate_args;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "Paired Full-vs-ablated comparison");
  ablate_cmd->add_option("--axis", ablate_args.axis, "posemask|samf|mals|syncreg")->required();
  ablate_cmd->add_option("--config", ablate_args.config, "Global config JSON")->required();
  ablate_cmd->add_option("--data", ablate_args.data, "Corpus directory");
  ablate_cmd->add_option("--out", ablate_args.out, "Output directory");
  ablate_cmd->add_option("--sync-expert", ablate_args.sync_expert, "Sync expert checkpoint");
  ablate_cmd->add_option("--checkpoint", ablate_args.checkpoint, "Base checkpoint (syncreg axis)");
  ablate_cmd->add_option("--target", ablate_args.target, "Target clip (syncreg axis)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth_args);
    if (tsync_cmd->parsed()) return cmd_train_sync(tsync_args);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (adapt_cmd->parsed()) return cmd_adapt(adapt_args);
    if (infer_cmd->parsed()) return cmd_infer(infer_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::InvalidConfig ? 3 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "no subcommand given\n" << app.help();
  return 2;
}

}  // namespace lipsync::cli

#include "lipsync/config.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <set>

namespace lipsync::cfg {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  require(j.is_object(), ErrorCode::InvalidConfig, "config: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    require(allowed.count(it.key()) == 1, ErrorCode::InvalidConfig,
            "config: unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void opt(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::InvalidConfig, std::string("config: bad value for '") + key + "'");
  }
}

void opt_flag(const json& j, const char* key, bool& out, const char* on, const char* off) {
  if (!j.contains(key)) return;
  std::string v;
  try {
    v = j.at(key).get<std::string>();
  } catch (const json::exception&) {
    fail(ErrorCode::InvalidConfig, std::string("config: '") + key + "' must be a string");
  }
  if (v == on)
    out = true;
  else if (v == off)
    out = false;
  else
    fail(ErrorCode::InvalidConfig,
         std::string("config: '") + key + "' must be \"" + on + "\" or \"" + off + "\"");
}

}  // namespace

void GlobalConfig::validate() const {
  require(resolution >= 16, ErrorCode::InvalidConfig, "resolution must be >= 16");
  require(levels >= 1 && levels <= 6, ErrorCode::InvalidConfig, "levels must be in [1,6]");
  require((resolution >> levels) >= 2 && (resolution >> levels) << levels == resolution,
          ErrorCode::InvalidConfig, "resolution must be (start>=2) * 2^levels");
  require(style_dim >= 4, ErrorCode::InvalidConfig, "style_dim must be >= 4");
  require(expression_dim >= 1, ErrorCode::InvalidConfig, "expression_dim must be >= 1");
  require(frames_per_window == 5, ErrorCode::InvalidConfig,
          "frames_per_window is fixed at 5 for sync-expert compatibility");

  double asum = mals.alpha[0] + mals.alpha[1] + mals.alpha[2];
  for (double a : mals.alpha)
    require(a >= 0.0, ErrorCode::InvalidConfig, "mals.alpha components must be >= 0");
  require(std::fabs(asum - 1.0) < 1e-9, ErrorCode::InvalidConfig, "mals.alpha must sum to 1");
  require(mals.hidden >= 1, ErrorCode::InvalidConfig, "mals.hidden must be >= 1");

  require(loss.lambda_perceptual >= 0.0 && loss.lambda_sync >= 0.0 && loss.lambda_reg >= 0.0,
          ErrorCode::InvalidConfig, "loss weights must be >= 0");
  require(loss.perceptual_levels >= 1 && loss.perceptual_levels <= 3, ErrorCode::InvalidConfig,
          "loss.perceptual_levels must be in [1,3]");
  require(loss.perceptual_channels >= 1, ErrorCode::InvalidConfig,
          "loss.perceptual_channels must be >= 1");

  require(optim.lr > 0.0 && optim.beta1 >= 0.0 && optim.beta1 < 1.0 && optim.beta2 >= 0.0 &&
              optim.beta2 < 1.0 && optim.eps > 0.0,
          ErrorCode::InvalidConfig, "bad optimizer settings");
  require(train.batch_clips >= 1 && train.steps >= 0, ErrorCode::InvalidConfig,
          "bad train settings");
  require(adapt.steps >= 0 && adapt.lr > 0.0, ErrorCode::InvalidConfig, "bad adapt settings");
  require(sync.embed_dim >= 4 && sync.temperature > 0.0 && sync.offset_min >= 1 &&
              sync.offset_max >= sync.offset_min && sync.batch_pairs >= 2 && sync.steps >= 0,
          ErrorCode::InvalidConfig, "bad sync settings");

  require(static_cast<int>(model.decoder_channels.size()) == levels + 1, ErrorCode::InvalidConfig,
          "model.decoder_channels must list levels+1 entries");
  for (int c : model.decoder_channels)
    require(c >= 1, ErrorCode::InvalidConfig, "decoder channels must be >= 1");

  require(mel.bins >= 8 && mel.hop >= 1 && mel.window >= mel.hop && mel.log_floor > 0.0 &&
              mel.fmax > mel.fmin && mel.segment_frames >= 2 && mel.segment_frames % 2 == 0,
          ErrorCode::InvalidConfig, "bad mel settings");
  require(w_avg_decay > 0.0 && w_avg_decay < 1.0, ErrorCode::InvalidConfig,
          "w_avg_decay must be in (0,1)");
  require(threads >= 0, ErrorCode::InvalidConfig, "threads must be >= 0");
}

GlobalConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("config parse error: ") + e.what());
  }

  GlobalConfig c;
  reject_unknown(j, {"resolution", "levels", "style_dim", "expression_dim", "frames_per_window",
                     "mel", "mals", "loss", "optim", "train", "adapt", "sync", "model", "ablation",
                     "paths", "w_avg_decay", "threads"},
                 "top level");
  opt(j, "resolution", c.resolution);
  opt(j, "levels", c.levels);
  opt(j, "style_dim", c.style_dim);
  opt(j, "expression_dim", c.expression_dim);
  opt(j, "frames_per_window", c.frames_per_window);
  opt(j, "w_avg_decay", c.w_avg_decay);
  opt(j, "threads", c.threads);

  if (j.contains("mel")) {
    const json& m = j.at("mel");
    reject_unknown(m, {"bins", "hop", "window", "fmin", "fmax", "log_floor", "segment_frames"},
                   "mel");
    opt(m, "bins", c.mel.bins);
    opt(m, "hop", c.mel.hop);
    opt(m, "window", c.mel.window);
    opt(m, "fmin", c.mel.fmin);
    opt(m, "fmax", c.mel.fmax);
    opt(m, "log_floor", c.mel.log_floor);
    opt(m, "segment_frames", c.mel.segment_frames);
  }
  if (j.contains("mals")) {
    const json& m = j.at("mals");
    reject_unknown(m, {"alpha", "hidden"}, "mals");
    if (m.contains("alpha")) {
      std::vector<double> a;
      opt(m, "alpha", a);
      require(a.size() == 3, ErrorCode::InvalidConfig, "mals.alpha must have 3 entries");
      c.mals.alpha = {a[0], a[1], a[2]};
    }
    opt(m, "hidden", c.mals.hidden);
  }
  if (j.contains("loss")) {
    const json& m = j.at("loss");
    reject_unknown(m,
                   {"lambda_perceptual", "lambda_sync", "lambda_reg", "perceptual_levels",
                    "perceptual_channels"},
                   "loss");
    opt(m, "lambda_perceptual", c.loss.lambda_perceptual);
    opt(m, "lambda_sync", c.loss.lambda_sync);
    opt(m, "lambda_reg", c.loss.lambda_reg);
    opt(m, "perceptual_levels", c.loss.perceptual_levels);
    opt(m, "perceptual_channels", c.loss.perceptual_channels);
  }
  if (j.contains("optim")) {
    const json& m = j.at("optim");
    reject_unknown(m, {"lr", "beta1", "beta2", "eps"}, "optim");
    opt(m, "lr", c.optim.lr);
    opt(m, "beta1", c.optim.beta1);
    opt(m, "beta2", c.optim.beta2);
    opt(m, "eps", c.optim.eps);
  }
  if (j.contains("train")) {
    const json& m = j.at("train");
    reject_unknown(m, {"batch_clips", "steps", "seed"}, "train");
    opt(m, "batch_clips", c.train.batch_clips);
    opt(m, "steps", c.train.steps);
    opt(m, "seed", c.train.seed);
  }
  if (j.contains("adapt")) {
    const json& m = j.at("adapt");
    reject_unknown(m, {"steps", "lr", "seed"}, "adapt");
    opt(m, "steps", c.adapt.steps);
    opt(m, "lr", c.adapt.lr);
    opt(m, "seed", c.adapt.seed);
  }
  if (j.contains("sync")) {
    const json& m = j.at("sync");
    reject_unknown(
        m, {"embed_dim", "temperature", "offset_min", "offset_max", "batch_pairs", "steps", "seed"},
        "sync");
    opt(m, "embed_dim", c.sync.embed_dim);
    opt(m, "temperature", c.sync.temperature);
    opt(m, "offset_min", c.sync.offset_min);
    opt(m, "offset_max", c.sync.offset_max);
    opt(m, "batch_pairs", c.sync.batch_pairs);
    opt(m, "steps", c.sync.steps);
    opt(m, "seed", c.sync.seed);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m, {"decoder_channels", "freeze_non_samf"}, "model");
    opt(m, "decoder_channels", c.model.decoder_channels);
    opt(m, "freeze_non_samf", c.model.freeze_non_samf);
  }
  if (j.contains("ablation")) {
    const json& m = j.at("ablation");
    reject_unknown(m, {"pose_mask", "samf", "mals", "mals_literal_eq4", "sync_reg"}, "ablation");
    bool pose_on = !c.ablation.pose_mask_rect;
    opt_flag(m, "pose_mask", pose_on, "on", "rect");
    c.ablation.pose_mask_rect = !pose_on;
    opt_flag(m, "samf", c.ablation.samf_modulated, "on", "off");
    opt_flag(m, "mals", c.ablation.mals_enabled, "on", "off");
    bool literal = c.ablation.mals_literal_eq4;
    opt_flag(m, "mals_literal_eq4", literal, "on", "off");
    c.ablation.mals_literal_eq4 = literal;
    opt_flag(m, "sync_reg", c.ablation.sync_reg_enabled, "on", "off");
  }
  if (j.contains("paths")) {
    const json& m = j.at("paths");
    reject_unknown(m, {"data", "out", "checkpoint", "sync_expert"}, "paths");
    opt(m, "data", c.paths.data);
    opt(m, "out", c.paths.out);
    opt(m, "checkpoint", c.paths.checkpoint);
    opt(m, "sync_expert", c.paths.sync_expert);
  }

  c.validate();
  return c;
}

GlobalConfig config_from_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::InvalidConfig, "cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return config_from_json_text(text);
}

std::string config_to_json_text(const GlobalConfig& c) {
  json j;
  j["resolution"] = c.resolution;
  j["levels"] = c.levels;
  j["style_dim"] = c.style_dim;
  j["expression_dim"] = c.expression_dim;
  j["frames_per_window"] = c.frames_per_window;
  j["mel"] = {{"bins", c.mel.bins},         {"hop", c.mel.hop},
              {"window", c.mel.window},     {"fmin", c.mel.fmin},
              {"fmax", c.mel.fmax},         {"log_floor", c.mel.log_floor},
              {"segment_frames", c.mel.segment_frames}};
  j["mals"] = {{"alpha", c.mals.alpha}, {"hidden", c.mals.hidden}};
  j["loss"] = {{"lambda_perceptual", c.loss.lambda_perceptual},
               {"lambda_sync", c.loss.lambda_sync},
               {"lambda_reg", c.loss.lambda_reg},
               {"perceptual_levels", c.loss.perceptual_levels},
               {"perceptual_channels", c.loss.perceptual_channels}};
  j["optim"] = {{"lr", c.optim.lr}, {"beta1", c.optim.beta1}, {"beta2", c.optim.beta2}, {"eps", c.optim.eps}};
  j["train"] = {{"batch_clips", c.train.batch_clips}, {"steps", c.train.steps}, {"seed", c.train.seed}};
  j["adapt"] = {{"steps", c.adapt.steps}, {"lr", c.adapt.lr}, {"seed", c.adapt.seed}};
  j["sync"] = {{"embed_dim", c.sync.embed_dim},   {"temperature", c.sync.temperature},
               {"offset_min", c.sync.offset_min}, {"offset_max", c.sync.offset_max},
               {"batch_pairs", c.sync.batch_pairs}, {"steps", c.sync.steps},
               {"seed", c.sync.seed}};
  j["model"] = {{"decoder_channels", c.model.decoder_channels},
                {"freeze_non_samf", c.model.freeze_non_samf}};
  j["ablation"] = {{"pose_mask", c.ablation.pose_mask_rect ? "rect" : "on"},
                   {"samf", c.ablation.samf_modulated ? "on" : "off"},
                   {"mals", c.ablation.mals_enabled ? "on" : "off"},
                   {"mals_literal_eq4", c.ablation.mals_literal_eq4 ? "on" : "off"},
                   {"sync_reg", c.ablation.sync_reg_enabled ? "on" : "off"}};
  j["paths"] = {{"data", c.paths.data},
                {"out", c.paths.out},
                {"checkpoint", c.paths.checkpoint},
                {"sync_expert", c.paths.sync_expert}};
  j["w_avg_decay"] = c.w_avg_decay;
  j["threads"] = c.threads;
  return j.dump(1);
}

}  // namespace lipsync::cfg

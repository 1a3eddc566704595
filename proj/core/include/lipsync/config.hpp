#pragma once

#include <array>
#include <string>
#include <vector>

#include "lipsync/mel.hpp"

namespace lipsync::cfg {

// One JSON document drives every command. Defaults reproduce the full
// (un-ablated) configuration; unknown keys are rejected on load.
struct GlobalConfig {
  int resolution = 64;
  int levels = 4;        // L: decoder blocks / pyramid levels
  int style_dim = 64;    // D
  int expression_dim = 8;
  int frames_per_window = 5;  // T, fixed by the sync-expert interface

  audio::MelParams mel;

  struct Mals {
    std::array<double, 3> alpha{0.25, 0.5, 0.25};
    int hidden = 64;
  } mals;

  struct Loss {
    double lambda_perceptual = 10.0;  // lambda_1
    double lambda_sync = 0.1;         // lambda_2
    double lambda_reg = 0.1;          // lambda_R
    int perceptual_levels = 3;
    int perceptual_channels = 6;
  } loss;

  struct Optim {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  } optim;

  struct Train {
    int batch_clips = 4;
    int steps = 2000;
    int64_t seed = 1;
  } train;

  struct Adapt {
    int steps = 500;
    double lr = 1e-4;
    int64_t seed = 1;
  } adapt;

  struct Sync {
    int embed_dim = 128;
    double temperature = 0.07;
    int offset_min = 5;
    int offset_max = 15;
    int batch_pairs = 32;
    int steps = 1500;
    int64_t seed = 1;
  } sync;

  struct Model {
    // Channels for [constant, block_1 .. block_L] outputs, coarse to fine.
    std::vector<int> decoder_channels{24, 24, 16, 12, 8};
    bool freeze_non_samf = false;
  } model;

  struct Ablation {
    bool pose_mask_rect = false;   // "rect": fixed lower-half box
    bool samf_modulated = true;    // off: standard conv predicts the fusion mask
    bool mals_enabled = true;      // off: no temporal smoothing
    bool mals_literal_eq4 = false; // average full codes instead of deviations
    bool sync_reg_enabled = true;  // adaptation regularizer
  } ablation;

  struct Paths {
    std::string data, out, checkpoint, sync_expert;
  } paths;

  double w_avg_decay = 0.995;
  int threads = 0;  // 0 = auto

  void validate() const;  // throws Error(InvalidConfig)
};

GlobalConfig config_from_json_text(const std::string& text);
GlobalConfig config_from_file(const std::string& path);
std::string config_to_json_text(const GlobalConfig& cfg);

}  // namespace lipsync::cfg

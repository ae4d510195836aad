#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lattrack/archive.hpp"
#include "lattrack/model.hpp"
#include "lattrack/synth.hpp"

namespace lattrack {

struct SplitConfig {
  std::uint64_t seed = 0;  // sequence i uses seed + i
  std::vector<std::pair<SequenceProfile, int>> parts;

  int count() const;
  json to_json() const;
  static SplitConfig from_json(const json& j, const std::string& name);
};

struct DataConfig {
  std::string root = "data";
  int length = 40;
  int width = 256;
  int height = 256;
  double noise_std = 0.02;
  std::map<std::string, SplitConfig> splits;

  ProfileOptions profile_options() const { return {length, width, height, noise_std}; }
  json to_json() const;
  static DataConfig from_json(const json& j);
};

struct CodecStageConfig {
  CodecTrainConfig train;
  std::string split = "train";
  int crops = 1200;          // training crops drawn from the split
  int holdout_crops = 200;   // drawn from `holdout_split` for calibration and PSNR
  std::string holdout_split = "val";
};

struct TrainConfig {
  int stage = 1;
  std::string scope = "generalist";  // stage 2 only
  int batch_size = 16;
  int steps = 3000;
  double lr_backbone = 1e-4;
  double lr_head = 1e-3;
  double floor_frac = 0.01;
  double weight_decay = 1e-3;
  double giou_weight = 2.0;
  double l1_weight = 5.0;
  std::uint64_t seed = 1;
  bool rgb_only = false;
  bool no_zero_init = false;
  bool tune_unet_stage2 = false;
  bool tune_text = true;             // stage 1: the text encoder trains with the self-attention set
  double caption_dropout = 0.5;
  double retarget_prob = 0.5;        // caption names the tethered confuser instead of the target
  double center_jitter = 0.5;        // fraction of sqrt(w h), per axis
  double scale_jitter = 0.25;        // log-uniform half range of the search side
  std::string train_split = "train";
  std::string val_split = "val";
  int val_size = 32;
  int val_every = 100;
  int log_every = 10;
  int generalist_step_factor = 1;    // stage 2: the generalist runs steps x factor

  /// Optimizer steps actually taken (the generalist scales by its factor).
  int effective_steps() const { return stage == 2 && scope == "generalist" ? steps * generalist_step_factor : steps; }

  json to_json() const;
  static TrainConfig from_json(const json& j);
};

struct EvalConfig {
  double precision_at = 20.0;
  std::vector<std::string> modes = {"rgb"};
};

struct RuntimeConfig {
  std::string out_dir = "runs";
  int workers = 1;
};

struct RunConfig {
  ModelConfig model;
  DataConfig data;
  CodecStageConfig codec;
  TrainConfig stage1;
  TrainConfig stage2;
  EvalConfig eval;
  RuntimeConfig runtime;

  static RunConfig defaults();
  json to_json() const;
  /// Overlays `user` onto the defaults; unknown keys and type mismatches
  /// raise configuration errors naming the offending key.
  static RunConfig from_json(const json& user);
  static RunConfig load(const std::filesystem::path& path);
  void validate() const;
  /// Digest of everything that affects artifacts (paths and worker count excluded).
  std::string hash() const;

  std::filesystem::path codec_path() const;
  std::filesystem::path stage1_path() const;
  std::filesystem::path stage2_path(const std::string& scope) const;
  std::filesystem::path results_root() const;
  std::filesystem::path report_dir() const;
};

/// Deep merge used by RunConfig::from_json; `free` lists dotted paths whose
/// keys are user-defined (replaced wholesale).
json merge_strict(const json& defaults, const json& user, const std::vector<std::string>& free, const std::string& path = "");

}  // namespace lattrack

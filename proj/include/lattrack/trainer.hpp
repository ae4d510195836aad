#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "lattrack/config.hpp"
#include "lattrack/model.hpp"
#include "lattrack/synth.hpp"

namespace lattrack {

/// floor + (base - floor) (1 + cos(pi step / total)) / 2 with floor = floor_frac base.
double cosine_lr(int step, int total_steps, double base_lr, double floor_frac = 0.01);

/// Name predicate deciding which checkpoint parameters a stage may update.
struct TunableMask {
  int stage = 1;
  bool tune_text = true;
  bool tune_unet = false;  // stage 2 ablation: every unet.* parameter trains too

  bool trainable(const std::string& name) const;
  /// Parameters routed to the head learning rate.
  static bool head_class(const std::string& name) { return name.rfind("head.", 0) == 0; }
};

struct Batch {
  torch::Tensor search;        // [B, 3, S, S] pixels
  torch::Tensor tmpl_latent;   // [B, C_z, h_t, w_t] clean template latents
  torch::Tensor aux_search;    // [B, 3, S, S] or undefined
  torch::Tensor aux_tmpl_latent;
  std::vector<std::string> captions;
  std::vector<Modality> aux_modalities;
  std::vector<GaussianTarget> targets;
  std::vector<BBox> boxes;     // normalized gt in the search crop
  std::vector<int> sequences;  // index into the split
  std::vector<int> frames;
};

/// One sample's random draws; loading a plan is a pure function of it.
struct SamplePlan {
  int sequence = 0;
  int frame = 1;
  bool drop_caption = true;
  int retarget = -1;      // distractor index named by the caption, or -1
  int center_on = -1;     // -1 target, otherwise distractor index
  double jitter_x = 0.0;
  double jitter_y = 0.0;
  double log_scale = 0.0;
  Modality aux = Modality::Rgb;
};

/// Draws training batches from a split. Template latents are encoded once per
/// (sequence, modality) with the frozen codec.
class BatchSampler {
 public:
  BatchSampler(std::vector<SequenceRecord> sequences, Model& model, const TrainConfig& cfg,
               std::optional<SubScope> aux_scope, int workers = 1);

  SamplePlan plan(std::mt19937_64& rng) const;
  std::vector<SamplePlan> plan_batch(std::mt19937_64& rng, int n) const;
  Batch load(const std::vector<SamplePlan>& plans);

  const std::vector<SequenceRecord>& sequences() const { return seqs_; }

 private:
  struct Loaded {
    torch::Tensor search, aux_search;
    BBox box;
    GaussianTarget target;
    std::string caption;
  };
  Loaded load_one(const SamplePlan& p) const;
  torch::Tensor template_latent(int seq, Modality m);
  std::vector<int> tethered(int seq) const;

  std::vector<SequenceRecord> seqs_;
  Model& model_;
  TrainConfig cfg_;
  std::optional<SubScope> scope_;
  int workers_;
  std::map<std::pair<int, Modality>, torch::Tensor> tmpl_cache_;
  std::vector<std::vector<int>> tethered_;
};

struct TrainResult {
  int steps = 0;
  double final_val_loss = 0.0;
  std::vector<double> val_losses;  // one per validation point, step 0 first
  std::map<std::string, std::uint64_t> frozen_before;
  std::map<std::string, std::uint64_t> frozen_after;
  std::string rng_state;
};

struct TrainHooks {
  std::optional<std::filesystem::path> log_path;  // JSON lines
  std::function<void(int step, double loss)> on_step;
};

/// Loss of `model` on a fixed batch (training-mode noise off, eps = 0).
double validation_loss(Model& model, BatchSampler& sampler, const Batch& batch, SubModule* sub, LossWeights w);

/// Stage 1: self-attention layers, head (and text encoder) on RGB / RGB-N samples.
TrainResult train_stage1(Model& model, const std::vector<SequenceRecord>& train, const std::vector<SequenceRecord>& val,
                         const TrainConfig& cfg, const TrainHooks& hooks = {}, int workers = 1);

/// Stage 2: clones the sub-module for `cfg.scope` and tunes only sub.* (unless
/// tune_unet_stage2). With rgb_only the model is returned untouched.
TrainResult train_stage2(Model& model, const std::vector<SequenceRecord>& train, const std::vector<SequenceRecord>& val,
                         const TrainConfig& cfg, const TrainHooks& hooks = {}, int workers = 1);

/// Metadata block stored with a trained checkpoint.
json train_meta(const TrainConfig& cfg, const TrainResult& r, const std::string& config_hash);

}  // namespace lattrack

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <torch/torch.h>

#include "lattrack/archive.hpp"
#include "lattrack/codec.hpp"
#include "lattrack/head.hpp"
#include "lattrack/mst.hpp"
#include "lattrack/text.hpp"
#include "lattrack/unet.hpp"

namespace lattrack {

struct DiffusionConfig {
  int t_max = 1000;
  double beta_start = 8.5e-4;
  double beta_end = 1.2e-2;
  int timestep = 1;
};

struct CropConfig {
  double template_factor = 2.0;
  double search_factor = 4.0;
  int template_size = 64;
  int search_size = 128;
};

struct ModelConfig {
  CodecConfig codec;
  UNetConfig unet;
  HeadConfig head;
  TextEncoderConfig text;  // vocab_size filled from the vocabulary
  DiffusionConfig diffusion;
  CropConfig crop;
  SubModuleOptions sub;
  double window_weight = 0.49;

  json to_json() const;
  static ModelConfig from_json(const json& j);
};

/// Everything the tracker needs: frozen codec, text encoder, UNet, head and
/// any attached auxiliary sub-modules.
struct Model {
  ModelConfig cfg;
  NoiseSchedule schedule;
  Vocabulary vocab = Vocabulary::caption_grammar();
  Codec codec{nullptr};
  TextEncoder text{nullptr};
  UNet unet{nullptr};
  TrackingHead head{nullptr};
  std::map<SubScope, SubModule> subs;

  /// Fresh model with random UNet/head/text parameters around `codec`.
  static Model create(ModelConfig cfg, Codec codec, std::uint64_t seed);

  /// Caption tokens -> [1, L_c, d_cond]; the empty caption gives the null condition.
  torch::Tensor condition(const std::string& caption);
  /// Batched captions -> [B, L_c, d_cond] (gradients flow into the encoder).
  torch::Tensor conditions(const std::vector<std::string>& captions);

  /// Noisy latents -> head maps. With `sub` set, the auxiliary pair is run
  /// through it and injected into the RGB pass.
  ScoreMaps forward(const torch::Tensor& search_latent, const torch::Tensor& template_latent,
                    const torch::Tensor& cond, SubModule* sub = nullptr, const torch::Tensor& aux_search = {},
                    const torch::Tensor& aux_template = {});

  /// Sub-module serving `m` (scope-specific first, then generalist), or null.
  SubModule* sub_for(Modality m);

  void save(const std::filesystem::path& path, const json& extra_meta = json::object()) const;
  static Model load(const std::filesystem::path& path);

  /// All modules' parameters keyed by checkpoint name.
  std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const;
  std::map<std::string, std::uint64_t> checksums() const;
};

}  // namespace lattrack

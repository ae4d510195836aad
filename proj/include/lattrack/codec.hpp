#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "lattrack/archive.hpp"

namespace lattrack {

enum class Modality { Rgb, Depth, Thermal, Event };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

/// Maps crop coordinates back to the source frame. `scale` is output pixels
/// per source pixel; the source window is the square of side out_size/scale
/// centered at (center_x, center_y).
struct CropParams {
  double center_x = 0.0;
  double center_y = 0.0;
  double scale = 1.0;
  int out_size = 0;
};

struct ImageCrop {
  torch::Tensor pixels;  // [3, H, W] float32 in [0, 1]
  Modality modality = Modality::Rgb;
  CropParams params;
};

struct LatentGrid {
  torch::Tensor values;  // [C_z, h, w] (or batched [B, C_z, h, w])
  bool scale_applied = true;
};

struct NoiseSchedule {
  int t_max = 0;
  std::vector<double> beta;       // beta[t - 1] for t in 1..t_max
  std::vector<double> alpha_bar;  // cumulative product of (1 - beta)

  double beta_at(int t) const;
  double alpha_bar_at(int t) const;
};

/// Scaled-linear schedule: beta interpolated linearly in sqrt space.
NoiseSchedule compute_schedule(int t_max = 1000, double beta_start = 8.5e-4, double beta_end = 1.2e-2);

enum class NoiseMode { Inference, Training };

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps. With no explicit eps the
/// noise is standard normal from `seed` in training mode and zero in
/// inference mode.
torch::Tensor add_noise(const torch::Tensor& z0, int t, const NoiseSchedule& schedule,
                        const std::optional<torch::Tensor>& eps = std::nullopt,
                        NoiseMode mode = NoiseMode::Inference, std::uint64_t seed = 0);

LatentGrid add_noise(const LatentGrid& z0, int t, const NoiseSchedule& schedule,
                     const std::optional<torch::Tensor>& eps, NoiseMode mode, std::uint64_t seed);

/// Same as add_noise in training mode, drawing eps from an existing generator.
torch::Tensor add_noise_with(const torch::Tensor& z0, int t, const NoiseSchedule& schedule, torch::Generator& gen);

struct CodecConfig {
  int downsample = 8;       // f, power of two
  int latent_channels = 4;  // C_z
  int width = 32;           // channels of the first encoder stage
};

class CodecImpl : public torch::nn::Module {
 public:
  explicit CodecImpl(CodecConfig cfg = {});

  const CodecConfig& config() const { return cfg_; }

  /// [B, 3, H, W] in [0, 1] -> scaled latents [B, C_z, H/f, W/f].
  torch::Tensor encode(const torch::Tensor& pixels);
  /// Scaled latents -> reconstruction in [0, 1].
  torch::Tensor decode(const torch::Tensor& latents);

  double latent_scale() const { return latent_scale_.item<double>(); }
  void set_latent_scale(double s);

  bool frozen() const { return frozen_; }
  void freeze();

  /// Standardizes each latent channel over `pixels` (folded into the
  /// encoder output projection, undone in the decoder input projection), then
  /// sets latent_scale so the overall latent std is one.
  void calibrate(const torch::Tensor& pixels);

  torch::nn::ModuleList enc{nullptr};
  torch::nn::ModuleList dec{nullptr};

 private:
  torch::Tensor encode_raw(const torch::Tensor& pixels);
  torch::nn::Conv2d& out_proj();
  torch::nn::Conv2d& in_proj();

  CodecConfig cfg_;
  torch::Tensor latent_scale_;
  bool frozen_ = false;
  torch::nn::Conv2d out_proj_{nullptr};
  torch::nn::Conv2d in_proj_{nullptr};
};
TORCH_MODULE(Codec);

struct CodecTrainConfig {
  int steps = 1500;
  int batch_size = 16;
  double lr = 2e-3;
  int patch = 64;
  std::uint64_t seed = 0;
};

/// Trains the autoencoder for MSE reconstruction on `crops` ([N, 3, H, W]),
/// calibrates latent_scale and freezes it.
Codec pretrain_codec(const torch::Tensor& crops, const CodecTrainConfig& train, CodecConfig cfg = {},
                     std::vector<double>* loss_log = nullptr);

/// Encodes a single crop. Shape errors when H or W is not divisible by f.
LatentGrid encode_crop(const ImageCrop& crop, Codec& codec);

/// Peak signal-to-noise ratio (dB) of reconstructions against inputs in [0, 1].
double reconstruction_psnr(Codec& codec, const torch::Tensor& pixels);

void save_codec(const Codec& codec, Archive& ar, const json& train_config = json::object());
Codec load_codec(const Archive& ar);

}  // namespace lattrack

#include "lattrack/codec.hpp"

#include <cmath>
#include <random>

#include "lattrack/errors.hpp"

namespace lattrack {

namespace nn = torch::nn;

std::string to_string(Modality m) {
  switch (m) {
    case Modality::Rgb: return "rgb";
    case Modality::Depth: return "depth";
    case Modality::Thermal: return "thermal";
    case Modality::Event: return "event";
  }
  return "rgb";
}

Modality modality_from_string(const std::string& s) {
  if (s == "rgb") return Modality::Rgb;
  if (s == "depth") return Modality::Depth;
  if (s == "thermal") return Modality::Thermal;
  if (s == "event") return Modality::Event;
  fail(ErrorKind::Config, "unknown modality '" + s + "'");
}

// ---------------------------------------------------------------------------
// Noise schedule

double NoiseSchedule::beta_at(int t) const {
  require(t >= 1 && t <= t_max, ErrorKind::Range, "timestep " + std::to_string(t) + " outside [1, T_max]");
  return beta[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar_at(int t) const {
  require(t >= 1 && t <= t_max, ErrorKind::Range, "timestep " + std::to_string(t) + " outside [1, T_max]");
  return alpha_bar[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule compute_schedule(int t_max, double beta_start, double beta_end) {
  require(t_max >= 1, ErrorKind::Config, "schedule needs T_max >= 1");
  require(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0, ErrorKind::Config,
          "schedule needs 0 < beta_start < beta_end < 1");
  NoiseSchedule s;
  s.t_max = t_max;
  s.beta.resize(static_cast<std::size_t>(t_max));
  s.alpha_bar.resize(static_cast<std::size_t>(t_max));
  const double a = std::sqrt(beta_start);
  const double b = std::sqrt(beta_end);
  double prod = 1.0;
  for (int i = 0; i < t_max; ++i) {
    const double frac = t_max == 1 ? 0.0 : static_cast<double>(i) / (t_max - 1);
    const double r = a + (b - a) * frac;
    s.beta[i] = r * r;
    prod *= 1.0 - s.beta[i];
    s.alpha_bar[i] = prod;
  }
  return s;
}

torch::Tensor add_noise(const torch::Tensor& z0, int t, const NoiseSchedule& schedule,
                        const std::optional<torch::Tensor>& eps, NoiseMode mode, std::uint64_t seed) {
  const double abar = schedule.alpha_bar_at(t);
  torch::Tensor noise;
  if (eps) {
    require(eps->sizes() == z0.sizes(), ErrorKind::Shape, "noise shape differs from latent shape");
    require(torch::isfinite(*eps).all().item<bool>(), ErrorKind::Numeric, "noise contains non-finite values");
    noise = *eps;
  } else if (mode == NoiseMode::Training) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    noise = torch::randn(z0.sizes(), gen, z0.options());
  } else {
    return z0 * std::sqrt(abar);
  }
  return z0 * std::sqrt(abar) + noise * std::sqrt(1.0 - abar);
}

LatentGrid add_noise(const LatentGrid& z0, int t, const NoiseSchedule& schedule, const std::optional<torch::Tensor>& eps,
                     NoiseMode mode, std::uint64_t seed) {
  return {add_noise(z0.values, t, schedule, eps, mode, seed), z0.scale_applied};
}

torch::Tensor add_noise_with(const torch::Tensor& z0, int t, const NoiseSchedule& schedule, torch::Generator& gen) {
  const double abar = schedule.alpha_bar_at(t);
  auto noise = torch::randn(z0.sizes(), gen, z0.options());
  return z0 * std::sqrt(abar) + noise * std::sqrt(1.0 - abar);
}

// ---------------------------------------------------------------------------
// Codec

namespace {

nn::Conv2d conv(int in, int out, int k, int stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2));
}

int log2_exact(int f) {
  int k = 0;
  while ((1 << k) < f) ++k;
  require(f >= 2 && (1 << k) == f, ErrorKind::Config, "codec downsample factor must be a power of two >= 2");
  return k;
}

}  // namespace

CodecImpl::CodecImpl(CodecConfig cfg) : cfg_(cfg) {
  const int stages = log2_exact(cfg.downsample);
  require(cfg.latent_channels >= 1 && cfg.width >= 1, ErrorKind::Config, "codec widths must be positive");

  enc = register_module("enc", nn::ModuleList());
  int ch = 3;
  for (int s = 0; s < stages; ++s) {
    const int out = s == 0 ? cfg.width : 2 * cfg.width;
    nn::Sequential stage(conv(ch, out, 3, 2), nn::SiLU());
    if (s == stages - 1) {
      stage->push_back(conv(out, out, 3));
      stage->push_back(nn::SiLU());
    }
    enc->push_back(stage);
    ch = out;
  }
  out_proj_ = conv(ch, cfg.latent_channels, 1);
  enc->push_back(nn::Sequential(out_proj_));

  dec = register_module("dec", nn::ModuleList());
  in_proj_ = conv(cfg.latent_channels, ch, 1);
  dec->push_back(nn::Sequential(in_proj_, nn::SiLU(), conv(ch, ch, 3), nn::SiLU()));
  for (int s = 0; s < stages; ++s) {
    const int out = s == stages - 1 ? cfg.width : ch;
    dec->push_back(nn::Sequential(
        nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)),
        conv(ch, out, 3), nn::SiLU()));
    ch = out;
  }
  dec->push_back(nn::Sequential(conv(ch, 3, 3)));

  latent_scale_ = register_buffer("latent_scale", torch::ones({1}));
}

torch::nn::Conv2d& CodecImpl::out_proj() { return out_proj_; }
torch::nn::Conv2d& CodecImpl::in_proj() { return in_proj_; }

void CodecImpl::set_latent_scale(double s) {
  require(s > 0.0 && std::isfinite(s), ErrorKind::Config, "latent_scale must be positive");
  torch::NoGradGuard g;
  latent_scale_.fill_(s);
}

void CodecImpl::freeze() {
  for (auto& p : parameters()) p.set_requires_grad(false);
  frozen_ = true;
}

torch::Tensor CodecImpl::encode_raw(const torch::Tensor& pixels) {
  auto x = pixels * 2.0 - 1.0;
  for (const auto& stage : *enc) x = stage->as<nn::Sequential>()->forward(x);
  return x;
}

torch::Tensor CodecImpl::encode(const torch::Tensor& pixels) {
  require(pixels.dim() == 4 && pixels.size(1) == 3, ErrorKind::Shape, "codec expects [B, 3, H, W] input");
  const auto f = cfg_.downsample;
  require(pixels.size(2) % f == 0 && pixels.size(3) % f == 0, ErrorKind::Shape,
          "crop " + std::to_string(pixels.size(2)) + "x" + std::to_string(pixels.size(3)) +
              " not divisible by codec factor " + std::to_string(f));
  return encode_raw(pixels) * latent_scale_;
}

torch::Tensor CodecImpl::decode(const torch::Tensor& latents) {
  auto x = latents / latent_scale_;
  for (const auto& stage : *dec) x = stage->as<nn::Sequential>()->forward(x);
  return torch::sigmoid(x);
}

void CodecImpl::calibrate(const torch::Tensor& pixels) {
  torch::NoGradGuard g;
  std::vector<torch::Tensor> chunks;
  for (int64_t i = 0; i < pixels.size(0); i += 32)
    chunks.push_back(encode_raw(pixels.slice(0, i, std::min<int64_t>(i + 32, pixels.size(0)))));
  auto z = torch::cat(chunks, 0);
  auto flat = z.transpose(0, 1).reshape({cfg_.latent_channels, -1});
  auto mean = flat.mean(1);
  auto per_channel = flat.std(1).clamp_min(1e-6);
  // fold per-channel standardization into the 1x1 projections around the latent
  in_proj_->bias.add_(torch::matmul(in_proj_->weight.flatten(1), mean));
  in_proj_->weight.mul_(per_channel.view({1, -1, 1, 1}));
  out_proj_->weight.div_(per_channel.view({-1, 1, 1, 1}));
  out_proj_->bias.sub_(mean).div_(per_channel);
  z = (z - mean.view({1, -1, 1, 1})) / per_channel.view({1, -1, 1, 1});
  set_latent_scale(1.0 / z.std().item<double>());
}

Codec pretrain_codec(const torch::Tensor& crops, const CodecTrainConfig& train, CodecConfig cfg,
                     std::vector<double>* loss_log) {
  require(crops.dim() == 4 && crops.size(0) > 0, ErrorKind::Data, "codec pretraining needs a non-empty dataset");
  require(train.steps >= 1, ErrorKind::Config, "codec pretraining needs steps >= 1");
  require(crops.size(2) >= train.patch && crops.size(3) >= train.patch, ErrorKind::Data,
          "codec training crops smaller than the patch size");
  torch::manual_seed(train.seed);
  Codec codec(cfg);
  torch::optim::Adam opt(codec->parameters(), torch::optim::AdamOptions(train.lr));
  std::mt19937_64 rng(train.seed);
  const auto n = crops.size(0);
  const auto max_y = crops.size(2) - train.patch;
  const auto max_x = crops.size(3) - train.patch;
  for (int step = 0; step < train.steps; ++step) {
    std::vector<torch::Tensor> batch;
    for (int b = 0; b < train.batch_size; ++b) {
      const auto i = static_cast<int64_t>(rng() % static_cast<std::uint64_t>(n));
      const auto y = max_y > 0 ? static_cast<int64_t>(rng() % static_cast<std::uint64_t>(max_y + 1)) : 0;
      const auto x = max_x > 0 ? static_cast<int64_t>(rng() % static_cast<std::uint64_t>(max_x + 1)) : 0;
      batch.push_back(crops[i].slice(1, y, y + train.patch).slice(2, x, x + train.patch));
    }
    auto x = torch::stack(batch);
    const double lr = train.lr * 0.5 * (1.0 + std::cos(M_PI * step / train.steps));
    for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    opt.zero_grad();
    auto loss = torch::mse_loss(codec->decode(codec->encode(x)), x);
    loss.backward();
    opt.step();
    if (loss_log) loss_log->push_back(loss.item<double>());
  }
  codec->calibrate(crops);
  codec->freeze();
  return codec;
}

LatentGrid encode_crop(const ImageCrop& crop, Codec& codec) {
  require(crop.pixels.dim() == 3 && crop.pixels.size(0) == 3, ErrorKind::Shape, "crop must be [3, H, W]");
  torch::NoGradGuard g;
  return {codec->encode(crop.pixels.unsqueeze(0)).squeeze(0), true};
}

double reconstruction_psnr(Codec& codec, const torch::Tensor& pixels) {
  torch::NoGradGuard g;
  double se = 0.0;
  for (int64_t i = 0; i < pixels.size(0); i += 32) {
    auto x = pixels.slice(0, i, std::min<int64_t>(i + 32, pixels.size(0)));
    se += (codec->decode(codec->encode(x)) - x).pow(2).sum().item<double>();
  }
  const double mse = se / static_cast<double>(pixels.numel());
  return 10.0 * std::log10(1.0 / std::max(mse, 1e-12));
}

void save_codec(const Codec& codec, Archive& ar, const json& train_config) {
  ar.put_module("codec", *codec);
  const auto& c = codec->config();
  ar.meta["codec"] = {{"downsample", c.downsample},
                      {"latent_channels", c.latent_channels},
                      {"width", c.width},
                      {"latent_scale", codec->latent_scale()},
                      {"frozen", codec->frozen()},
                      {"pretrain", train_config}};
}

Codec load_codec(const Archive& ar) {
  require(ar.meta.contains("codec"), ErrorKind::Config, "checkpoint carries no codec");
  const auto& m = ar.meta.at("codec");
  CodecConfig cfg{m.at("downsample").get<int>(), m.at("latent_channels").get<int>(), m.at("width").get<int>()};
  Codec codec(cfg);
  ar.load_module("codec", *codec);
  if (m.value("frozen", false)) codec->freeze();
  return codec;
}

}  // namespace lattrack

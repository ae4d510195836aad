#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "lattrack/archive.hpp"
#include "lattrack/layers.hpp"

namespace lattrack {

struct UNetConfig {
  int latent_channels = 4;               // C_z
  int base_channels = 64;
  std::vector<int> channel_mult = {1, 2};
  int blocks_per_level = 1;
  int heads = 4;
  int cond_dim = 64;                     // must equal the text encoder width
  int time_dim = 128;
  int groups = 16;                       // GroupNorm groups
  int ff_mult = 2;
  int feature_level = -1;                // decoder level whose output feeds the head; -1 = last

  int levels() const { return static_cast<int>(channel_mult.size()); }
  int level_channels(int level) const { return base_channels * channel_mult.at(static_cast<std::size_t>(level)); }
  /// Decoder level (in processing order) that produces the tracking features.
  int tap_level() const { return feature_level < 0 ? levels() - 1 : feature_level; }
  int feature_channels() const { return level_channels(levels() - 1 - tap_level()); }
  /// Spatial downsampling of the tracking features relative to the latent grid.
  int feature_stride() const { return 1 << (levels() - 1 - tap_level()); }

  void validate() const;
  json to_json() const;
  static UNetConfig from_json(const json& j);
};

/// Dual (search, template) stream. Grids are [B, C, H, W] or token
/// sequences [B, L, C] depending on where in a block they are.
struct PairState {
  torch::Tensor search;
  torch::Tensor tmpl;

  PairState swapped() const { return {tmpl, search}; }
};

/// One snapshot per encoder level plus the middle-block output.
using LateralStash = std::vector<PairState>;

struct TokenSplit {
  std::int64_t search_len = 0;
  std::int64_t template_len = 0;
  bool operator==(const TokenSplit&) const = default;
};

struct JointTokens {
  torch::Tensor tokens;  // [B, L_s + L_t, C]
  TokenSplit split;
};

/// Search tokens first, template tokens second, along the length axis.
JointTokens concat_l(const torch::Tensor& search_tokens, const torch::Tensor& template_tokens);
/// Exact inverse of concat_l; `split` must equal the recorded split.
PairState deconcat_l(const JointTokens& joint, const TokenSplit& split);

torch::Tensor grid_to_tokens(const torch::Tensor& grid);
torch::Tensor tokens_to_grid(const torch::Tensor& tokens, std::int64_t h, std::int64_t w);

class TimestepEmbeddingImpl : public torch::nn::Module {
 public:
  TimestepEmbeddingImpl(int sinusoid_dim, int time_dim);
  torch::Tensor forward(int t);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};

 private:
  int sinusoid_dim_;
};
TORCH_MODULE(TimestepEmbedding);

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int in, int out, int time_dim, int groups);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
  torch::nn::Linear time_proj{nullptr};
};
TORCH_MODULE(ResBlock);

/// Pre-norm attention sub-layer (norm + attention) without the residual.
class NormAttentionImpl : public torch::nn::Module {
 public:
  NormAttentionImpl(int dim, int context_dim, int heads);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context);
  torch::Tensor self_attend(const torch::Tensor& x);

  torch::nn::LayerNorm norm{nullptr};
  Attention attn{nullptr};
};
TORCH_MODULE(NormAttention);

/// ResNet (per stream) -> joint self-attention over both streams' tokens ->
/// per-stream text cross-attention -> per-stream feed-forward. One parameter
/// set serves both streams.
class BasicBlockImpl : public torch::nn::Module {
 public:
  BasicBlockImpl(int in, int out, const UNetConfig& cfg);
  PairState forward(const PairState& pair, const torch::Tensor& temb, const torch::Tensor& cond);

  ResBlock res{nullptr};
  NormAttention sa{nullptr};
  NormAttention ca{nullptr};
  FeedForward ff{nullptr};

 private:
  int cond_dim_;
};
TORCH_MODULE(BasicBlock);

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const UNetConfig& cfg);

  /// Runs stem + levels; returns the per-level snapshots (before downsampling).
  LateralStash forward(const PairState& latents, const torch::Tensor& temb, const torch::Tensor& cond);

  torch::nn::Conv2d stem{nullptr};
  std::vector<std::vector<BasicBlock>> blocks;
  std::vector<torch::nn::Conv2d> down;  // one per level except the last

 private:
  UNetConfig cfg_;
};
TORCH_MODULE(Encoder);

class MidBlockImpl : public torch::nn::Module {
 public:
  explicit MidBlockImpl(const UNetConfig& cfg);
  PairState forward(const PairState& pair, const torch::Tensor& temb, const torch::Tensor& cond);

  std::vector<BasicBlock> blocks;
};
TORCH_MODULE(MidBlock);

class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const UNetConfig& cfg);

  /// `stash` holds the encoder snapshots followed by the middle output.
  PairState forward(const LateralStash& stash, const torch::Tensor& temb, const torch::Tensor& cond);

  std::vector<std::vector<BasicBlock>> blocks;  // processing order: deepest level first
  std::vector<torch::nn::Conv2d> up;

 private:
  UNetConfig cfg_;
};
TORCH_MODULE(Decoder);

struct UNetOutput {
  PairState features;
  LateralStash laterals;
};

class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(UNetConfig cfg = {});

  const UNetConfig& config() const { return cfg_; }

  /// Full PFE pass. `cond` is [B, L_c, d_cond]; `deltas`, when given, are
  /// added to the lateral snapshots and the middle output before decoding.
  UNetOutput forward_pair(const torch::Tensor& search_latent, const torch::Tensor& template_latent,
                          const torch::Tensor& cond, int t, const std::optional<LateralStash>& deltas = std::nullopt);

  /// Shapes the lateral stash takes for the given latent sizes (for checks).
  std::vector<std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>> stash_shapes(
      std::int64_t batch, std::int64_t hs, std::int64_t ws, std::int64_t ht, std::int64_t wt) const;

  TimestepEmbedding time{nullptr};
  Encoder enc{nullptr};
  MidBlock mid{nullptr};
  Decoder dec{nullptr};

 private:
  UNetConfig cfg_;
};
TORCH_MODULE(UNet);

/// The search stream of the UNet output, i.e. the tracking features.
torch::Tensor extract_tracking_features(const PairState& features);

/// Checks latent shapes against the configuration, naming the failing stage.
void check_latent_shapes(const UNetConfig& cfg, const torch::Tensor& search, const torch::Tensor& tmpl,
                         const char* stage);

}  // namespace lattrack

#include "lattrack/unet.hpp"

#include <cmath>

#include "lattrack/errors.hpp"

namespace lattrack {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

void UNetConfig::validate() const {
  require(latent_channels >= 1 && base_channels >= 1 && !channel_mult.empty(), ErrorKind::Config,
          "unet config needs positive widths and at least one level");
  require(blocks_per_level >= 1, ErrorKind::Config, "unet needs blocks_per_level >= 1");
  require(heads >= 1 && cond_dim >= 1 && time_dim >= 1, ErrorKind::Config, "unet heads/cond/time dims must be positive");
  for (int l = 0; l < levels(); ++l) {
    const int ch = level_channels(l);
    require(ch % heads == 0, ErrorKind::Config,
            "attention width " + std::to_string(ch) + " not divisible by " + std::to_string(heads) + " heads");
    require(ch % groups == 0, ErrorKind::Config, "level width not divisible by the GroupNorm group count");
  }
  require(base_channels % 2 == 0, ErrorKind::Config, "base_channels must be even (sinusoidal embedding)");
  require(feature_level >= -1 && feature_level < levels(), ErrorKind::Config, "feature_level outside the decoder");
}

json UNetConfig::to_json() const {
  return {{"latent_channels", latent_channels}, {"base_channels", base_channels}, {"channel_mult", channel_mult},
          {"blocks_per_level", blocks_per_level}, {"heads", heads}, {"cond_dim", cond_dim},
          {"time_dim", time_dim}, {"groups", groups}, {"ff_mult", ff_mult}, {"feature_level", feature_level}};
}

UNetConfig UNetConfig::from_json(const json& j) {
  UNetConfig c;
  c.latent_channels = j.at("latent_channels");
  c.base_channels = j.at("base_channels");
  c.channel_mult = j.at("channel_mult").get<std::vector<int>>();
  c.blocks_per_level = j.at("blocks_per_level");
  c.heads = j.at("heads");
  c.cond_dim = j.at("cond_dim");
  c.time_dim = j.at("time_dim");
  c.groups = j.at("groups");
  c.ff_mult = j.at("ff_mult");
  c.feature_level = j.at("feature_level");
  return c;
}

// ---------------------------------------------------------------------------
// ConcatL / DeConcatL

JointTokens concat_l(const torch::Tensor& search_tokens, const torch::Tensor& template_tokens) {
  require(search_tokens.dim() == 3 && template_tokens.dim() == 3, ErrorKind::Shape, "tokens must be [B, L, C]");
  require(search_tokens.size(0) == template_tokens.size(0), ErrorKind::Shape, "stream batch sizes differ");
  require(search_tokens.size(2) == template_tokens.size(2), ErrorKind::Shape,
          "stream channel widths differ (" + std::to_string(search_tokens.size(2)) + " vs " +
              std::to_string(template_tokens.size(2)) + ")");
  require(search_tokens.size(1) > 0 && template_tokens.size(1) > 0, ErrorKind::Shape, "empty token stream");
  return {torch::cat({search_tokens, template_tokens}, 1), {search_tokens.size(1), template_tokens.size(1)}};
}

PairState deconcat_l(const JointTokens& joint, const TokenSplit& split) {
  require(joint.tokens.dim() == 3, ErrorKind::Shape, "joint tokens must be [B, L, C]");
  require(split.search_len > 0 && split.template_len > 0, ErrorKind::Shape, "split lengths must be positive");
  require(joint.tokens.size(1) == split.search_len + split.template_len, ErrorKind::Shape,
          "joint length does not equal the split sum");
  require(split == joint.split, ErrorKind::Shape, "split differs from the recorded concatenation split");
  return {joint.tokens.narrow(1, 0, split.search_len), joint.tokens.narrow(1, split.search_len, split.template_len)};
}

torch::Tensor grid_to_tokens(const torch::Tensor& grid) { return grid.flatten(2).transpose(1, 2); }

torch::Tensor tokens_to_grid(const torch::Tensor& tokens, std::int64_t h, std::int64_t w) {
  return tokens.transpose(1, 2).reshape({tokens.size(0), tokens.size(2), h, w});
}

// ---------------------------------------------------------------------------
// Layers

TimestepEmbeddingImpl::TimestepEmbeddingImpl(int sinusoid_dim, int time_dim) : sinusoid_dim_(sinusoid_dim) {
  fc1 = register_module("fc1", nn::Linear(sinusoid_dim, time_dim));
  fc2 = register_module("fc2", nn::Linear(time_dim, time_dim));
}

torch::Tensor TimestepEmbeddingImpl::forward(int t) {
  const int half = sinusoid_dim_ / 2;
  auto freqs = torch::exp(torch::arange(half, torch::kFloat32) * (-std::log(10000.0) / half));
  auto args = freqs * static_cast<float>(t);
  auto emb = torch::cat({torch::cos(args), torch::sin(args)}).unsqueeze(0);
  return fc2(torch::silu(fc1(emb)));
}

ResBlockImpl::ResBlockImpl(int in, int out, int time_dim, int groups) {
  norm1 = register_module("norm1", nn::GroupNorm(nn::GroupNormOptions(groups, in)));
  conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)));
  time_proj = register_module("time_proj", nn::Linear(time_dim, out));
  norm2 = register_module("norm2", nn::GroupNorm(nn::GroupNormOptions(groups, out)));
  conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)));
  if (in != out) skip = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in, out, 1)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  auto h = conv1(torch::silu(norm1(x)));
  h = h + time_proj(torch::silu(temb)).unsqueeze(-1).unsqueeze(-1);
  h = conv2(torch::silu(norm2(h)));
  return (skip ? skip(x) : x) + h;
}

NormAttentionImpl::NormAttentionImpl(int dim, int context_dim, int heads) {
  norm = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({dim})));
  attn = register_module("attn", Attention(dim, context_dim, heads));
}

torch::Tensor NormAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& context) {
  return attn(norm(x), context);
}

torch::Tensor NormAttentionImpl::self_attend(const torch::Tensor& x) {
  auto h = norm(x);
  return attn(h, h);
}

BasicBlockImpl::BasicBlockImpl(int in, int out, const UNetConfig& cfg) : cond_dim_(cfg.cond_dim) {
  res = register_module("res", ResBlock(in, out, cfg.time_dim, cfg.groups));
  sa = register_module("sa", NormAttention(out, out, cfg.heads));
  ca = register_module("ca", NormAttention(out, cfg.cond_dim, cfg.heads));
  ff = register_module("ff", FeedForward(out, cfg.ff_mult));
}

PairState BasicBlockImpl::forward(const PairState& pair, const torch::Tensor& temb, const torch::Tensor& cond) {
  require(cond.dim() == 3 && cond.size(2) == cond_dim_, ErrorKind::Shape,
          "text condition width " + std::to_string(cond.dim() == 3 ? cond.size(2) : -1) + " != d_cond " +
              std::to_string(cond_dim_));
  auto s = res(pair.search, temb);
  auto g = res(pair.tmpl, temb);
  const auto hs = s.size(2), ws = s.size(3), ht = g.size(2), wt = g.size(3);

  auto joint = concat_l(grid_to_tokens(s), grid_to_tokens(g));
  joint.tokens = joint.tokens + sa->self_attend(joint.tokens);
  auto tokens = deconcat_l(joint, joint.split);

  auto st = tokens.search + ca(tokens.search, cond);
  auto gt = tokens.tmpl + ca(tokens.tmpl, cond);
  st = st + ff(st);
  gt = gt + ff(gt);
  return {tokens_to_grid(st, hs, ws), tokens_to_grid(gt, ht, wt)};
}

// ---------------------------------------------------------------------------
// Encoder / middle / decoder

namespace {

PairState apply_both(const PairState& p, const std::function<torch::Tensor(const torch::Tensor&)>& fn) {
  return {fn(p.search), fn(p.tmpl)};
}

}  // namespace

EncoderImpl::EncoderImpl(const UNetConfig& cfg) : cfg_(cfg) {
  stem = register_module("stem", nn::Conv2d(nn::Conv2dOptions(cfg.latent_channels, cfg.base_channels, 3).padding(1)));
  int ch = cfg.base_channels;
  for (int l = 0; l < cfg.levels(); ++l) {
    auto level = register_module(std::to_string(l), std::make_shared<nn::Module>());
    std::vector<BasicBlock> row;
    const int out = cfg.level_channels(l);
    for (int b = 0; b < cfg.blocks_per_level; ++b) {
      row.push_back(level->register_module(std::to_string(b), BasicBlock(b == 0 ? ch : out, out, cfg)));
    }
    blocks.push_back(row);
    if (l + 1 < cfg.levels())
      down.push_back(level->register_module("down", nn::Conv2d(nn::Conv2dOptions(out, out, 3).stride(2).padding(1))));
    ch = out;
  }
}

LateralStash EncoderImpl::forward(const PairState& latents, const torch::Tensor& temb, const torch::Tensor& cond) {
  LateralStash stash;
  auto h = apply_both(latents, [&](const torch::Tensor& x) { return stem(x); });
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    for (auto& block : blocks[l]) h = block(h, temb, cond);
    stash.push_back(h);
    if (l < down.size()) h = apply_both(h, [&](const torch::Tensor& x) { return down[l](x); });
  }
  return stash;
}

MidBlockImpl::MidBlockImpl(const UNetConfig& cfg) {
  const int ch = cfg.level_channels(cfg.levels() - 1);
  for (int b = 0; b < cfg.blocks_per_level; ++b) blocks.push_back(register_module(std::to_string(b), BasicBlock(ch, ch, cfg)));
}

PairState MidBlockImpl::forward(const PairState& pair, const torch::Tensor& temb, const torch::Tensor& cond) {
  auto h = pair;
  for (auto& block : blocks) h = block(h, temb, cond);
  return h;
}

DecoderImpl::DecoderImpl(const UNetConfig& cfg) : cfg_(cfg) {
  const int levels = cfg.levels();
  int h_ch = cfg.level_channels(levels - 1);
  for (int k = 0; k < levels; ++k) {
    const int l = levels - 1 - k;
    const int out = cfg.level_channels(l);
    auto level = register_module(std::to_string(k), std::make_shared<nn::Module>());
    std::vector<BasicBlock> row;
    for (int b = 0; b < cfg.blocks_per_level; ++b)
      row.push_back(level->register_module(std::to_string(b), BasicBlock(b == 0 ? h_ch + out : out, out, cfg)));
    blocks.push_back(row);
    if (l > 0) up.push_back(level->register_module("up", nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1))));
    h_ch = out;
  }
}

PairState DecoderImpl::forward(const LateralStash& stash, const torch::Tensor& temb, const torch::Tensor& cond) {
  const int levels = cfg_.levels();
  PairState h = stash.back();
  for (int k = 0; k <= cfg_.tap_level(); ++k) {
    const int l = levels - 1 - k;
    const auto& lateral = stash[static_cast<std::size_t>(l)];
    if (h.search.sizes().slice(2) != lateral.search.sizes().slice(2) ||
        h.tmpl.sizes().slice(2) != lateral.tmpl.sizes().slice(2))
      fail(ErrorKind::Shape, "decoder level " + std::to_string(k) + ": lateral grid does not match");
    h = {torch::cat({h.search, lateral.search}, 1), torch::cat({h.tmpl, lateral.tmpl}, 1)};
    for (auto& block : blocks[static_cast<std::size_t>(k)]) h = block(h, temb, cond);
    if (k < cfg_.tap_level()) {
      auto& conv = up[static_cast<std::size_t>(k)];
      h = apply_both(h, [&](const torch::Tensor& x) {
        return conv(F::interpolate(x, F::InterpolateFuncOptions()
                                          .scale_factor(std::vector<double>{2.0, 2.0})
                                          .mode(torch::kNearest)));
      });
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// UNet

void check_latent_shapes(const UNetConfig& cfg, const torch::Tensor& search, const torch::Tensor& tmpl,
                         const char* stage) {
  const std::string where = std::string(stage) + ": ";
  require(search.dim() == 4 && tmpl.dim() == 4, ErrorKind::Shape, where + "latents must be [B, C, H, W]");
  require(search.size(0) == tmpl.size(0), ErrorKind::Shape, where + "search/template batch sizes differ");
  require(search.size(1) == cfg.latent_channels && tmpl.size(1) == cfg.latent_channels, ErrorKind::Shape,
          where + "latent channels != C_z (" + std::to_string(cfg.latent_channels) + ")");
  const std::int64_t div = std::int64_t{1} << (cfg.levels() - 1);
  for (auto d : {search.size(2), search.size(3), tmpl.size(2), tmpl.size(3)})
    require(d % div == 0 && d / div >= 1, ErrorKind::Shape,
            where + "latent grid " + std::to_string(d) + " not divisible by " + std::to_string(div));
}

UNetImpl::UNetImpl(UNetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  time = register_module("time", TimestepEmbedding(cfg_.base_channels, cfg_.time_dim));
  enc = register_module("enc", Encoder(cfg_));
  mid = register_module("mid", MidBlock(cfg_));
  dec = register_module("dec", Decoder(cfg_));
}

std::vector<std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>> UNetImpl::stash_shapes(
    std::int64_t batch, std::int64_t hs, std::int64_t ws, std::int64_t ht, std::int64_t wt) const {
  std::vector<std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>> out;
  for (int l = 0; l < cfg_.levels(); ++l) {
    const std::int64_t ch = cfg_.level_channels(l);
    const std::int64_t d = std::int64_t{1} << l;
    out.push_back({{batch, ch, hs / d, ws / d}, {batch, ch, ht / d, wt / d}});
  }
  out.push_back(out.back());
  return out;
}

UNetOutput UNetImpl::forward_pair(const torch::Tensor& search_latent, const torch::Tensor& template_latent,
                                  const torch::Tensor& cond, int t, const std::optional<LateralStash>& deltas) {
  check_latent_shapes(cfg_, search_latent, template_latent, "unet input");
  require(cond.dim() == 3 && cond.size(0) == search_latent.size(0), ErrorKind::Shape,
          "text condition must be [B, L_c, d_cond] with the latent batch size");
  auto temb = time(t);
  auto stash = enc(PairState{search_latent, template_latent}, temb, cond);
  stash.push_back(mid(stash.back(), temb, cond));

  UNetOutput out;
  out.laterals = stash;
  if (deltas) {
    require(deltas->size() == stash.size(), ErrorKind::Shape, "injected deltas do not match the lateral stash length");
    for (std::size_t i = 0; i < stash.size(); ++i) {
      const auto& d = (*deltas)[i];
      require(d.search.sizes() == stash[i].search.sizes() && d.tmpl.sizes() == stash[i].tmpl.sizes(),
              ErrorKind::Shape, "injected delta " + std::to_string(i) + " does not match the lateral shape");
      stash[i] = {stash[i].search + d.search, stash[i].tmpl + d.tmpl};
    }
  }
  out.features = dec(stash, temb, cond);
  return out;
}

torch::Tensor extract_tracking_features(const PairState& features) { return features.search; }

}  // namespace lattrack

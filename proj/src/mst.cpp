#include "lattrack/mst.hpp"

#include "lattrack/errors.hpp"

namespace lattrack {

namespace nn = torch::nn;

std::string to_string(SubScope s) {
  switch (s) {
    case SubScope::Depth: return "depth";
    case SubScope::Thermal: return "thermal";
    case SubScope::Event: return "event";
    case SubScope::Generalist: return "generalist";
  }
  return "generalist";
}

SubScope scope_from_string(const std::string& s) {
  if (s == "depth") return SubScope::Depth;
  if (s == "thermal") return SubScope::Thermal;
  if (s == "event") return SubScope::Event;
  if (s == "generalist") return SubScope::Generalist;
  fail(ErrorKind::Config, "unknown sub-module scope '" + s + "'");
}

SubModuleImpl::SubModuleImpl(const UNetConfig& cfg, SubScope scope, SubModuleOptions opts)
    : scope_(scope), opts_(opts) {
  enc = register_module("enc", Encoder(cfg));
  mid = register_module("mid", MidBlock(cfg));
  auto sites = register_module("zconv", std::make_shared<nn::Module>());
  for (int l = 0; l <= cfg.levels(); ++l) {
    const int ch = cfg.level_channels(std::min(l, cfg.levels() - 1));
    auto conv = sites->register_module(std::to_string(l), nn::Conv2d(nn::Conv2dOptions(ch, ch, 1)));
    torch::NoGradGuard g;
    if (opts.no_zero_init) {
      conv->weight.normal_(0.0, opts.no_zero_init_std);
      conv->bias.normal_(0.0, opts.no_zero_init_std);
    } else {
      conv->weight.zero_();
      conv->bias.zero_();
    }
    zconv.push_back(conv);
  }
}

namespace {

void copy_params(const nn::Module& src, nn::Module& dst) {
  torch::NoGradGuard g;
  auto from = src.named_parameters(true);
  for (auto& p : dst.named_parameters(true)) p.value().copy_(from[p.key()]);
  auto bufs = src.named_buffers(true);
  for (auto& b : dst.named_buffers(true)) b.value().copy_(bufs[b.key()]);
}

}  // namespace

SubModule clone_submodule(UNet& unet, SubScope scope, SubModuleOptions opts) {
  SubModule sub(unet->config(), scope, opts);
  copy_params(*unet->enc, *sub->enc);
  copy_params(*unet->mid, *sub->mid);
  return sub;
}

InjectionDeltas submodule_forward(const torch::Tensor& aux_search, const torch::Tensor& aux_template,
                                  const torch::Tensor& cond, int t, UNet& unet, SubModule& sub,
                                  const torch::Tensor& rgb_search, const torch::Tensor& rgb_template) {
  check_latent_shapes(unet->config(), aux_search, aux_template, "sub-module input");
  auto s = aux_search;
  auto g = aux_template;
  if (sub->options().ingest_rgb) {
    require(rgb_search.defined() && rgb_template.defined(), ErrorKind::Config,
            "sub-module configured to ingest RGB latents but none were given");
    require(rgb_search.sizes() == s.sizes() && rgb_template.sizes() == g.sizes(), ErrorKind::Shape,
            "auxiliary and RGB latent shapes differ");
    s = s + rgb_search;
    g = g + rgb_template;
  }
  auto temb = unet->time(t);
  auto stash = sub->enc(PairState{s, g}, temb, cond);
  stash.push_back(sub->mid(stash.back(), temb, cond));
  InjectionDeltas deltas;
  for (std::size_t i = 0; i < stash.size(); ++i)
    deltas.push_back({sub->zconv[i](stash[i].search), sub->zconv[i](stash[i].tmpl)});
  return deltas;
}

PairState fused_forward(const torch::Tensor& rgb_search, const torch::Tensor& rgb_template,
                        const torch::Tensor& aux_search, const torch::Tensor& aux_template, const torch::Tensor& cond,
                        int t, UNet& unet, SubModule& sub) {
  require(aux_search.sizes() == rgb_search.sizes() && aux_template.sizes() == rgb_template.sizes(), ErrorKind::Shape,
          "auxiliary latents must match the RGB latent shapes");
  auto deltas = submodule_forward(aux_search, aux_template, cond, t, unet, sub, rgb_search, rgb_template);
  return unet->forward_pair(rgb_search, rgb_template, cond, t, deltas).features;
}

}  // namespace lattrack

#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "lattrack/unet.hpp"

namespace lattrack {

enum class SubScope { Depth, Thermal, Event, Generalist };

std::string to_string(SubScope s);
SubScope scope_from_string(const std::string& s);

struct SubModuleOptions {
  /// Initialize the injection convolutions with small random values instead
  /// of zeros ("w/o zero init" ablation).
  bool no_zero_init = false;
  double no_zero_init_std = 1e-2;
  /// Also feed the RGB latents (added to the auxiliary latents) into the
  /// sub-module. Off by default: the sub-module sees auxiliary latents only.
  bool ingest_rgb = false;
};

/// Per-site additive deltas for both streams, shaped like the lateral stash.
using InjectionDeltas = LateralStash;

/// Cloned encoder + middle block plus one 1x1 injection convolution per
/// lateral site (every encoder level and the middle output).
class SubModuleImpl : public torch::nn::Module {
 public:
  SubModuleImpl(const UNetConfig& cfg, SubScope scope, SubModuleOptions opts = {});

  SubScope scope() const { return scope_; }
  const SubModuleOptions& options() const { return opts_; }
  std::size_t sites() const { return zconv.size(); }

  Encoder enc{nullptr};
  MidBlock mid{nullptr};
  std::vector<torch::nn::Conv2d> zconv;

 private:
  SubScope scope_;
  SubModuleOptions opts_;
};
TORCH_MODULE(SubModule);

/// Deep copy of the UNet encoder + middle parameters with fresh injection
/// convolutions (all-zero unless opts.no_zero_init).
SubModule clone_submodule(UNet& unet, SubScope scope, SubModuleOptions opts = {});

/// Runs the auxiliary pair through the cloned encoder + middle block (same
/// joint-attention dataflow) and maps each snapshot through its injection conv.
InjectionDeltas submodule_forward(const torch::Tensor& aux_search, const torch::Tensor& aux_template,
                                  const torch::Tensor& cond, int t, UNet& unet, SubModule& sub,
                                  const torch::Tensor& rgb_search = {}, const torch::Tensor& rgb_template = {});

/// RGB UNet pass with the sub-module's deltas injected into its laterals.
PairState fused_forward(const torch::Tensor& rgb_search, const torch::Tensor& rgb_template,
                        const torch::Tensor& aux_search, const torch::Tensor& aux_template, const torch::Tensor& cond,
                        int t, UNet& unet, SubModule& sub);

}  // namespace lattrack

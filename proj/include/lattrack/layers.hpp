#pragma once

#include <torch/torch.h>

namespace lattrack {

/// Multi-head attention without positional terms: queries from `x`, keys and
/// values from `context` ([B, L, C] and [B, M, C_ctx]).
class AttentionImpl : public torch::nn::Module {
 public:
  AttentionImpl(int dim, int context_dim, int heads);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context);

  torch::nn::Linear q{nullptr}, k{nullptr}, v{nullptr}, out{nullptr};

 private:
  int heads_;
};
TORCH_MODULE(Attention);

class FeedForwardImpl : public torch::nn::Module {
 public:
  FeedForwardImpl(int dim, int mult);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(FeedForward);

}  // namespace lattrack
